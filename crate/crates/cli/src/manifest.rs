//! Dataset manifests and clip loading.

use std::fs;
use std::path::{Path, PathBuf};

use rvq_motion::motion::synth::{generate_synthetic, style_name, CONTENT_NAMES, STYLE_NAMES};
use rvq_motion::motion::io::{clip_to_string, load_clip};
use rvq_motion::motion::MotionClip;
use rvq_motion::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub frames: usize,
    pub train_styles: Vec<String>,
    /// Styles that never appear in the train or test splits.
    pub unseen_styles: Vec<String>,
    pub clips: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub file: String,
    pub content: String,
    pub style: String,
    /// "train", "test" or "unseen".
    pub split: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub contents: usize,
    pub styles: usize,
    pub unseen_styles: usize,
    pub clips_per_pair: usize,
    pub test_per_pair: usize,
    pub frames: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.contents == 0 || self.contents > CONTENT_NAMES.len() {
            return bad(format!("contents must be 1..={}, got {}", CONTENT_NAMES.len(), self.contents));
        }
        if self.styles == 0 || self.styles + self.unseen_styles > STYLE_NAMES.len() {
            return bad(format!(
                "styles + unseen styles must be 1..={}, got {} + {}",
                STYLE_NAMES.len(),
                self.styles,
                self.unseen_styles
            ));
        }
        if self.clips_per_pair == 0 || self.frames == 0 {
            return bad("clips per pair and frames must be positive".into());
        }
        if self.test_per_pair >= self.clips_per_pair {
            return bad(format!(
                "test clips per pair ({}) must leave at least one training clip of {}",
                self.test_per_pair, self.clips_per_pair
            ));
        }
        Ok(())
    }
}

fn clip_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// All clips and their manifest, generated in memory.
pub fn synthesize(spec: &SynthSpec) -> Result<(Manifest, Vec<(ManifestEntry, MotionClip)>)> {
    spec.validate()?;
    let mut out = Vec::new();
    for style in 0..spec.styles + spec.unseen_styles {
        let unseen = style >= spec.styles;
        for content in 0..spec.contents {
            for k in 0..spec.clips_per_pair {
                let seed = clip_seed(spec.seed, out.len());
                let clip = generate_synthetic(content, style, spec.frames, seed)?;
                let split = if unseen {
                    "unseen"
                } else if k >= spec.clips_per_pair - spec.test_per_pair {
                    "test"
                } else {
                    "train"
                };
                let entry = ManifestEntry {
                    file: format!("{}_{}_{k:03}.mqm", CONTENT_NAMES[content], style_name(style)?),
                    content: CONTENT_NAMES[content].to_string(),
                    style: style_name(style)?.to_string(),
                    split: split.to_string(),
                    seed,
                };
                out.push((entry, clip));
            }
        }
    }
    let manifest = Manifest {
        version: 1,
        seed: spec.seed,
        frames: spec.frames,
        train_styles: STYLE_NAMES[..spec.styles].iter().map(|s| s.to_string()).collect(),
        unseen_styles: STYLE_NAMES[spec.styles..spec.styles + spec.unseen_styles]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        clips: out.iter().map(|(e, _)| e.clone()).collect(),
    };
    Ok((manifest, out))
}

/// Generates and serialises everything before touching `dir`.
pub fn write_synthetic(dir: &Path, spec: &SynthSpec) -> Result<Manifest> {
    let (manifest, clips) = synthesize(spec)?;
    let texts = clips
        .iter()
        .map(|(e, c)| Ok((e.file.clone(), clip_to_string(c)?)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (file, text) in texts {
        let path = dir.join(file);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        frame: None,
        message: e.to_string(),
    })
}

/// Clips of `split` from a manifest, or every `.mqm` file of a directory
/// in name order.
pub fn load_dataset(data: &Path, split: &str) -> Result<Vec<MotionClip>> {
    let files: Vec<PathBuf> = if data.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(data)
            .map_err(|e| Error::io(data, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "mqm"))
            .collect();
        v.sort();
        v
    } else {
        let manifest = read_manifest(data)?;
        let root = data.parent().unwrap_or(Path::new("."));
        manifest
            .clips
            .iter()
            .filter(|c| split == "all" || c.split == split)
            .map(|c| root.join(&c.file))
            .collect()
    };
    if files.is_empty() {
        return Err(Error::Config(format!("no clips for split {split:?} in {}", data.display())));
    }
    files.iter().map(load_clip).collect()
}
