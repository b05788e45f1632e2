//! Training run configuration.

use std::path::{Path, PathBuf};

use rvq_motion::codec::CodecConfig;
use rvq_motion::{Error, Result};
use serde::Deserialize;

/// ```toml
/// profile = "synthetic"
/// data = "data/manifest.json"   # relative to this file
/// split = "train"
/// out_dir = "runs/synthetic"
/// steps = 2000
/// checkpoint_every = 500
///
/// [codec]                        # optional overrides of profile fields
/// seed = 7
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    pub data: PathBuf,
    #[serde(default = "default_split")]
    pub split: String,
    pub out_dir: PathBuf,
    pub steps: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub codec: Option<toml::Table>,
}

fn default_split() -> String {
    "train".into()
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("run configuration: {}", e.message())))?;
        if cfg.data.is_relative() {
            cfg.data = base.join(&cfg.data);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn codec_config(&self) -> Result<CodecConfig> {
        CodecConfig::from_toml_overrides(&self.profile, self.codec.as_ref())
    }
}
