//! Latent-space editing on a trained codec: every operation encodes with
//! all books, recombines per-layer codes and decodes once.

use std::ops::Range;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::CodecModel;
use crate::error::{Error, Result};
use crate::motion::{assemble_features, disassemble_features, MotionClip};
use crate::rvq::{residual_encode, QuantizationTrace};

/// A clip's per-layer codes, padded by repeating the last frame up to a
/// multiple of the downsampling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedClip {
    pub trace: QuantizationTrace,
    /// Frames of the original clip.
    pub frames: usize,
    pub fps: f64,
    pub label: Option<String>,
}

impl EncodedClip {
    pub fn slots(&self) -> usize {
        self.trace.slots()
    }

    pub fn layer(&self, i: usize) -> &Array2<f64> {
        &self.trace.codes[i]
    }
}

pub fn encode_clip(model: &CodecModel, clip: &MotionClip) -> Result<EncodedClip> {
    if clip.is_empty() {
        return Err(Error::Structural("cannot encode an empty clip".into()));
    }
    let x = model.normalize_clip(clip)?;
    let f = model.config.downsample_factor;
    let t = x.nrows();
    let padded = t.div_ceil(f) * f;
    let x = if padded == t {
        x
    } else {
        let last = x.row(t - 1).insert_axis(Axis(0)).to_owned();
        let pad = ndarray::stack(Axis(0), &vec![last.row(0); padded - t]).expect("same width");
        concatenate(Axis(0), &[x.view(), pad.view()]).expect("same width")
    };
    let trace = residual_encode(&model.stack, model.encode(x.view())?.view(), model.n_books())?;
    Ok(EncodedClip {
        trace,
        frames: t,
        fps: clip.fps,
        label: clip.style_label.clone(),
    })
}

fn check_cutoff(model: &CodecModel, s: usize) -> Result<()> {
    let n = model.n_books();
    if s == 0 || s >= n {
        return Err(Error::Config(format!("content cutoff {s} must lie in [1, {n})")));
    }
    Ok(())
}

/// Decodes `z` and keeps the first `frames` frames.
fn decode(model: &CodecModel, z: &Array2<f64>, frames: usize, fps: f64, label: Option<String>) -> Result<MotionClip> {
    let y = model.decode(z.view())?;
    let y = model.normalizer.denormalize(y.slice(s![..frames.min(y.nrows()), ..]));
    disassemble_features(&model.skeleton, y.view(), fps, label)
}

/// `Σ_i w_i z_i`, accumulated in layer order; zero weights are skipped so
/// that unit/zero weightings reproduce plain partial sums bit for bit.
fn weighted_sum(codes: &[&Array2<f64>], weights: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(codes[0].raw_dim());
    for (z, &w) in codes.iter().zip(weights) {
        if w == 1.0 {
            out += *z;
        } else if w != 0.0 {
            out.scaled_add(w, *z);
        }
    }
    out
}

/// Style-layer codes of one clip, layers `s..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCodeBlock {
    /// `codes[i - s]` is `[K, d]` for layer `i`.
    pub codes: Vec<Array2<f64>>,
    pub indices: Vec<Vec<usize>>,
    pub source: Option<String>,
    pub layers: Range<usize>,
}

impl StyleCodeBlock {
    pub fn from_encoded(e: &EncodedClip, s: usize) -> Self {
        let n = e.trace.depth();
        Self {
            codes: (s..n).map(|i| e.trace.codes[i].clone()).collect(),
            indices: (s..n).map(|i| e.trace.indices[i].clone()).collect(),
            source: e.label.clone(),
            layers: s..n,
        }
    }

    pub fn slots(&self) -> usize {
        self.codes.first().map_or(0, |c| c.nrows())
    }

    /// Cyclic tiling when shorter than `k` slots, truncation when longer.
    pub fn aligned(&self, k: usize) -> Self {
        let src = self.slots();
        let pick = |a: &Array2<f64>| Array2::from_shape_fn((k, a.ncols()), |(r, c)| a[[r % src, c]]);
        Self {
            codes: self.codes.iter().map(pick).collect(),
            indices: self
                .indices
                .iter()
                .map(|v| (0..k).map(|r| v[r % src]).collect())
                .collect(),
            source: self.source.clone(),
            layers: self.layers.clone(),
        }
    }
}

fn with_style(content: &EncodedClip, style: &StyleCodeBlock) -> Array2<f64> {
    let s = style.layers.start;
    let mut codes: Vec<&Array2<f64>> = (0..s).map(|i| content.layer(i)).collect();
    codes.extend(style.codes.iter());
    weighted_sum(&codes, &vec![1.0; codes.len()])
}

/// Content codes of `content` with style codes of `style` (Quantized Code
/// Swapping). Output has the content clip's length.
pub fn code_swap_transfer(model: &CodecModel, content: &MotionClip, style: &MotionClip, s: usize) -> Result<MotionClip> {
    check_cutoff(model, s)?;
    let c = encode_clip(model, content)?;
    let st = StyleCodeBlock::from_encoded(&encode_clip(model, style)?, s).aligned(c.slots());
    decode(model, &with_style(&c, &st), c.frames, c.fps, style.style_label.clone())
}

/// `decode(Σ_{i<s} z_i + α Σ_{i≥s} z_i)`.
pub fn style_interpolation(model: &CodecModel, clip: &MotionClip, alpha: f64, s: usize) -> Result<MotionClip> {
    if !(0.0..=1.0).contains(&alpha) {
        log::warn!("style weight {alpha} lies outside [0, 1]; extrapolating");
    }
    scaled_style(model, clip, alpha, s)
}

fn scaled_style(model: &CodecModel, clip: &MotionClip, alpha: f64, s: usize) -> Result<MotionClip> {
    if !alpha.is_finite() {
        return Err(Error::Config(format!("style weight must be finite, got {alpha}")));
    }
    check_cutoff(model, s)?;
    let e = encode_clip(model, clip)?;
    let n = model.n_books();
    let codes: Vec<_> = (0..n).map(|i| e.layer(i)).collect();
    let w: Vec<f64> = (0..n).map(|i| if i < s { 1.0 } else { alpha }).collect();
    let label = if alpha == 1.0 { clip.style_label.clone() } else { None };
    decode(model, &weighted_sum(&codes, &w), e.frames, e.fps, label)
}

/// Decoding from the content books alone.
pub fn content_extract(model: &CodecModel, clip: &MotionClip, s: usize) -> Result<MotionClip> {
    scaled_style(model, clip, 0.0, s)
}

/// Subtracts the style codes instead of adding them.
pub fn style_inversion(model: &CodecModel, clip: &MotionClip, s: usize) -> Result<MotionClip> {
    scaled_style(model, clip, -1.0, s)
}

/// Full reconstruction through all books, at the clip's own length.
pub fn reconstruct(model: &CodecModel, clip: &MotionClip) -> Result<MotionClip> {
    let e = encode_clip(model, clip)?;
    let codes: Vec<_> = (0..model.n_books()).map(|i| e.layer(i)).collect();
    decode(model, &weighted_sum(&codes, &vec![1.0; codes.len()]), e.frames, e.fps, clip.style_label.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSegment {
    /// Index into the list of style clips.
    pub style: usize,
    /// Latent slots `start..end` of the content clip.
    pub start: usize,
    pub end: usize,
}

/// Style source per span of latent slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionScript {
    #[serde(rename = "segment")]
    pub segments: Vec<TransitionSegment>,
}

impl TransitionScript {
    /// Spans must be non-empty, contiguous, start at 0 and end at `slots`.
    pub fn validate(&self, slots: usize, style_clips: usize) -> Result<()> {
        let mut at = 0;
        if self.segments.is_empty() {
            return Err(Error::Structural("transition script has no segments".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.start != at {
                return Err(Error::Structural(format!(
                    "segment {i} starts at slot {} but the previous one ends at {at}",
                    seg.start
                )));
            }
            if seg.end <= seg.start {
                return Err(Error::Structural(format!("segment {i} is empty")));
            }
            if seg.style >= style_clips {
                return Err(Error::Structural(format!(
                    "segment {i} names style clip {} of {style_clips}",
                    seg.style
                )));
            }
            at = seg.end;
        }
        if at != slots {
            return Err(Error::Structural(format!(
                "segments cover slots 0..{at}, the content clip has {slots}"
            )));
        }
        Ok(())
    }

    pub fn single(style: usize, slots: usize) -> Self {
        Self {
            segments: vec![TransitionSegment { style, start: 0, end: slots }],
        }
    }
}

/// Number of latent slots a clip of `frames` frames encodes to.
pub fn slot_count(model: &CodecModel, frames: usize) -> usize {
    frames.div_ceil(model.config.downsample_factor)
}

/// Per-slot style codes chosen by segment; one decode over the whole clip.
pub fn style_transition(
    model: &CodecModel,
    content: &MotionClip,
    styles: &[MotionClip],
    script: &TransitionScript,
    s: usize,
) -> Result<MotionClip> {
    check_cutoff(model, s)?;
    let c = encode_clip(model, content)?;
    let k = c.slots();
    script.validate(k, styles.len())?;
    let blocks = styles
        .iter()
        .map(|st| Ok(StyleCodeBlock::from_encoded(&encode_clip(model, st)?, s).aligned(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut mixed = blocks[script.segments[0].style].clone();
    for seg in &script.segments {
        for (dst, src) in mixed.codes.iter_mut().zip(&blocks[seg.style].codes) {
            dst.slice_mut(s![seg.start..seg.end, ..])
                .assign(&src.slice(s![seg.start..seg.end, ..]));
        }
    }
    decode(model, &with_style(&c, &mixed), c.frames, c.fps, None)
}

/// Concatenates both clips' full latents along time and decodes once.
/// An empty clip contributes nothing.
pub fn motion_blend(model: &CodecModel, a: &MotionClip, b: &MotionClip) -> Result<MotionClip> {
    let parts: Vec<&MotionClip> = [a, b].into_iter().filter(|c| !c.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::Structural("cannot blend two empty clips".into()));
    }
    let encoded = parts.iter().map(|c| encode_clip(model, c)).collect::<Result<Vec<_>>>()?;
    let sums: Vec<Array2<f64>> = encoded
        .iter()
        .map(|e| {
            let codes: Vec<_> = (0..model.n_books()).map(|i| e.layer(i)).collect();
            weighted_sum(&codes, &vec![1.0; codes.len()])
        })
        .collect();
    let views: Vec<_> = sums.iter().map(|z| z.view()).collect();
    let z = concatenate(Axis(0), &views).expect("same latent width");
    let y = model.normalizer.denormalize(model.decode(z.view())?.view());
    // Drop the padding frames of each part.
    let f = model.config.downsample_factor;
    let mut rows = Vec::new();
    let mut offset = 0;
    for e in &encoded {
        rows.extend(offset..offset + e.frames);
        offset += e.slots() * f;
    }
    let y = y.select(Axis(0), &rows);
    disassemble_features(&model.skeleton, y.view(), parts[0].fps, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub clip: MotionClip,
    /// Sampled index per style layer (outer) and slot (inner).
    pub style_indices: Vec<Vec<usize>>,
}

/// Keeps the content codes and, for every run of `segment_slots` slots,
/// draws each style layer's code uniformly from its book.
pub fn random_style_augmentation(
    model: &CodecModel,
    content: &MotionClip,
    s: usize,
    segment_slots: usize,
    rng: &mut impl Rng,
) -> Result<Augmented> {
    check_cutoff(model, s)?;
    if segment_slots == 0 {
        return Err(Error::Config("segment length must be at least one slot".into()));
    }
    let c = encode_clip(model, content)?;
    let k = c.slots();
    let n = model.n_books();
    let mut block = StyleCodeBlock::from_encoded(&c, s);
    for (li, layer) in (s..n).enumerate() {
        let book = &model.stack.books[layer];
        let mut start = 0;
        while start < k {
            let idx = rng.random_range(0..book.size());
            for slot in start..(start + segment_slots).min(k) {
                block.codes[li].row_mut(slot).assign(&book.codes.row(idx));
                block.indices[li][slot] = idx;
            }
            start += segment_slots;
        }
    }
    let clip = decode(model, &with_style(&c, &block), c.frames, c.fps, None)?;
    Ok(Augmented {
        clip,
        style_indices: block.indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StyleSource {
    #[default]
    A,
    B,
}

/// `(1−β)·content(A) + β·content(B)` with the style codes of `style_from`.
pub fn content_interpolation(
    model: &CodecModel,
    a: &MotionClip,
    b: &MotionClip,
    beta: f64,
    s: usize,
    style_from: StyleSource,
) -> Result<MotionClip> {
    check_cutoff(model, s)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("content weight {beta} outside [0, 1]")));
    }
    let ea = encode_clip(model, a)?;
    let eb = encode_clip(model, b)?;
    if ea.slots() != eb.slots() {
        return Err(Error::Structural(format!(
            "clips encode to {} and {} slots; content interpolation needs equal lengths",
            ea.slots(),
            eb.slots()
        )));
    }
    let n = model.n_books();
    let mut z = Array2::zeros(ea.layer(0).raw_dim());
    for i in 0..s {
        let mixed = ea.layer(i) * (1.0 - beta) + eb.layer(i) * beta;
        z += &mixed;
    }
    let (src, label) = match style_from {
        StyleSource::A => (&ea, a.style_label.clone()),
        StyleSource::B => (&eb, b.style_label.clone()),
    };
    for i in s..n {
        z += src.layer(i);
    }
    decode(model, &z, ea.frames, ea.fps, label)
}

/// Feature-space distance between two clips of equal shape (RMS per value).
pub fn feature_distance(a: &MotionClip, b: &MotionClip) -> Result<f64> {
    let fa = assemble_features(a)?;
    let fb = assemble_features(b)?;
    if fa.dim() != fb.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", fa.dim(), fb.dim())));
    }
    Ok(((&fa - &fb).mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CodecConfig, Trainer};
    use crate::motion::synth::generate_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn model() -> &'static CodecModel {
        static M: OnceLock<CodecModel> = OnceLock::new();
        M.get_or_init(|| {
            let mut cfg = CodecConfig::profile("synthetic").unwrap();
            cfg.latent_dim = 8;
            cfg.conv_feature = 12;
            cfg.codes_per_book = 8;
            cfg.n_books = 3;
            cfg.window_len = 16;
            cfg.batch_size = 4;
            let clips: Vec<_> = (0..2).map(|s| generate_synthetic(s, s, 48, 3).unwrap()).collect();
            let mut t = Trainer::new(cfg, &clips).unwrap();
            t.train(5, |_| {}).unwrap();
            t.model
        })
    }

    fn clip(c: usize, s: usize, t: usize) -> MotionClip {
        let mut clip = generate_synthetic(c, s, t.max(1), 17).unwrap();
        clip.frames.truncate(t);
        clip
    }

    #[test]
    fn identities_are_bit_exact() {
        let m = model();
        let a = clip(0, 1, 32);
        let rec = reconstruct(m, &a).unwrap();
        assert_eq!(code_swap_transfer(m, &a, &a, 1).unwrap().frames, rec.frames);
        assert_eq!(style_interpolation(m, &a, 1.0, 1).unwrap().frames, rec.frames);
        assert_eq!(
            style_interpolation(m, &a, 0.0, 2).unwrap().frames,
            content_extract(m, &a, 2).unwrap().frames
        );
        assert_eq!(motion_blend(m, &a, &clip(0, 0, 0)).unwrap().frames, rec.frames);
        assert_eq!(
            content_interpolation(m, &a, &clip(1, 2, 32), 0.0, 1, StyleSource::A).unwrap().frames,
            rec.frames
        );
    }

    #[test]
    fn transition_reduces_to_transfer() {
        let m = model();
        let a = clip(0, 1, 32);
        let b = clip(2, 3, 20);
        let swap = code_swap_transfer(m, &a, &b, 1).unwrap();
        let k = slot_count(m, 32);
        let one = style_transition(m, &a, std::slice::from_ref(&b), &TransitionScript::single(0, k), 1).unwrap();
        assert_eq!(one.frames, swap.frames);
        let two = TransitionScript {
            segments: vec![
                TransitionSegment { style: 0, start: 0, end: 3 },
                TransitionSegment { style: 1, start: 3, end: k },
            ],
        };
        let same = style_transition(m, &a, &[b.clone(), b.clone()], &two, 1).unwrap();
        assert_eq!(same.frames, swap.frames);
        let gap = TransitionScript {
            segments: vec![
                TransitionSegment { style: 0, start: 0, end: 3 },
                TransitionSegment { style: 0, start: 4, end: k },
            ],
        };
        assert!(matches!(style_transition(m, &a, &[b], &gap, 1), Err(Error::Structural(_))));
    }

    #[test]
    fn lengths_follow_inputs() {
        let m = model();
        let a = clip(0, 1, 30);
        let b = clip(1, 2, 17);
        assert_eq!(code_swap_transfer(m, &a, &b, 1).unwrap().len(), 30);
        assert_eq!(motion_blend(m, &a, &b).unwrap().len(), 47);
        assert!(matches!(
            code_swap_transfer(m, &clip(0, 0, 0), &b, 1),
            Err(Error::Structural(_))
        ));
        assert!(matches!(code_swap_transfer(m, &a, &b, 3), Err(Error::Config(_))));
        assert!(matches!(
            content_interpolation(m, &a, &b, 0.5, 1, StyleSource::A),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn style_block_alignment() {
        let m = model();
        let e = encode_clip(m, &clip(1, 1, 12)).unwrap();
        let blk = StyleCodeBlock::from_encoded(&e, 1);
        assert_eq!(blk.slots(), 3);
        let long = blk.aligned(7);
        assert_eq!(long.indices[0], [0, 1, 2, 0, 1, 2, 0].map(|i| blk.indices[0][i]));
        assert_eq!(long.codes[1].row(5), blk.codes[1].row(2));
        assert_eq!(blk.aligned(2).codes[0], blk.codes[0].slice(s![0..2, ..]));
    }

    #[test]
    fn augmentation_keeps_content_and_is_seeded() {
        let m = model();
        let a = clip(3, 0, 32);
        let run = |seed| random_style_augmentation(m, &a, 1, 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = run(5);
        assert_eq!(x, run(5));
        assert_ne!(x.style_indices, run(6).style_indices);
        for layer in &x.style_indices {
            assert!(layer.chunks(2).all(|c| c.iter().all(|&i| i == c[0])));
        }
    }

    #[test]
    fn inversion_without_style_is_extraction() {
        let m = model();
        let a = clip(0, 2, 16);
        let e = encode_clip(m, &a).unwrap();
        let n = m.n_books();
        // With every style code zero, α has no effect.
        if (1..n).all(|i| e.layer(i).iter().all(|&v| v == 0.0)) {
            assert_eq!(style_inversion(m, &a, 1).unwrap().frames, content_extract(m, &a, 1).unwrap().frames);
        }
        let codes: Vec<_> = (0..n).map(|i| e.layer(i)).collect();
        let mut zeroed = codes.clone();
        let zero = Array2::zeros(e.layer(0).raw_dim());
        for z in zeroed.iter_mut().skip(1) {
            *z = &zero;
        }
        assert_eq!(weighted_sum(&zeroed, &[1.0, -1.0, -1.0]), weighted_sum(&zeroed, &[1.0, 0.0, 0.0]));
    }
}
