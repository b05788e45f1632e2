use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::config::CodecConfig;
use crate::error::{Error, Result};
use crate::motion::{assemble_features, disassemble_features, MotionClip, Normalizer, Skeleton};
use crate::nn::{
    leaky_relu, leaky_relu_backward, Conv1d, ConvCache, ConvTranspose1d, ConvTransposeCache, Param,
    ResBlock, ResBlockCache,
};
use crate::rvq::{residual_encode, sum_codes, QuantizationTrace, RvqStack};

/// Strided 1-D convolutional encoder: `[F, B, T] → [d, B, T/factor]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub input: Conv1d,
    pub down: Vec<Conv1d>,
    pub res: ResBlock,
    pub proj: Conv1d,
}

pub struct EncoderCache {
    input: ConvCache,
    input_out: Array3<f64>,
    down: Vec<(ConvCache, Array3<f64>)>,
    res: ResBlockCache,
    proj: ConvCache,
}

impl Encoder {
    pub fn new(features: usize, width: usize, latent: usize, factor: usize, rng: &mut impl Rng) -> Self {
        let stages = factor.trailing_zeros() as usize;
        Self {
            input: Conv1d::new(features, width, 3, 1, 1, 1, true, rng),
            down: (0..stages)
                .map(|_| Conv1d::new(width, width, 4, 2, 1, 1, true, rng))
                .collect(),
            res: ResBlock::new(width, rng),
            proj: Conv1d::new(width, latent, 1, 1, 0, 0, false, rng),
        }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, EncoderCache) {
        let (h, input) = self.input.forward(x);
        let input_out = leaky_relu(&h);
        let mut h = input_out.clone();
        let mut down = Vec::with_capacity(self.down.len());
        for conv in &self.down {
            let (y, c) = conv.forward(&h);
            h = leaky_relu(&y);
            down.push((c, h.clone()));
        }
        let (h, res) = self.res.forward(&h);
        let (y, proj) = self.proj.forward(&h);
        (
            y,
            EncoderCache {
                input,
                input_out,
                down,
                res,
                proj,
            },
        )
    }

    pub fn backward(&mut self, cache: &EncoderCache, grad: &Array3<f64>) -> Array3<f64> {
        let g = self.proj.backward(&cache.proj, grad);
        let mut g = self.res.backward(&cache.res, &g);
        for (conv, (c, out)) in self.down.iter_mut().zip(&cache.down).rev() {
            g = leaky_relu_backward(out, &g);
            g = conv.backward(c, &g);
        }
        let g = leaky_relu_backward(&cache.input_out, &g);
        self.input.backward(&cache.input, &g)
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        push_named(&mut out, "encoder.input", self.input.params_mut());
        for (i, d) in self.down.iter_mut().enumerate() {
            push_named(&mut out, &format!("encoder.down{i}"), d.params_mut());
        }
        push_named(&mut out, "encoder.res", self.res.params_mut());
        push_named(&mut out, "encoder.proj", self.proj.params_mut());
        out
    }
}

/// Mirror of [`Encoder`] built from transposed convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub proj: Conv1d,
    pub res: ResBlock,
    pub up: Vec<ConvTranspose1d>,
    pub output: Conv1d,
}

pub struct DecoderCache {
    proj: ConvCache,
    proj_out: Array3<f64>,
    res: ResBlockCache,
    up: Vec<(ConvTransposeCache, Array3<f64>)>,
    output: ConvCache,
}

impl Decoder {
    pub fn new(features: usize, width: usize, latent: usize, factor: usize, rng: &mut impl Rng) -> Self {
        let stages = factor.trailing_zeros() as usize;
        Self {
            proj: Conv1d::new(latent, width, 1, 1, 0, 0, true, rng),
            res: ResBlock::new(width, rng),
            up: (0..stages)
                .map(|_| ConvTranspose1d::new(width, width, 4, 2, 1, rng))
                .collect(),
            output: Conv1d::new(width, features, 3, 1, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, z: &Array3<f64>) -> (Array3<f64>, DecoderCache) {
        let (h, proj) = self.proj.forward(z);
        let proj_out = leaky_relu(&h);
        let (mut h, res) = self.res.forward(&proj_out);
        let mut up = Vec::with_capacity(self.up.len());
        for conv in &self.up {
            let (y, c) = conv.forward(&h);
            h = leaky_relu(&y);
            up.push((c, h.clone()));
        }
        let (y, output) = self.output.forward(&h);
        (
            y,
            DecoderCache {
                proj,
                proj_out,
                res,
                up,
                output,
            },
        )
    }

    pub fn backward(&mut self, cache: &DecoderCache, grad: &Array3<f64>) -> Array3<f64> {
        let mut g = self.output.backward(&cache.output, grad);
        for (conv, (c, out)) in self.up.iter_mut().zip(&cache.up).rev() {
            g = leaky_relu_backward(out, &g);
            g = conv.backward(c, &g);
        }
        let g = self.res.backward(&cache.res, &g);
        let g = leaky_relu_backward(&cache.proj_out, &g);
        self.proj.backward(&cache.proj, &g)
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        push_named(&mut out, "decoder.proj", self.proj.params_mut());
        push_named(&mut out, "decoder.res", self.res.params_mut());
        for (i, u) in self.up.iter_mut().enumerate() {
            push_named(&mut out, &format!("decoder.up{i}"), u.params_mut());
        }
        push_named(&mut out, "decoder.output", self.output.params_mut());
        out
    }
}

fn push_named<'a>(out: &mut Vec<(String, &'a mut Param)>, prefix: &str, params: Vec<&'a mut Param>) {
    for (i, p) in params.into_iter().enumerate() {
        out.push((format!("{prefix}.{i}"), p));
    }
}

/// `[T, F]` windows, stacked to the `[F, B, T]` network layout.
pub fn stack_windows(windows: &[ArrayView2<f64>]) -> Array3<f64> {
    let t = windows[0].nrows();
    let f = windows[0].ncols();
    let mut x = Array3::zeros((f, windows.len(), t));
    for (b, w) in windows.iter().enumerate() {
        x.slice_mut(s![.., b, ..]).assign(&w.t());
    }
    x
}

/// `[d, B, K]` → `[B·K, d]`, clip-major rows.
pub fn latent_to_rows(y: &Array3<f64>) -> Array2<f64> {
    let (d, b, k) = y.dim();
    y.view()
        .permuted_axes([1, 2, 0])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * k, d))
        .expect("contiguous")
}

pub fn rows_to_latent(rows: &Array2<f64>, batch: usize) -> Array3<f64> {
    let (n, d) = rows.dim();
    let k = n / batch;
    rows.view()
        .into_shape_with_order((batch, k, d))
        .expect("rows split evenly into clips")
        .permuted_axes([2, 0, 1])
        .as_standard_layout()
        .into_owned()
}

/// Encoder, decoder and codebooks, plus everything needed to map clips in
/// and out of the normalized feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub config: CodecConfig,
    pub skeleton: Skeleton,
    pub normalizer: Normalizer,
    pub labels: Vec<String>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub stack: RvqStack,
    pub step: u64,
}

impl CodecModel {
    pub fn new(
        config: CodecConfig,
        skeleton: Skeleton,
        normalizer: Normalizer,
        labels: Vec<String>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let f = crate::motion::FeatureLayout::new(skeleton.joint_count()).dim();
        if normalizer.dim() != f {
            return Err(Error::Shape(format!(
                "normalizer width {} does not match feature width {f}",
                normalizer.dim()
            )));
        }
        let (w, d, factor) = (config.conv_feature, config.latent_dim, config.downsample_factor);
        let encoder = Encoder::new(f, w, d, factor, rng);
        let decoder = Decoder::new(f, w, d, factor, rng);
        let stack = RvqStack::random(
            config.n_books,
            config.codes_per_book,
            d,
            config.gamma,
            config.content_cutoff,
            rng,
        )?;
        Ok(Self {
            config,
            skeleton,
            normalizer,
            labels,
            encoder,
            decoder,
            stack,
            step: 0,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn n_books(&self) -> usize {
        self.stack.len()
    }

    pub fn content_cutoff(&self) -> usize {
        self.config.content_cutoff
    }

    /// Network parameters in a fixed order (codebooks excluded).
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = self.encoder.named_params_mut();
        v.extend(self.decoder.named_params_mut());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut().into_iter().map(|(_, p)| p).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_len(&self, t: usize) -> Result<()> {
        let f = self.config.downsample_factor;
        if t == 0 || !t.is_multiple_of(f) {
            return Err(Error::Shape(format!(
                "sequence length {t} is not a positive multiple of the downsampling factor {f}"
            )));
        }
        Ok(())
    }

    /// Normalized `[T, F]` features → `[K, d]` latent.
    pub fn encode(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "feature width {} does not match model width {}",
                features.ncols(),
                self.feature_dim()
            )));
        }
        self.check_len(features.nrows())?;
        let x = stack_windows(&[features]);
        let (y, _) = self.encoder.forward(&x);
        Ok(latent_to_rows(&y))
    }

    /// `[K, d]` latent → normalized `[K·factor, F]` features.
    pub fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.config.latent_dim || z.nrows() == 0 {
            return Err(Error::Shape(format!(
                "latent of shape {:?} does not match width {}",
                z.dim(),
                self.config.latent_dim
            )));
        }
        let (y, _) = self.decoder.forward(&rows_to_latent(&z.to_owned(), 1));
        Ok(y.index_axis(Axis(1), 0).t().to_owned())
    }

    pub fn normalize_clip(&self, clip: &MotionClip) -> Result<Array2<f64>> {
        if clip.skeleton.joint_count() != self.skeleton.joint_count() {
            return Err(Error::Structural(format!(
                "clip has {} joints, model expects {}",
                clip.skeleton.joint_count(),
                self.skeleton.joint_count()
            )));
        }
        Ok(self.normalizer.normalize(assemble_features(clip)?.view()))
    }

    pub fn encode_clip(&self, clip: &MotionClip) -> Result<Array2<f64>> {
        self.encode(self.normalize_clip(clip)?.view())
    }

    pub fn trace_clip(&self, clip: &MotionClip) -> Result<QuantizationTrace> {
        residual_encode(&self.stack, self.encode_clip(clip)?.view(), self.n_books())
    }

    pub fn decode_to_clip(
        &self,
        z: ArrayView2<f64>,
        fps: f64,
        label: Option<String>,
    ) -> Result<MotionClip> {
        let x = self.normalizer.denormalize(self.decode(z)?.view());
        disassemble_features(&self.skeleton, x.view(), fps, label)
    }

    /// Encode, quantize with every book, decode using the first `n_books`.
    pub fn reconstruct(&self, clip: &MotionClip, n_books: usize) -> Result<MotionClip> {
        let trace = self.trace_clip(clip)?;
        let n = n_books.clamp(1, self.n_books());
        self.decode_to_clip(sum_codes(&trace, 0..n).view(), clip.fps, clip.style_label.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth::generate_synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> (CodecModel, MotionClip) {
        let clip = generate_synthetic(0, 0, 40, 1).unwrap();
        let x = assemble_features(&clip).unwrap();
        let norm = Normalizer::fit([x.view()]).unwrap();
        let mut cfg = CodecConfig::profile("synthetic").unwrap();
        cfg.latent_dim = 8;
        cfg.conv_feature = 12;
        cfg.window_len = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = CodecModel::new(cfg, clip.skeleton.clone(), norm, vec!["neutral".into()], &mut rng).unwrap();
        (model, clip)
    }

    #[test]
    fn shapes() {
        let (model, clip) = tiny_model(1);
        let z = model.encode_clip(&clip).unwrap();
        assert_eq!(z.dim(), (10, 8));
        let y = model.decode(z.view()).unwrap();
        assert_eq!(y.dim(), (40, model.feature_dim()));
        assert_eq!(model.decode(z.view()).unwrap(), y);
        let short = generate_synthetic(0, 0, 38, 1).unwrap();
        assert!(matches!(model.encode_clip(&short), Err(Error::Shape(_))));
        assert!(matches!(model.decode(Array2::zeros((3, 5)).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_projection_gives_zero_latent() {
        let (mut model, clip) = tiny_model(2);
        model.encoder.proj.weight.value.fill(0.0);
        let x = model.normalize_clip(&clip).unwrap();
        let z = model.encode(Array2::zeros(x.raw_dim()).view()).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifting_input_by_one_stride_shifts_interior_slots() {
        let (model, clip) = tiny_model(3);
        let long = generate_synthetic(1, 2, 44, 4).unwrap();
        let x = model.normalize_clip(&long).unwrap();
        let a = model.encode(x.slice(s![0..40, ..])).unwrap();
        let b = model.encode(x.slice(s![4..44, ..])).unwrap();
        // Slot k+1 of `a` and slot k of `b` see the same frames away from the
        // padded edges.
        for k in 3..6 {
            let d = (&a.row(k + 1) - &b.row(k)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
            assert!(d < 1e-12, "slot {k}: {d}");
        }
        let _ = clip;
    }

    #[test]
    fn layout_helpers_invert() {
        let y = Array3::from_shape_fn((3, 2, 4), |(a, b, c)| (a * 100 + b * 10 + c) as f64);
        let rows = latent_to_rows(&y);
        assert_eq!(rows[[4 + 2, 0]], 12.0);
        assert_eq!(rows_to_latent(&rows, 2), y);
    }
}
