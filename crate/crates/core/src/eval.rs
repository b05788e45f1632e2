//! Style classifier and evaluation metrics.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{label_alphabet, stack_windows, CodecModel};
use crate::error::{Error, Result};
use crate::motion::kinematics::clip_root_trajectory;
use crate::motion::{assemble_features, window_dataset, FeatureLayout, MotionClip, Normalizer};
use crate::nn::{
    clip_grad_norm, leaky_relu, leaky_relu_backward, Adam, Conv1d, ConvCache, ConvTranspose1d,
    ConvTransposeCache, Linear, LinearCache, Param,
};
use crate::ops::encode_clip;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Output channels of the four strided convolutions.
    pub conv_channels: [usize; 4],
    /// Output channels of the three transposed convolutions.
    pub deconv_channels: [usize; 3],
    pub window_len: usize,
    pub window_stride: usize,
    pub learning_rate: f64,
    pub steps: u64,
    pub batch_size: usize,
    /// Fraction of each label's clips kept out of training.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            conv_channels: [64, 128, 256, 256],
            deconv_channels: [256, 128, 64],
            window_len: 64,
            window_stride: 16,
            learning_rate: 1e-3,
            steps: 300,
            batch_size: 32,
            holdout: 0.2,
            seed: 0,
        }
    }
}

/// Four kernel-4 stride-2 convolutions, three transposed convolutions,
/// temporal mean pooling and a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleClassifier {
    pub labels: Vec<String>,
    pub normalizer: Normalizer,
    pub config: ClassifierConfig,
    pub convs: Vec<Conv1d>,
    pub deconvs: Vec<ConvTranspose1d>,
    pub head: Linear,
}

struct ClassifierCache {
    convs: Vec<(ConvCache, Array3<f64>)>,
    deconvs: Vec<(ConvTransposeCache, Array3<f64>)>,
    pooled_len: usize,
    head: LinearCache,
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean cross entropy and its gradient on the logits.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let p = softmax_rows(logits);
    let b = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = p.clone();
    for (i, &t) in targets.iter().enumerate() {
        loss -= p[[i, t]].max(1e-300).ln();
        grad[[i, t]] -= 1.0;
    }
    (loss / b, grad / b)
}

/// The smallest input length the four stride-2 stages accept.
pub const MIN_CLASSIFIER_FRAMES: usize = 16;

impl StyleClassifier {
    pub fn new(labels: Vec<String>, normalizer: Normalizer, config: ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Config(format!(
                "a style classifier needs at least two labels, got {}",
                labels.len()
            )));
        }
        let mut c_in = normalizer.dim();
        let mut convs = Vec::new();
        for &c in &config.conv_channels {
            convs.push(Conv1d::new(c_in, c, 4, 2, 1, 1, true, rng));
            c_in = c;
        }
        let mut deconvs = Vec::new();
        for &c in &config.deconv_channels {
            deconvs.push(ConvTranspose1d::new(c_in, c, 4, 2, 1, rng));
            c_in = c;
        }
        let head = Linear::new(c_in, labels.len(), rng);
        Ok(Self {
            labels,
            normalizer,
            config,
            convs,
            deconvs,
            head,
        })
    }

    fn forward(&self, x: &Array3<f64>) -> (Array2<f64>, ClassifierCache) {
        let mut h = x.clone();
        let mut convs = Vec::new();
        for c in &self.convs {
            let (y, cache) = c.forward(&h);
            h = leaky_relu(&y);
            convs.push((cache, h.clone()));
        }
        let mut deconvs = Vec::new();
        for d in &self.deconvs {
            let (y, cache) = d.forward(&h);
            h = leaky_relu(&y);
            deconvs.push((cache, h.clone()));
        }
        let pooled_len = h.len_of(Axis(2));
        let pooled = h.mean_axis(Axis(2)).expect("non-empty time axis").t().to_owned();
        let (logits, head) = self.head.forward(&pooled);
        (
            logits,
            ClassifierCache {
                convs,
                deconvs,
                pooled_len,
                head,
            },
        )
    }

    fn backward(&mut self, cache: &ClassifierCache, dlogits: &Array2<f64>) {
        let dpool = self.head.backward(&cache.head, dlogits);
        let (c, b) = (dpool.ncols(), dpool.nrows());
        let t = cache.pooled_len;
        let mut g = Array3::from_shape_fn((c, b, t), |(ci, bi, _)| dpool[[bi, ci]] / t as f64);
        for (d, (dc, out)) in self.deconvs.iter_mut().zip(&cache.deconvs).rev() {
            g = leaky_relu_backward(out, &g);
            g = d.backward(dc, &g);
        }
        for (conv, (cc, out)) in self.convs.iter_mut().zip(&cache.convs).rev() {
            g = leaky_relu_backward(out, &g);
            g = conv.backward(cc, &g);
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for c in &mut self.convs {
            v.extend(c.params_mut());
        }
        for d in &mut self.deconvs {
            v.extend(d.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    fn prepare(&self, clip: &MotionClip) -> Result<Array2<f64>> {
        let x = assemble_features(clip)?;
        if x.ncols() != self.normalizer.dim() {
            return Err(Error::Shape(format!(
                "clip has {} features, classifier expects {}",
                x.ncols(),
                self.normalizer.dim()
            )));
        }
        if x.nrows() < MIN_CLASSIFIER_FRAMES {
            return Err(Error::InsufficientFrames {
                needed: MIN_CLASSIFIER_FRAMES,
                got: x.nrows(),
            });
        }
        Ok(self.normalizer.normalize(x.view()))
    }

    /// Class probabilities of each window of `clip` (the whole clip if it is
    /// shorter than a window).
    pub fn window_probabilities(&self, clip: &MotionClip) -> Result<Array2<f64>> {
        let x = self.prepare(clip)?;
        let w = self.config.window_len;
        let starts: Vec<usize> = if x.nrows() <= w {
            vec![0]
        } else {
            (0..=(x.nrows() - w)).step_by(self.config.window_stride).collect()
        };
        let len = w.min(x.nrows());
        let views: Vec<_> = starts.iter().map(|&s| x.slice(ndarray::s![s..s + len, ..])).collect();
        let (logits, _) = self.forward(&stack_windows(&views));
        Ok(softmax_rows(&logits))
    }

    /// Mean of the window probabilities.
    pub fn predict_proba(&self, clip: &MotionClip) -> Result<Vec<f64>> {
        let p = self.window_probabilities(clip)?;
        Ok(p.mean_axis(Axis(0)).expect("at least one window").to_vec())
    }

    pub fn predict(&self, clip: &MotionClip) -> Result<usize> {
        Ok(argmax(&self.predict_proba(clip)?))
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Config(format!("label {label:?} is not in the classifier alphabet {:?}", self.labels)))
    }
}

const CLASSIFIER_FORMAT: &str = "rvq-motion-classifier";
const CLASSIFIER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    format: String,
    version: u32,
    labels: Vec<String>,
    normalizer: Normalizer,
    config: ClassifierConfig,
    /// Parameters in network order: `(rows, cols, row-major values)`.
    params: Vec<(usize, usize, Vec<f64>)>,
}

impl StyleClassifier {
    pub fn to_json(&mut self) -> String {
        let params = self
            .params_mut()
            .into_iter()
            .map(|p| (p.value.nrows(), p.value.ncols(), p.value.iter().copied().collect()))
            .collect();
        let file = ClassifierFile {
            format: CLASSIFIER_FORMAT.into(),
            version: CLASSIFIER_VERSION,
            labels: self.labels.clone(),
            normalizer: self.normalizer.clone(),
            config: self.config.clone(),
            params,
        };
        serde_json::to_string(&file).expect("classifier serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(format!("classifier file: {m}"));
        let file: ClassifierFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format != CLASSIFIER_FORMAT {
            return Err(bad(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != CLASSIFIER_VERSION {
            return Err(bad(format!("unsupported version {}", file.version)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut clf = StyleClassifier::new(file.labels, file.normalizer, file.config, &mut rng)?;
        let mut params = clf.params_mut();
        if params.len() != file.params.len() {
            return Err(bad(format!("{} tensors, expected {}", file.params.len(), params.len())));
        }
        for (k, (p, (rows, cols, data))) in params.iter_mut().zip(file.params).enumerate() {
            if (rows, cols) != p.value.dim() || data.len() != rows * cols {
                return Err(bad(format!(
                    "tensor {k} has shape {rows}x{cols} ({} values), expected {:?}",
                    data.len(),
                    p.value.dim()
                )));
            }
            p.value = Array2::from_shape_vec((rows, cols), data).expect("length checked");
        }
        Ok(clf)
    }

    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub train_windows: usize,
    pub heldout_windows: usize,
    /// Percentage; `None` when nothing was held out.
    pub heldout_accuracy: Option<f64>,
    pub final_loss: f64,
}

/// Trains on labelled clips; each label with at least two clips has a
/// `holdout` share of them (at least one) kept for evaluation.
pub fn train_classifier(clips: &[MotionClip], config: &ClassifierConfig) -> Result<(StyleClassifier, ClassifierReport)> {
    let labels = label_alphabet(clips)?;
    if labels.len() < 2 {
        return Err(Error::Config("classifier training needs at least two style labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut train_clips = Vec::new();
    let mut held_clips = Vec::new();
    for l in &labels {
        let group: Vec<&MotionClip> = clips.iter().filter(|c| c.style_label.as_ref() == Some(l)).collect();
        let held = if group.len() >= 2 {
            ((group.len() as f64 * config.holdout).ceil() as usize).clamp(1, group.len() - 1)
        } else {
            0
        };
        let held = if config.holdout > 0.0 { held } else { 0 };
        let cut = group.len() - held;
        train_clips.extend(group[..cut].iter().map(|c| (*c).clone()));
        held_clips.extend(group[cut..].iter().map(|c| (*c).clone()));
    }
    let feats = train_clips.iter().map(assemble_features).collect::<Result<Vec<_>>>()?;
    let normalizer = Normalizer::fit(feats.iter().map(|f| f.view()))?;
    let mut clf = StyleClassifier::new(labels.clone(), normalizer, config.clone(), &mut rng)?;

    let windows = window_dataset(&train_clips, config.window_len, config.window_stride);
    if windows.is_empty() {
        return Err(Error::InsufficientFrames {
            needed: config.window_len,
            got: train_clips.iter().map(|c| c.len()).max().unwrap_or(0),
        });
    }
    let xs = windows.iter().map(|w| clf.prepare(w)).collect::<Result<Vec<_>>>()?;
    let ys: Vec<usize> = windows
        .iter()
        .map(|w| clf.label_index(w.style_label.as_deref().unwrap_or_default()))
        .collect::<Result<_>>()?;
    let mut opt = Adam::new(config.learning_rate);
    let mut final_loss = f64::NAN;
    for _ in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..xs.len())).collect();
        let views: Vec<_> = idx.iter().map(|&i| xs[i].view()).collect();
        let targets: Vec<usize> = idx.iter().map(|&i| ys[i]).collect();
        let (logits, cache) = clf.forward(&stack_windows(&views));
        let (loss, dlogits) = cross_entropy(&logits, &targets);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("classifier loss became {loss}")));
        }
        for p in clf.params_mut() {
            p.zero_grad();
        }
        clf.backward(&cache, &dlogits);
        let mut params = clf.params_mut();
        clip_grad_norm(&mut params, 1.0);
        opt.step(&mut params);
        final_loss = loss;
    }
    for p in clf.params_mut() {
        p.zero_grad();
    }

    let held_windows = window_dataset(&held_clips, config.window_len, config.window_stride);
    let mut hits = 0;
    for w in &held_windows {
        if clf.predict(w)? == clf.label_index(w.style_label.as_deref().unwrap_or_default())? {
            hits += 1;
        }
    }
    let report = ClassifierReport {
        train_windows: windows.len(),
        heldout_windows: held_windows.len(),
        heldout_accuracy: (!held_windows.is_empty()).then(|| 100.0 * hits as f64 / held_windows.len() as f64),
        final_loss,
    };
    Ok((clf, report))
}

/// Top-1 and top-k hit rates, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub top1: f64,
    pub topk: f64,
    pub k: usize,
}

/// A target is a top-k hit when fewer than `k` classes score strictly higher.
pub fn accuracy_from_probabilities(probs: &[Vec<f64>], targets: &[usize], k: usize) -> Result<Accuracy> {
    if probs.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    if probs.len() != targets.len() {
        return Err(Error::Structural(format!("{} predictions for {} targets", probs.len(), targets.len())));
    }
    let (mut h1, mut hk) = (0usize, 0usize);
    for (p, &t) in probs.iter().zip(targets) {
        if t >= p.len() {
            return Err(Error::Config(format!("target class {t} outside {} classes", p.len())));
        }
        let rank = p.iter().filter(|&&v| v > p[t]).count();
        h1 += usize::from(rank < 1);
        hk += usize::from(rank < k);
    }
    let n = probs.len() as f64;
    Ok(Accuracy {
        top1: 100.0 * h1 as f64 / n,
        topk: 100.0 * hk as f64 / n,
        k,
    })
}

pub fn style_accuracy(classifier: &StyleClassifier, clips: &[MotionClip], targets: &[String], k: usize) -> Result<Accuracy> {
    if clips.is_empty() {
        return Err(Error::UndefinedMetric("no generated clips".into()));
    }
    if clips.len() != targets.len() {
        return Err(Error::Structural(format!("{} clips but {} target labels", clips.len(), targets.len())));
    }
    let t = targets.iter().map(|l| classifier.label_index(l)).collect::<Result<Vec<_>>>()?;
    let p = clips.iter().map(|c| classifier.predict_proba(c)).collect::<Result<Vec<_>>>()?;
    accuracy_from_probabilities(&p, &t, k)
}

/// Percentage of predictions equal to the content clip's own style.
pub fn cross_classification_rate(predictions: &[usize], content_labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::UndefinedMetric("cross-classification of an empty set".into()));
    }
    if predictions.len() != content_labels.len() {
        return Err(Error::Structural("predictions and content labels differ in length".into()));
    }
    let hits = predictions.iter().zip(content_labels).filter(|(p, c)| p == c).count();
    Ok(100.0 * hits as f64 / predictions.len() as f64)
}

pub fn cross_classification(classifier: &StyleClassifier, clips: &[MotionClip], content_labels: &[String]) -> Result<f64> {
    if clips.len() != content_labels.len() {
        return Err(Error::Structural("clips and content labels differ in length".into()));
    }
    let preds = clips.iter().map(|c| classifier.predict(c)).collect::<Result<Vec<_>>>()?;
    // A content style unknown to the classifier can never be predicted.
    let labels: Vec<usize> = content_labels
        .iter()
        .map(|l| classifier.label_index(l).unwrap_or(usize::MAX))
        .collect();
    cross_classification_rate(&preds, &labels)
}

/// Mean Euclidean distance between two trajectories over their common
/// length.
pub fn trajectory_deviation(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    let n = a.len().min(b.len());
    if n == 0 {
        return Err(Error::UndefinedMetric("empty trajectory".into()));
    }
    Ok(a.iter().zip(b).take(n).map(|(p, q)| (p - q).norm()).sum::<f64>() / n as f64)
}

/// Content deviation D_C: mean distance between the integrated root
/// trajectories (positions after each frame), both starting at the origin.
/// Unequal lengths are truncated to the shorter clip with a warning.
pub fn content_deviation(generated: &MotionClip, content: &MotionClip) -> Result<f64> {
    if generated.len() != content.len() {
        log::warn!(
            "content deviation on clips of {} and {} frames; truncating to the shorter",
            generated.len(),
            content.len()
        );
    }
    let a = clip_root_trajectory(generated);
    let b = clip_root_trajectory(content);
    trajectory_deviation(&a[1..], &b[1..])
}

/// Mean per-joint position distance between two feature matrices.
pub fn joint_position_error(layout: FeatureLayout, a: &Array2<f64>, b: &Array2<f64>) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for t in 0..a.nrows().min(b.nrows()) {
        for j in 0..layout.joints() {
            let p = layout.position(j);
            let d: f64 = (0..3).map(|k| (a[[t, p + k]] - b[[t, p + k]]).powi(2)).sum();
            total += d.sqrt();
            count += 1;
        }
    }
    (total, count)
}

/// Mean joint-position error (metres, root frame) between clips and their
/// reconstructions through the first `n_books` books.
pub fn reconstruction_l2p(model: &CodecModel, clips: &[MotionClip], n_books: usize) -> Result<f64> {
    let layout = FeatureLayout::new(model.skeleton.joint_count());
    let n = n_books.clamp(1, model.n_books());
    let (mut total, mut count) = (0.0, 0);
    for clip in clips {
        let e = encode_clip(model, clip)?;
        let z = crate::rvq::sum_codes(&e.trace, 0..n);
        let y = model.normalizer.denormalize(model.decode(z.view())?.view());
        let (t, c) = joint_position_error(layout, &assemble_features(clip)?, &y);
        total += t;
        count += c;
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no frames to measure".into()));
    }
    Ok(total / count as f64)
}

/// Writes one row per clip and residual layer `0..=N`: layer, label and the
/// residual averaged over the clip's slots. Returns the rows written.
pub fn export_embeddings(model: &CodecModel, clips: &[MotionClip], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let rows = embedding_rows(model, clips)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["layer".to_string(), "label".to_string()];
    header.extend((0..model.config.latent_dim).map(|i| format!("dim_{i}")));
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for (layer, label, v) in &rows {
        let mut rec = vec![layer.to_string(), label.clone()];
        rec.extend(v.iter().map(|x| format!("{x:e}")));
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

/// The rows [`export_embeddings`] writes.
pub fn embedding_rows(model: &CodecModel, clips: &[MotionClip]) -> Result<Vec<(usize, String, Vec<f64>)>> {
    let mut out = Vec::new();
    for clip in clips {
        let e = encode_clip(model, clip)?;
        let label = clip.style_label.clone().unwrap_or_default();
        for (layer, r) in crate::rvq::pooled_residuals(&e.trace, 0, e.slots()).into_iter().enumerate() {
            out.push((layer, label.clone(), r.to_vec()));
        }
    }
    Ok(out)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            frame: None,
            message: format!("{other:?}"),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStyleRow {
    pub label: String,
    pub mean: f64,
    pub count: usize,
    pub above_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStyleReport {
    /// Sorted by descending mean deviation.
    pub rows: Vec<PerStyleRow>,
    /// Mean of the per-label means.
    pub subset_mean: f64,
    pub above_count: usize,
}

pub fn per_style_report(deviations: &BTreeMap<String, Vec<f64>>) -> Result<PerStyleReport> {
    if deviations.is_empty() {
        return Err(Error::UndefinedMetric("no labels to report".into()));
    }
    let mut rows = Vec::with_capacity(deviations.len());
    for (label, v) in deviations {
        if v.is_empty() {
            return Err(Error::UndefinedMetric(format!("label {label:?} has no samples")));
        }
        rows.push(PerStyleRow {
            label: label.clone(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            count: v.len(),
            above_mean: false,
        });
    }
    let subset_mean = rows.iter().map(|r| r.mean).sum::<f64>() / rows.len() as f64;
    for r in &mut rows {
        r.above_mean = r.mean > subset_mean;
    }
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.label.cmp(&b.label)));
    let above_count = rows.iter().filter(|r| r.above_mean).count();
    Ok(PerStyleReport {
        rows,
        subset_mean,
        above_count,
    })
}

/// Multinomial logistic regression on per-window histograms of the content
/// codebook indices, windows cut with the model's training window and
/// stride. Returns held-out accuracy in percent.
pub fn content_index_probe(
    model: &CodecModel,
    train: &[MotionClip],
    test: &[MotionClip],
    s: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let labels = label_alphabet(train)?;
    let features = |clips: &[MotionClip]| -> Result<(Array2<f64>, Vec<usize>)> {
        let clips = window_dataset(clips, model.config.window_len, model.config.window_stride);
        let x = model.config.codes_per_book;
        let mut rows = Array2::zeros((clips.len(), x * s));
        let mut ys = Vec::with_capacity(clips.len());
        for (r, c) in clips.iter().enumerate() {
            let e = encode_clip(model, c)?;
            let k = e.slots() as f64;
            for layer in 0..s {
                for &i in &e.trace.indices[layer] {
                    rows[[r, layer * x + i]] += 1.0 / k;
                }
            }
            let l = c.style_label.as_deref().unwrap_or_default();
            ys.push(labels.iter().position(|x| x == l).ok_or_else(|| {
                Error::Config(format!("probe test label {l:?} does not occur in training"))
            })?);
        }
        Ok((rows, ys))
    };
    let (xtr, ytr) = features(train)?;
    let (xte, yte) = features(test)?;
    if xte.nrows() == 0 {
        return Err(Error::UndefinedMetric("empty probe test set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lin = Linear::new(xtr.ncols(), labels.len(), &mut rng);
    lin.weight.value.fill(0.0);
    let mut opt = Adam::new(0.05);
    for _ in 0..steps {
        let (logits, cache) = lin.forward(&xtr);
        let (_, g) = cross_entropy(&logits, &ytr);
        lin.weight.zero_grad();
        lin.bias.zero_grad();
        lin.backward(&cache, &g);
        opt.step(&mut lin.params_mut());
    }
    let (logits, _) = lin.forward(&xte);
    let hits = logits
        .rows()
        .into_iter()
        .zip(&yte)
        .filter(|(r, &y)| argmax(&r.to_vec()) == y)
        .count();
    Ok(100.0 * hits as f64 / yte.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub style_acc_top1: f64,
    pub style_acc_topk: f64,
    pub k: usize,
    pub content_dev_mean: f64,
    pub content_dev_std: f64,
    pub cross_cls: f64,
    pub rec_err_l2p: f64,
    pub transfers: usize,
    pub per_style: PerStyleReport,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Transfers every content clip to every style clip of a different label
/// and scores the results.
pub fn evaluate_transfers(
    model: &CodecModel,
    classifier: &StyleClassifier,
    contents: &[MotionClip],
    styles: &[MotionClip],
    s: usize,
    k: usize,
) -> Result<EvalReport> {
    let mut generated = Vec::new();
    let mut targets = Vec::new();
    let mut content_labels = Vec::new();
    let mut devs = Vec::new();
    let mut by_label: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in contents {
        for st in styles {
            if st.style_label == c.style_label {
                continue;
            }
            let out = crate::ops::code_swap_transfer(model, c, st, s)?;
            let d = content_deviation(&out, c)?;
            let target = st.style_label.clone().unwrap_or_default();
            by_label.entry(target.clone()).or_default().push(d);
            devs.push(d);
            targets.push(target);
            content_labels.push(c.style_label.clone().unwrap_or_default());
            generated.push(out);
        }
    }
    if generated.is_empty() {
        return Err(Error::UndefinedMetric("no content/style pairs with different labels".into()));
    }
    let acc = style_accuracy(classifier, &generated, &targets, k)?;
    let cross = cross_classification(classifier, &generated, &content_labels)?;
    let (m, sd) = mean_std(&devs);
    Ok(EvalReport {
        style_acc_top1: acc.top1,
        style_acc_topk: acc.topk,
        k,
        content_dev_mean: m,
        content_dev_std: sd,
        cross_cls: cross,
        rec_err_l2p: reconstruction_l2p(model, contents, model.n_books())?,
        transfers: generated.len(),
        per_style: per_style_report(&by_label)?,
    })
}
