use std::collections::BTreeSet;

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::CodecConfig;
use super::losses::{fk_positions, reconstruction_losses, LossTerms, Positions};
use super::model::{latent_to_rows, rows_to_latent, stack_windows, CodecModel};
use crate::disentangle::{
    multipos_contrastive, mutual_info_loss_grad, pool_rows, unpool_rows, UpdatePhase,
    UpdateSequence,
};
use crate::error::{Error, Result};
use crate::motion::{assemble_features, window_dataset, FeatureLayout, MotionClip, Normalizer};
use crate::nn::{clip_grad_norm, Adam, Param};
use crate::rvq::{
    code_reset, commitment_loss, ema_update, residual_encode, sample_active_layers,
    straight_through_backward, sum_codes, QuantizationTrace, TraceGrads,
};

/// RNG for one training step: a function of the seed and the step index only.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Sorted distinct style labels; every clip must carry one.
pub fn label_alphabet(clips: &[MotionClip]) -> Result<Vec<String>> {
    let mut set = BTreeSet::new();
    for (i, c) in clips.iter().enumerate() {
        match &c.style_label {
            Some(l) => {
                set.insert(l.clone());
            }
            None => return Err(Error::Structural(format!("training clip {i} has no style label"))),
        }
    }
    Ok(set.into_iter().collect())
}

pub fn fit_normalizer(clips: &[MotionClip]) -> Result<Normalizer> {
    let feats = clips.iter().map(assemble_features).collect::<Result<Vec<_>>>()?;
    Normalizer::fit(feats.iter().map(|f| f.view()))
}

/// A batch in network layout with its labels and FK targets.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Normalized `[F, B, T]`.
    pub x: Array3<f64>,
    pub labels: Vec<usize>,
    pub positions: Vec<Positions>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// Builds a batch from equal-length labelled clips.
    pub fn from_clips(model: &CodecModel, clips: &[MotionClip]) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Structural("empty batch".into()));
        }
        let mut norm = Vec::with_capacity(clips.len());
        let mut positions = Vec::with_capacity(clips.len());
        let mut labels = Vec::with_capacity(clips.len());
        for c in clips {
            if c.len() != clips[0].len() {
                return Err(Error::Shape("batch clips differ in length".into()));
            }
            let raw = assemble_features(c)?;
            positions.push(fk_positions(&model.skeleton, raw.view()));
            norm.push(model.normalizer.normalize(raw.view()));
            labels.push(label_index(&model.labels, c.style_label.as_deref())?);
        }
        let views: Vec<_> = norm.iter().map(|w| w.view()).collect();
        Ok(Self {
            x: stack_windows(&views),
            labels,
            positions,
        })
    }
}

fn label_index(labels: &[String], label: Option<&str>) -> Result<usize> {
    let label = label.ok_or_else(|| Error::Structural("clip has no style label".into()))?;
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::Structural(format!("style label {label:?} is not in the model's alphabet")))
}

/// Windowed, normalized training data with a label-stratified sampler.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    windows: Vec<Array2<f64>>,
    labels: Vec<usize>,
    positions: Vec<Positions>,
    by_label: Vec<Vec<usize>>,
}

impl TrainingSet {
    pub fn build(model: &CodecModel, clips: &[MotionClip]) -> Result<Self> {
        let cfg = &model.config;
        let windows = window_dataset(clips, cfg.window_len, cfg.window_stride);
        if windows.is_empty() {
            return Err(Error::InsufficientFrames {
                needed: cfg.window_len,
                got: clips.iter().map(|c| c.len()).max().unwrap_or(0),
            });
        }
        let mut set = Self {
            windows: Vec::with_capacity(windows.len()),
            labels: Vec::with_capacity(windows.len()),
            positions: Vec::with_capacity(windows.len()),
            by_label: vec![Vec::new(); model.labels.len()],
        };
        for w in &windows {
            let raw = assemble_features(w)?;
            let label = label_index(&model.labels, w.style_label.as_deref())?;
            set.by_label[label].push(set.windows.len());
            set.positions.push(fk_positions(&model.skeleton, raw.view()));
            set.windows.push(model.normalizer.normalize(raw.view()));
            set.labels.push(label);
        }
        set.by_label.retain(|v| !v.is_empty());
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Labels take turns filling the batch (starting at a random label);
    /// each pick is a uniform window of that label.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
        let groups = self.by_label.len();
        let offset = rng.random_range(0..groups);
        (0..batch_size)
            .map(|k| {
                let g = &self.by_label[(k + offset) % groups];
                g[rng.random_range(0..g.len())]
            })
            .collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let views: Vec<_> = indices.iter().map(|&i| self.windows[i].view()).collect();
        Batch {
            x: stack_windows(&views),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            positions: indices.iter().map(|&i| self.positions[i].clone()).collect(),
        }
    }
}

/// Loss values of one step, each before its coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepLosses {
    pub rec: f64,
    pub fk: f64,
    pub vel: f64,
    pub acc: f64,
    pub commit: f64,
    pub con: f64,
    pub mi: f64,
    pub total: f64,
}

impl StepLosses {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("rec", self.rec),
            ("fk", self.fk),
            ("vel", self.vel),
            ("acc", self.acc),
            ("commit", self.commit),
            ("con", self.con),
            ("mi", self.mi),
            ("total", self.total),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: u64,
    pub active_layers: usize,
    pub losses: StepLosses,
    pub grad_norm: f64,
    /// Distinct codes selected per book in this batch.
    pub codes_in_use: Vec<usize>,
    /// Codes reseeded per book (all zero except on reset steps).
    pub codes_reset: Vec<usize>,
}

struct Evaluation {
    losses: StepLosses,
    out_grad: Array3<f64>,
    trace_grads: TraceGrads,
    book_grads: Vec<Array2<f64>>,
}

fn feature_weights(model: &CodecModel) -> Array1<f64> {
    FeatureLayout::new(model.skeleton.joint_count())
        .weights(model.skeleton.root(), model.config.emphasis_weight)
}

/// Every loss term and its gradient on the decoder output, the trace and
/// the codebooks. `output` is the decoder's `[F, B, T]` result.
fn evaluate(
    model: &CodecModel,
    batch: &Batch,
    trace: &QuantizationTrace,
    output: &Array3<f64>,
    n: usize,
) -> Result<Evaluation> {
    let cfg = &model.config;
    let coef = &cfg.loss;
    let recon = reconstruction_losses(
        &model.skeleton,
        &model.normalizer,
        &feature_weights(model),
        coef,
        output,
        &batch.x,
        &batch.positions,
    )?;
    let LossTerms { rec, fk, vel, acc } = recon.terms;
    let mut tg = TraceGrads::zeros(trace);
    let mut book_grads: Vec<Array2<f64>> = model
        .stack
        .books
        .iter()
        .map(|b| Array2::zeros(b.codes.raw_dim()))
        .collect();

    let (commit, cg) = commitment_loss(trace, n);
    for (i, g) in cg.into_iter().enumerate() {
        tg.residuals[i].scaled_add(coef.commit, &g);
    }

    let slots = trace.slots() / batch.size();
    let depth = trace.depth();
    let s = cfg.content_cutoff.min(depth);
    let mut con = 0.0;
    if coef.con > 0.0 && s < depth {
        let layers: Vec<usize> = if cfg.contrast_all_style_layers {
            (s..depth).collect()
        } else {
            vec![s]
        };
        let scale = 1.0 / layers.len() as f64;
        for &l in &layers {
            let emb = pool_rows(&trace.residuals[l], slots)?;
            match multipos_contrastive(emb.view(), &batch.labels, cfg.tau_con) {
                Ok((v, g)) => {
                    con += scale * v;
                    tg.residuals[l].scaled_add(coef.con * scale, &unpool_rows(&g, slots));
                }
                Err(Error::UndefinedLoss(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let mut mi = 0.0;
    if coef.mi > 0.0 && depth > 1 {
        let row_labels: Vec<usize> = batch
            .labels
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l, slots))
            .collect();
        let scale = 1.0 / s as f64;
        for i in 0..s {
            match mutual_info_loss_grad(
                &model.stack.books[i],
                trace.residuals[i].view(),
                &row_labels,
                cfg.tau_mi,
            ) {
                Ok(g) => {
                    mi += scale * g.loss;
                    tg.residuals[i].scaled_add(coef.mi * scale, &g.residuals);
                    book_grads[i].scaled_add(coef.mi * scale, &g.codes);
                }
                Err(Error::UndefinedLoss(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }

    let total = recon.terms.weighted(coef) + coef.commit * commit + coef.con * con + coef.mi * mi;
    Ok(Evaluation {
        losses: StepLosses {
            rec,
            fk,
            vel,
            acc,
            commit,
            con,
            mi,
            total,
        },
        out_grad: recon.grad,
        trace_grads: tg,
        book_grads,
    })
}

fn check_finite(losses: &StepLosses, step: u64) -> Result<()> {
    for (term, value) in losses.named() {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: term.to_string(),
                value,
                step,
            });
        }
    }
    Ok(())
}

/// Result of a forward/backward pass: parameter gradients are left in the
/// model's `Param`s, codebook gradients are returned.
pub struct Gradients {
    pub losses: StepLosses,
    pub trace: QuantizationTrace,
    pub book_grads: Vec<Array2<f64>>,
}

/// Full forward pass (every book encodes, the first `n` decode) and the
/// straight-through backward pass. Network gradients accumulate into the
/// model's parameters.
pub fn forward_backward(model: &mut CodecModel, batch: &Batch, n: usize) -> Result<Gradients> {
    let depth = model.n_books();
    if n == 0 || n > depth {
        return Err(Error::Config(format!("active layers {n} outside [1, {depth}]")));
    }
    let b = batch.size();
    let (latent, enc_cache) = model.encoder.forward(&batch.x);
    let r0 = latent_to_rows(&latent);
    let trace = residual_encode(&model.stack, r0.view(), depth)?;
    let z = sum_codes(&trace, 0..n);
    let (output, dec_cache) = model.decoder.forward(&rows_to_latent(&z, b));
    let mut ev = evaluate(model, batch, &trace, &output, n)?;
    check_finite(&ev.losses, model.step)?;

    let dz = latent_to_rows(&model.decoder.backward(&dec_cache, &ev.out_grad));
    for l in 0..n {
        ev.trace_grads.codes[l] += &dz;
    }
    let dr0 = straight_through_backward(&trace, &ev.trace_grads, &mut ev.book_grads);
    model.encoder.backward(&enc_cache, &rows_to_latent(&dr0, b));
    for (book, g) in model.stack.books.iter().zip(&mut ev.book_grads) {
        if book.pinned_zero {
            g.row_mut(0).fill(0.0);
        }
    }
    Ok(Gradients {
        losses: ev.losses,
        trace,
        book_grads: ev.book_grads,
    })
}

/// Objective with quantization frozen at `anchor` (computed at the current
/// parameters θ₀), written as a smooth function of the parameters whose
/// gradient at θ₀ equals the straight-through gradient:
///
/// * `r[0](θ)` is the encoder output,
/// * `r[i+1](θ) = r[i](θ₀) − c_i(θ)[idx]`,
/// * the decoder sees `Σ_{i<n} c_i(θ₀)[idx] + r[i](θ) − r[i](θ₀)`,
/// * commitment compares `r[i](θ)` to `c_i(θ₀)[idx]`,
/// * soft assignments use `r[i](θ)` and `c_i(θ)` directly.
pub fn frozen_objective(
    model: &CodecModel,
    batch: &Batch,
    anchor: &QuantizationTrace,
    n: usize,
) -> Result<f64> {
    let b = batch.size();
    let (latent, _) = model.encoder.forward(&batch.x);
    let mut residuals = vec![latent_to_rows(&latent)];
    for (i, book) in model.stack.books.iter().enumerate() {
        let mut r = anchor.residuals[i].clone();
        for (k, &idx) in anchor.indices[i].iter().enumerate() {
            let mut row = r.row_mut(k);
            row -= &book.codes.row(idx);
        }
        residuals.push(r);
    }
    let mut z = Array2::zeros(residuals[0].raw_dim());
    for i in 0..n {
        z += &anchor.codes[i];
        z += &residuals[i];
        z -= &anchor.residuals[i];
    }
    let (output, _) = model.decoder.forward(&rows_to_latent(&z, b));
    let surrogate = QuantizationTrace {
        residuals,
        codes: anchor.codes.clone(),
        indices: anchor.indices.clone(),
        n_layers: anchor.n_layers,
    };
    Ok(evaluate(model, batch, &surrogate, &output, n)?.losses.total)
}

/// One gradient-check sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub index: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn within(&self, rel: f64, abs: f64) -> bool {
        let err = (self.analytic - self.numeric).abs();
        err <= abs || err <= rel * self.analytic.abs().max(self.numeric.abs())
    }
}

/// Compares straight-through gradients with central differences of
/// [`frozen_objective`] for every network parameter and every non-pinned
/// codebook entry (`stride` > 1 subsamples entries).
pub fn gradient_check(
    model: &mut CodecModel,
    batch: &Batch,
    n: usize,
    h: f64,
    stride: usize,
) -> Result<Vec<GradCheck>> {
    model.zero_grad();
    let grads = forward_backward(model, batch, n)?;
    let anchor = grads.trace.clone();
    let analytic: Vec<(String, Array2<f64>)> = model
        .named_params_mut()
        .into_iter()
        .map(|(name, p)| (name, p.grad.clone()))
        .collect();
    model.zero_grad();

    let stride = stride.max(1);
    let mut out = Vec::new();
    for (pi, (name, g)) in analytic.iter().enumerate() {
        for (flat, (&ga, idx)) in g.iter().zip(g.indexed_iter().map(|(i, _)| i)).enumerate() {
            if flat % stride != 0 {
                continue;
            }
            let numeric = central_difference(model, batch, &anchor, n, h, |m| {
                &mut m.named_params_mut().into_iter().nth(pi).expect("same order").1.value[idx]
            })?;
            out.push(GradCheck {
                name: name.clone(),
                index: idx,
                analytic: ga,
                numeric,
            });
        }
    }
    for (bi, g) in grads.book_grads.iter().enumerate() {
        for (flat, (idx, &ga)) in g.indexed_iter().enumerate() {
            if flat % stride != 0 || model.stack.books[bi].is_pinned(idx.0) {
                continue;
            }
            let numeric = central_difference(model, batch, &anchor, n, h, |m| {
                &mut m.stack.books[bi].codes[idx]
            })?;
            out.push(GradCheck {
                name: format!("codebook{bi}"),
                index: idx,
                analytic: ga,
                numeric,
            });
        }
    }
    Ok(out)
}

fn central_difference(
    model: &mut CodecModel,
    batch: &Batch,
    anchor: &QuantizationTrace,
    n: usize,
    h: f64,
    slot: impl Fn(&mut CodecModel) -> &mut f64,
) -> Result<f64> {
    let orig = *slot(model);
    *slot(model) = orig + h;
    let plus = frozen_objective(model, batch, anchor, n);
    *slot(model) = orig - h;
    let minus = frozen_objective(model, batch, anchor, n);
    *slot(model) = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Owns a model, its optimizer and its training windows.
pub struct Trainer {
    pub model: CodecModel,
    pub optimizer: Adam,
    pub data: TrainingSet,
    /// Phases of the most recent step.
    pub last_sequence: UpdateSequence,
}

impl Trainer {
    /// Fresh model: normalizer and label alphabet fitted on `clips`.
    pub fn new(config: CodecConfig, clips: &[MotionClip]) -> Result<Self> {
        config.validate()?;
        let first = clips
            .first()
            .ok_or_else(|| Error::Structural("no training clips".into()))?;
        if clips.iter().any(|c| c.skeleton != first.skeleton) {
            return Err(Error::Structural("training clips use different skeletons".into()));
        }
        let labels = label_alphabet(clips)?;
        let normalizer = fit_normalizer(clips)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let optimizer = Adam::new(config.learning_rate);
        let model = CodecModel::new(config, first.skeleton.clone(), normalizer, labels, &mut rng)?;
        Self::resume(model, optimizer, clips)
    }

    /// Continues training an existing model with the given optimizer state.
    /// Labels unknown to the model are appended to its alphabet.
    pub fn resume(mut model: CodecModel, optimizer: Adam, clips: &[MotionClip]) -> Result<Self> {
        for l in label_alphabet(clips)? {
            if !model.labels.contains(&l) {
                model.labels.push(l);
            }
        }
        let data = TrainingSet::build(&model, clips)?;
        Ok(Self {
            model,
            optimizer,
            data,
            last_sequence: UpdateSequence::default(),
        })
    }

    pub fn train_step(&mut self) -> Result<StepReport> {
        let step = self.model.step;
        let mut rng = step_rng(self.model.config.seed, step);
        let depth = self.model.n_books();
        let n = sample_active_layers(depth, &mut rng);
        let indices = self.data.sample_indices(self.model.config.batch_size, &mut rng);
        let batch = self.data.batch(&indices);

        if !self.model.stack.data_initialized {
            let (latent, _) = self.model.encoder.forward(&batch.x);
            self.model.stack.init_from_data(latent_to_rows(&latent).view(), &mut rng)?;
        }

        self.model.zero_grad();
        let grads = forward_backward(&mut self.model, &batch, n)?;
        let mut seq = UpdateSequence::default();

        let mut book_params: Vec<Param> = self
            .model
            .stack
            .books
            .iter()
            .zip(grads.book_grads)
            .map(|(b, g)| Param {
                value: b.codes.clone(),
                grad: g,
            })
            .collect();
        let grad_clip = self.model.config.grad_clip;
        let grad_norm = {
            let mut params = self.model.params_mut();
            params.extend(book_params.iter_mut());
            let norm = clip_grad_norm(&mut params, grad_clip);
            seq.record(UpdatePhase::Grad)?;
            self.optimizer.step(&mut params);
            norm
        };
        for (book, p) in self.model.stack.books.iter_mut().zip(book_params) {
            book.codes = p.value;
            if book.pinned_zero {
                book.codes.row_mut(0).fill(0.0);
            }
            book.sync_ema_sums();
        }

        let trace = &grads.trace;
        let gamma = self.model.stack.gamma;
        seq.record(UpdatePhase::Ema)?;
        for i in 0..n {
            ema_update(
                &mut self.model.stack.books[i],
                trace.residuals[i].view(),
                &trace.indices[i],
                gamma,
            )?;
        }
        self.model.stack.record_usage(trace, n);

        let mut codes_reset = vec![0; depth];
        let window = self.model.config.reset_window;
        if window > 0 && (step + 1).is_multiple_of(window) {
            seq.record(UpdatePhase::Reset)?;
            let threshold = self.model.config.reset_threshold;
            for (i, book) in self.model.stack.books.iter_mut().enumerate() {
                codes_reset[i] = code_reset(book, trace.residuals[i].view(), threshold, &mut rng).len();
            }
        }

        let codes_in_use = trace
            .indices
            .iter()
            .map(|idx| idx.iter().collect::<BTreeSet<_>>().len())
            .collect();
        self.model.zero_grad();
        self.model.step += 1;
        self.last_sequence = seq;
        Ok(StepReport {
            step,
            active_layers: n,
            losses: grads.losses,
            grad_norm,
            codes_in_use,
            codes_reset,
        })
    }

    /// Runs `steps` steps, handing each report to `on_step`.
    pub fn train(&mut self, steps: u64, mut on_step: impl FnMut(&StepReport)) -> Result<()> {
        for _ in 0..steps {
            let r = self.train_step()?;
            log::debug!("step {} n={} total={:.5}", r.step, r.active_layers, r.losses.total);
            on_step(&r);
        }
        Ok(())
    }
}

/// Continues training on `clips` only, with a fresh optimizer state.
pub fn fine_tune(model: CodecModel, clips: &[MotionClip], steps: u64) -> Result<CodecModel> {
    if steps == 0 {
        return Ok(model);
    }
    let optimizer = Adam::new(model.config.learning_rate);
    let mut trainer = Trainer::resume(model, optimizer, clips)?;
    trainer.train(steps, |_| {})?;
    Ok(trainer.model)
}
