//! Residual vector quantization.
//!
//! Layer `i` quantizes the residual `r[i]` against codebook `i` and passes
//! `r[i+1] = r[i] − z[i]` on. Backward follows the straight-through rule:
//! a gradient arriving at `z[i]` is handed to `r[i]` unchanged, the residual
//! branch carries nothing further upstream, and a gradient on `r[i+1]` lands
//! on the selected code of book `i` with a negative sign. Only `r[0]` feeds
//! back into the encoder.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `[X, d]`.
    pub codes: Array2<f64>,
    pub ema_count: Array1<f64>,
    pub ema_sum: Array2<f64>,
    /// Selections since the last reset check.
    pub usage: Vec<u64>,
    /// Row 0 is a fixed zero vector, exempt from every update.
    pub pinned_zero: bool,
}

impl Codebook {
    pub fn new(codes: Array2<f64>) -> Result<Self> {
        if codes.nrows() < 2 {
            return Err(Error::Config(format!(
                "a codebook needs at least 2 codes, got {}",
                codes.nrows()
            )));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("codebook holds non-finite values".into()));
        }
        let x = codes.nrows();
        Ok(Self {
            ema_count: Array1::ones(x),
            ema_sum: codes.clone(),
            usage: vec![0; x],
            pinned_zero: false,
            codes,
        })
    }

    pub fn with_pinned_zero(mut codes: Array2<f64>) -> Result<Self> {
        codes.row_mut(0).fill(0.0);
        let mut book = Self::new(codes)?;
        book.pinned_zero = true;
        Ok(book)
    }

    pub fn size(&self) -> usize {
        self.codes.nrows()
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    pub fn is_pinned(&self, index: usize) -> bool {
        self.pinned_zero && index == 0
    }

    /// Nearest code by squared Euclidean distance, lowest index on ties.
    pub fn nearest(&self, r: ArrayView1<f64>) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.codes.rows().into_iter().enumerate() {
            let d: f64 = c.iter().zip(r.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Re-anchors the EMA sums on the current codes (`μ = N·c`), so that a
    /// gradient step taken on the codes survives the next EMA update.
    pub fn sync_ema_sums(&mut self) {
        for i in 0..self.size() {
            let n = self.ema_count[i];
            let c = self.codes.row(i).to_owned();
            self.ema_sum.row_mut(i).assign(&(c * n));
        }
    }
}

pub fn quantize_one(book: &Codebook, r: ArrayView1<f64>) -> Result<(usize, Array1<f64>)> {
    if r.len() != book.dim() {
        return Err(Error::Structural(format!(
            "vector of dimension {} against codebook of dimension {}",
            r.len(),
            book.dim()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("cannot quantize a non-finite vector".into()));
    }
    let (i, _) = book.nearest(r);
    Ok((i, book.codes.row(i).to_owned()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqStack {
    pub books: Vec<Codebook>,
    pub gamma: f64,
    /// Number of leading content books.
    pub content_cutoff: usize,
    pub data_initialized: bool,
}

impl RvqStack {
    pub fn new(books: Vec<Codebook>, gamma: f64, content_cutoff: usize) -> Result<Self> {
        if books.is_empty() {
            return Err(Error::Config("an RVQ stack needs at least one codebook".into()));
        }
        if !(content_cutoff >= 1 && content_cutoff < books.len()) && books.len() > 1 {
            return Err(Error::Config(format!(
                "content cutoff {content_cutoff} must lie in [1, {})",
                books.len()
            )));
        }
        let d = books[0].dim();
        if books.iter().any(|b| b.dim() != d) {
            return Err(Error::Structural("codebooks disagree on dimension".into()));
        }
        check_gamma(gamma)?;
        Ok(Self {
            books,
            gamma,
            content_cutoff,
            data_initialized: false,
        })
    }

    /// `n_books` books of `codes` random vectors each, row 0 pinned at zero.
    pub fn random(
        n_books: usize,
        codes: usize,
        dim: usize,
        gamma: f64,
        content_cutoff: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let books = (0..n_books)
            .map(|_| {
                Codebook::with_pinned_zero(Array2::from_shape_fn((codes, dim), |_| {
                    rng.random_range(-0.1..0.1)
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(books, gamma, content_cutoff)
    }

    pub fn len(&self) -> usize {
        self.books.len()
    }

    pub fn is_empty(&self) -> bool {
        self.books.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.books[0].dim()
    }

    /// Seeds each book, in order, with distinct rows of the residual it sees.
    pub fn init_from_data(&mut self, r0: ArrayView2<f64>, rng: &mut impl Rng) -> Result<()> {
        if r0.nrows() == 0 {
            return Err(Error::Structural("cannot initialise codebooks from no data".into()));
        }
        let mut r = r0.to_owned();
        for book in &mut self.books {
            let first = usize::from(book.pinned_zero);
            let wanted = book.size() - first;
            let rows: Vec<usize> = if r.nrows() >= wanted {
                sample(rng, r.nrows(), wanted).into_vec()
            } else {
                (0..wanted).map(|_| rng.random_range(0..r.nrows())).collect()
            };
            for (slot, &row) in rows.iter().enumerate() {
                book.codes.row_mut(first + slot).assign(&r.row(row));
            }
            book.ema_count.fill(1.0);
            book.ema_sum.assign(&book.codes);
            book.usage.fill(0);
            for mut row in r.rows_mut() {
                let (i, _) = book.nearest(row.view());
                row -= &book.codes.row(i);
            }
        }
        self.data_initialized = true;
        Ok(())
    }

    pub fn record_usage(&mut self, trace: &QuantizationTrace, n_layers: usize) {
        for (book, idx) in self.books.iter_mut().zip(&trace.indices).take(n_layers) {
            for &i in idx {
                book.usage[i] += 1;
            }
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(Error::Config(format!("EMA discount {gamma} outside [0, 1]")))
    }
}

/// Residuals, codes and indices of one encoding; rows are latent slots.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationTrace {
    /// `N + 1` residual matrices; the last one is the unencoded remainder.
    pub residuals: Vec<Array2<f64>>,
    /// `N` code matrices, zero for layers at or beyond `n_layers`.
    pub codes: Vec<Array2<f64>>,
    /// Selected indices for the `n_layers` encoded layers.
    pub indices: Vec<Vec<usize>>,
    pub n_layers: usize,
}

impl QuantizationTrace {
    pub fn slots(&self) -> usize {
        self.residuals[0].nrows()
    }

    pub fn depth(&self) -> usize {
        self.codes.len()
    }
}

pub fn residual_encode(
    stack: &RvqStack,
    r0: ArrayView2<f64>,
    n_layers: usize,
) -> Result<QuantizationTrace> {
    if r0.ncols() != stack.dim() {
        return Err(Error::Structural(format!(
            "latent width {} does not match codebook dimension {}",
            r0.ncols(),
            stack.dim()
        )));
    }
    if n_layers == 0 || n_layers > stack.len() {
        return Err(Error::Config(format!(
            "active layers {n_layers} outside [1, {}]",
            stack.len()
        )));
    }
    if r0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("latent holds non-finite values".into()));
    }
    let mut residuals = vec![r0.to_owned()];
    let mut codes = Vec::with_capacity(stack.len());
    let mut indices = Vec::with_capacity(n_layers);
    for (layer, book) in stack.books.iter().enumerate() {
        let r = residuals.last().expect("non-empty");
        let mut z = Array2::zeros(r.raw_dim());
        if layer < n_layers {
            let mut idx = Vec::with_capacity(r.nrows());
            for (k, row) in r.rows().into_iter().enumerate() {
                let (i, _) = book.nearest(row);
                z.row_mut(k).assign(&book.codes.row(i));
                idx.push(i);
            }
            indices.push(idx);
        }
        let next = r - &z;
        codes.push(z);
        residuals.push(next);
    }
    Ok(QuantizationTrace {
        residuals,
        codes,
        indices,
        n_layers,
    })
}

pub fn sum_codes(trace: &QuantizationTrace, layers: impl IntoIterator<Item = usize>) -> Array2<f64> {
    let mut out = Array2::zeros(trace.residuals[0].raw_dim());
    for l in layers {
        out += &trace.codes[l];
    }
    out
}

/// Number of decoding layers for a training step, uniform on `1..=n`.
pub fn sample_active_layers(n: usize, rng: &mut impl Rng) -> usize {
    rng.random_range(1..=n.max(1))
}

pub fn ema_update(
    book: &mut Codebook,
    residuals: ArrayView2<f64>,
    assignments: &[usize],
    gamma: f64,
) -> Result<()> {
    check_gamma(gamma)?;
    if residuals.nrows() != assignments.len() {
        return Err(Error::Structural(format!(
            "{} residuals but {} assignments",
            residuals.nrows(),
            assignments.len()
        )));
    }
    let mut counts = vec![0usize; book.size()];
    let mut sums = Array2::zeros(book.codes.raw_dim());
    for (row, &i) in residuals.rows().into_iter().zip(assignments) {
        counts[i] += 1;
        let mut s = sums.row_mut(i);
        s += &row;
    }
    for i in 0..book.size() {
        if book.is_pinned(i) {
            continue;
        }
        book.ema_count[i] = gamma * book.ema_count[i] + (1.0 - gamma) * counts[i] as f64;
        let mu = &book.ema_sum.row(i) * gamma + &sums.row(i) * (1.0 - gamma);
        book.ema_sum.row_mut(i).assign(&mu);
        if counts[i] > 0 && book.ema_count[i] > 0.0 {
            let c = mu / book.ema_count[i];
            book.codes.row_mut(i).assign(&c);
        }
    }
    Ok(())
}

/// Replaces codes used fewer than `threshold` times since the last call by
/// random rows of `batch_residuals`. Returns the replaced indices.
pub fn code_reset(
    book: &mut Codebook,
    batch_residuals: ArrayView2<f64>,
    threshold: u64,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut replaced = Vec::new();
    if batch_residuals.nrows() == 0 {
        return replaced;
    }
    for i in 0..book.size() {
        if book.is_pinned(i) || book.usage[i] >= threshold {
            continue;
        }
        let row = batch_residuals.row(rng.random_range(0..batch_residuals.nrows()));
        book.codes.row_mut(i).assign(&row);
        book.ema_sum.row_mut(i).assign(&row);
        book.ema_count[i] = 1.0;
        replaced.push(i);
    }
    book.usage.fill(0);
    replaced
}

/// Mean squared distance between residuals and their (frozen) codes over the
/// first `n_layers` layers, with its gradient on each `r[i]`.
pub fn commitment_loss(trace: &QuantizationTrace, n_layers: usize) -> (f64, Vec<Array2<f64>>) {
    let count = (n_layers * trace.slots()).max(1) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let diff = &trace.residuals[i] - &trace.codes[i];
        loss += diff.iter().map(|v| v * v).sum::<f64>();
        grads.push(diff * (2.0 / count));
    }
    (loss / count, grads)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("temperature must be positive, got {tau}")))
    }
}

/// `q_i ∝ exp(−‖r − c_i‖² / τ)`.
pub fn soft_assignment(book: &Codebook, r: ArrayView1<f64>, tau: f64) -> Result<Array1<f64>> {
    check_tau(tau)?;
    let logits: Array1<f64> = book
        .codes
        .rows()
        .into_iter()
        .map(|c| -c.iter().zip(r.iter()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / tau)
        .collect();
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let total = e.sum();
    Ok(e / total)
}

/// Soft assignments for every row of `r` (`[M, X]`).
pub fn soft_assignments(book: &Codebook, r: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
    let mut q = Array2::zeros((r.nrows(), book.size()));
    for (k, row) in r.rows().into_iter().enumerate() {
        q.row_mut(k).assign(&soft_assignment(book, row, tau)?);
    }
    Ok(q)
}

/// Backward of [`soft_assignments`]: given `dL/dq`, returns `dL/dr` and
/// accumulates `dL/dc` into `code_grad`.
pub fn soft_assignments_backward(
    book: &Codebook,
    r: ArrayView2<f64>,
    q: &Array2<f64>,
    dq: &Array2<f64>,
    tau: f64,
    code_grad: &mut Array2<f64>,
) -> Array2<f64> {
    let mut dr = Array2::zeros(r.raw_dim());
    for k in 0..r.nrows() {
        let qk = q.row(k);
        let gk = dq.row(k);
        let mean: f64 = qk.iter().zip(gk.iter()).map(|(a, b)| a * b).sum();
        let rk = r.row(k);
        for i in 0..book.size() {
            // dL/d(logit_i), with logit_i = −‖r − c_i‖²/τ.
            let da = qk[i] * (gk[i] - mean);
            if da == 0.0 {
                continue;
            }
            let diff = &rk - &book.codes.row(i);
            let scale = 2.0 * da / tau;
            let mut drk = dr.row_mut(k);
            drk.scaled_add(-scale, &diff);
            let mut dc = code_grad.row_mut(i);
            dc.scaled_add(scale, &diff);
        }
    }
    dr
}

/// Gradients arriving at a trace: on residuals (`N + 1` entries) and on the
/// decoder-path codes (`N` entries).
#[derive(Debug, Clone)]
pub struct TraceGrads {
    pub residuals: Vec<Array2<f64>>,
    pub codes: Vec<Array2<f64>>,
}

impl TraceGrads {
    pub fn zeros(trace: &QuantizationTrace) -> Self {
        let z = Array2::zeros(trace.residuals[0].raw_dim());
        Self {
            residuals: vec![z.clone(); trace.residuals.len()],
            codes: vec![z; trace.codes.len()],
        }
    }
}

/// Straight-through backward. Accumulates codebook gradients into
/// `book_grads` and returns the gradient on `r[0]`.
pub fn straight_through_backward(
    trace: &QuantizationTrace,
    grads: &TraceGrads,
    book_grads: &mut [Array2<f64>],
) -> Array2<f64> {
    let n = trace.depth();
    let mut carry = grads.residuals[n].clone();
    for i in (1..=n).rev() {
        // `carry` is the total gradient on r[i].
        let layer = i - 1;
        if layer < trace.n_layers {
            for (k, &idx) in trace.indices[layer].iter().enumerate() {
                let mut g = book_grads[layer].row_mut(idx);
                g -= &carry.row(k);
            }
            carry = &grads.residuals[layer] + &grads.codes[layer];
        } else {
            carry = carry + &grads.residuals[layer] + &grads.codes[layer];
        }
    }
    carry
}

/// Mean over slots of each residual `r[i]`, `i ∈ [0, N]`, for rows
/// `[start, start + len)` of a trace.
pub fn pooled_residuals(trace: &QuantizationTrace, start: usize, len: usize) -> Vec<Array1<f64>> {
    trace
        .residuals
        .iter()
        .map(|r| {
            r.slice(s![start..start + len, ..])
                .mean_axis(Axis(0))
                .expect("non-empty slot range")
        })
        .collect()
}
