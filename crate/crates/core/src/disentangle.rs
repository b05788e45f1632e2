//! Style/content disentanglement losses.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rvq::{soft_assignments, soft_assignments_backward, Codebook, QuantizationTrace};

/// Mean over each clip's slots of the residual `r[s]` entering the first
/// style book. Trace rows are `clips × slots_per_clip`, clip-major.
pub fn pool_style_embedding(
    trace: &QuantizationTrace,
    s: usize,
    slots_per_clip: usize,
) -> Result<Array2<f64>> {
    if trace.n_layers <= s {
        return Err(Error::Config(format!(
            "style pooling at layer {s} needs more than {s} encoded layers, got {}",
            trace.n_layers
        )));
    }
    pool_rows(&trace.residuals[s], slots_per_clip)
}

pub(crate) fn pool_rows(r: &Array2<f64>, slots_per_clip: usize) -> Result<Array2<f64>> {
    if slots_per_clip == 0 || !r.nrows().is_multiple_of(slots_per_clip) {
        return Err(Error::Shape(format!(
            "{} slots do not split into clips of {slots_per_clip}",
            r.nrows()
        )));
    }
    let clips = r.nrows() / slots_per_clip;
    let mut out = Array2::zeros((clips, r.ncols()));
    for (c, chunk) in r.axis_chunks_iter(Axis(0), slots_per_clip).enumerate() {
        out.row_mut(c)
            .assign(&chunk.mean_axis(Axis(0)).expect("non-empty chunk"));
    }
    Ok(out)
}

/// Spreads a per-clip gradient evenly back over the clip's slots.
pub(crate) fn unpool_rows(grad: &Array2<f64>, slots_per_clip: usize) -> Array2<f64> {
    let mut out = Array2::zeros((grad.nrows() * slots_per_clip, grad.ncols()));
    let scale = 1.0 / slots_per_clip as f64;
    for (c, g) in grad.rows().into_iter().enumerate() {
        for k in 0..slots_per_clip {
            out.row_mut(c * slots_per_clip + k).assign(&(&g * scale));
        }
    }
    out
}

/// Multi-positive contrastive loss over raw dot-product similarities.
///
/// For each anchor, cross entropy between the softmax of `a·b/τ` over the
/// other samples and the uniform distribution over same-label samples.
/// Anchors without a positive are skipped; the loss is the mean over the
/// rest. Returns the loss and its gradient on the embeddings.
pub fn multipos_contrastive(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    let b = embeddings.nrows();
    if labels.len() != b {
        return Err(Error::Structural(format!(
            "{b} embeddings but {} labels",
            labels.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let sims = embeddings.dot(&embeddings.t()) / tau;
    let mut dsims = Array2::<f64>::zeros((b, b));
    let mut loss = 0.0;
    let mut valid = 0usize;
    for a in 0..b {
        let positives = (0..b).filter(|&j| j != a && labels[j] == labels[a]).count();
        if positives == 0 {
            continue;
        }
        valid += 1;
        let max = (0..b)
            .filter(|&j| j != a)
            .map(|j| sims[[a, j]])
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..b).filter(|&j| j != a).map(|j| (sims[[a, j]] - max).exp()).sum();
        let log_z = max + z.ln();
        let target = 1.0 / positives as f64;
        for j in (0..b).filter(|&j| j != a) {
            let log_p = sims[[a, j]] - log_z;
            let t = if labels[j] == labels[a] { target } else { 0.0 };
            loss -= t * log_p;
            dsims[[a, j]] = log_p.exp() - t;
        }
    }
    if valid == 0 {
        return Err(Error::UndefinedLoss(
            "no anchor in the batch has a same-label partner".into(),
        ));
    }
    let n = valid as f64;
    dsims /= n;
    // S = E·Eᵀ/τ, so dE = (dS + dSᵀ)·E/τ.
    let sym = &dsims + &dsims.t();
    let grad = sym.dot(&embeddings) / tau;
    Ok((loss / n, grad))
}

/// Joint table `p(z, l)` (`[X, L]`) from per-row soft assignments.
pub fn assignment_label_joint(q: &Array2<f64>, labels: &[usize], n_labels: usize) -> Array2<f64> {
    let m = q.nrows() as f64;
    let mut joint = Array2::zeros((q.ncols(), n_labels));
    for (row, &l) in q.rows().into_iter().zip(labels) {
        let mut col = joint.column_mut(l);
        col.scaled_add(1.0 / m, &row);
    }
    joint
}

/// Mutual information of a joint distribution table, `0·log 0 = 0`.
pub fn mutual_information(joint: &Array2<f64>) -> f64 {
    let pz = joint.sum_axis(Axis(1));
    let pl = joint.sum_axis(Axis(0));
    let mut mi = 0.0;
    for ((z, l), &p) in joint.indexed_iter() {
        if p > 0.0 {
            mi += p * (p.ln() - pz[z].ln() - pl[l].ln());
        }
    }
    mi
}

fn dense_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut alphabet: Vec<usize> = labels.to_vec();
    alphabet.sort_unstable();
    alphabet.dedup();
    let dense = labels
        .iter()
        .map(|l| alphabet.binary_search(l).expect("label from the same list"))
        .collect();
    (dense, alphabet.len())
}

/// Mutual information between soft code assignments of `residuals` on
/// `book` and the per-row style labels.
pub fn mutual_info_loss(
    book: &Codebook,
    residuals: ArrayView2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<f64> {
    Ok(mutual_info_loss_grad(book, residuals, labels, tau)?.loss)
}

pub struct MiGrad {
    pub loss: f64,
    /// Gradient on the residual rows.
    pub residuals: Array2<f64>,
    /// Gradient on the codebook entries.
    pub codes: Array2<f64>,
}

pub fn mutual_info_loss_grad(
    book: &Codebook,
    residuals: ArrayView2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<MiGrad> {
    if labels.len() != residuals.nrows() {
        return Err(Error::Structural(format!(
            "{} residuals but {} labels",
            residuals.nrows(),
            labels.len()
        )));
    }
    let (dense, n_labels) = dense_labels(labels);
    if n_labels < 2 {
        return Err(Error::UndefinedLoss(
            "mutual information needs at least two distinct labels".into(),
        ));
    }
    let q = soft_assignments(book, residuals, tau)?;
    let joint = assignment_label_joint(&q, &dense, n_labels);
    let loss = mutual_information(&joint);
    let pz = joint.sum_axis(Axis(1));
    let pl = joint.sum_axis(Axis(0));
    // dI/dp(z,l) = log(p(z,l) / (p(z) p(l))) − 1, then through the mean.
    let m = q.nrows() as f64;
    let dp = Array2::from_shape_fn(joint.raw_dim(), |(z, l)| {
        let p = joint[[z, l]];
        if p > 0.0 {
            (p.ln() - pz[z].ln() - pl[l].ln()) - 1.0
        } else {
            0.0
        }
    });
    let mut dq = Array2::zeros(q.raw_dim());
    for (mut row, &l) in dq.rows_mut().into_iter().zip(&dense) {
        row.assign(&(&dp.column(l) / m));
    }
    let mut codes = Array2::zeros(book.codes.raw_dim());
    let dr = soft_assignments_backward(book, residuals, &q, &dq, tau, &mut codes);
    Ok(MiGrad {
        loss,
        residuals: dr,
        codes,
    })
}

/// Phases of one training update, in the order they must happen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdatePhase {
    Grad,
    Ema,
    Reset,
}

/// Records the phases of a step and rejects any codebook mutation that
/// precedes the gradient step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateSequence {
    phases: Vec<UpdatePhase>,
}

impl UpdateSequence {
    pub fn record(&mut self, phase: UpdatePhase) -> Result<()> {
        let ok = match phase {
            UpdatePhase::Grad => self.phases.is_empty(),
            UpdatePhase::Ema => self.phases.last() == Some(&UpdatePhase::Grad),
            UpdatePhase::Reset => matches!(
                self.phases.last(),
                Some(UpdatePhase::Grad | UpdatePhase::Ema)
            ),
        };
        if !ok {
            return Err(Error::Ordering(format!(
                "{phase:?} cannot follow {:?}",
                self.phases
            )));
        }
        self.phases.push(phase);
        Ok(())
    }

    pub fn phases(&self) -> &[UpdatePhase] {
        &self.phases
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvq::{residual_encode, RvqStack};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Mutual information by direct enumeration of the definition.
    fn mi_oracle(q: &Array2<f64>, labels: &[usize], n_labels: usize) -> f64 {
        let m = q.nrows();
        let x = q.ncols();
        let mut joint = vec![vec![0.0; n_labels]; x];
        for k in 0..m {
            for z in 0..x {
                joint[z][labels[k]] += q[[k, z]] / m as f64;
            }
        }
        let mut total = 0.0;
        for z in 0..x {
            let pz: f64 = joint[z].iter().sum();
            for l in 0..n_labels {
                let pl: f64 = (0..x).map(|zz| joint[zz][l]).sum();
                let p = joint[z][l];
                if p > 0.0 {
                    total += p * (p / (pz * pl)).ln();
                }
            }
        }
        total
    }

    #[test]
    fn pooling_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stack = RvqStack::random(3, 4, 2, 0.9, 1, &mut rng).unwrap();
        let r0 = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let t = residual_encode(&stack, r0.view(), 3).unwrap();
        let one = pool_style_embedding(&t, 1, 1).unwrap();
        assert_eq!(one, t.residuals[1]);
        let three = pool_style_embedding(&t, 1, 3).unwrap();
        for c in 0..2 {
            for j in 0..2 {
                let mean = (0..3).map(|k| t.residuals[1][[3 * c + k, j]]).sum::<f64>() / 3.0;
                assert!((three[[c, j]] - mean).abs() < 1e-12);
            }
        }
        let t1 = residual_encode(&stack, r0.view(), 1).unwrap();
        assert!(matches!(pool_style_embedding(&t1, 1, 3), Err(Error::Config(_))));

        let constant = Array2::from_elem((4, 3), 0.25);
        assert_eq!(pool_rows(&constant, 4).unwrap(), Array2::from_elem((1, 3), 0.25));
    }

    #[test]
    fn mutual_information_survives_subnormal_mass() {
        let tiny = 4.9e-324;
        let joint = array![[0.5 - tiny, 0.0], [tiny, 0.5]];
        let mi = mutual_information(&joint);
        assert!(mi.is_finite());
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn contrastive_closed_forms() {
        let e = array![[0.3, -1.0], [2.0, 0.5]];
        let (l, _) = multipos_contrastive(e.view(), &[4, 4], 0.1).unwrap();
        assert!(l.abs() < 1e-12);

        let e = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let (l, _) = multipos_contrastive(e.view(), &[0, 0, 1], 0.5).unwrap();
        // Anchors 0 and 1 each see one positive among two candidates; anchor
        // 2 has no positive and is skipped.
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);

        assert!(matches!(
            multipos_contrastive(e.view(), &[0, 1, 2], 0.5),
            Err(Error::UndefinedLoss(_))
        ));
    }

    #[test]
    fn contrastive_is_shift_invariant() {
        let e = array![[1.0, 0.2, 0.0], [0.4, -0.3, 0.0], [-0.5, 0.9, 0.0]];
        let mut shifted = e.clone();
        shifted.column_mut(2).fill(1.7);
        let labels = [0, 0, 1];
        let base = multipos_contrastive(e.view(), &labels, 0.3).unwrap().0;
        // Every similarity grows by 1.7²/τ.
        let moved = multipos_contrastive(shifted.view(), &labels, 0.3).unwrap().0;
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn contrastive_monotone_in_positive_similarity() {
        let labels = [0, 0, 1];
        let mut e = array![[1.0, 0.0], [0.2, 0.5], [0.0, 1.0]];
        let before = multipos_contrastive(e.view(), &labels, 0.5).unwrap().0;
        e[[1, 0]] += 0.3;
        let after = multipos_contrastive(e.view(), &labels, 0.5).unwrap().0;
        assert!(after < before);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let e = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
            let labels = [0, 1, 0, 2, 1, 2];
            let (_, g) = multipos_contrastive(e.view(), &labels, 0.3).unwrap();
            let h = 1e-6;
            for idx in 0..e.len() {
                let mut p = e.clone();
                p.as_slice_mut().unwrap()[idx] += h;
                let mut m = e.clone();
                m.as_slice_mut().unwrap()[idx] -= h;
                let fd = (multipos_contrastive(p.view(), &labels, 0.3).unwrap().0
                    - multipos_contrastive(m.view(), &labels, 0.3).unwrap().0)
                    / (2.0 * h);
                let an = g.as_slice().unwrap()[idx];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn mi_closed_forms() {
        let b = Codebook::new(array![[0.0], [1.0]]).unwrap();
        let r = array![[0.5], [0.5], [0.5], [0.5]];
        let mi = mutual_info_loss(&b, r.view(), &[0, 1, 0, 1], 1.0).unwrap();
        assert!(mi.abs() < 1e-9);

        let joint = array![[0.5, 0.0], [0.0, 0.5]];
        assert!((mutual_information(&joint) - std::f64::consts::LN_2).abs() < 1e-12);
        // Near one-hot assignments at a tiny temperature.
        let r = array![[0.0], [1.0], [0.0], [1.0]];
        let mi = mutual_info_loss(&b, r.view(), &[3, 8, 3, 8], 1e-4).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-6);

        assert!(matches!(
            mutual_info_loss(&b, r.view(), &[1, 1, 1, 1], 1.0),
            Err(Error::UndefinedLoss(_))
        ));
    }

    #[test]
    fn mi_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Codebook::new(Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0))).unwrap();
        let r = Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
        let labels = [0, 1, 2, 0, 1, 2, 0, 0];
        let g = mutual_info_loss_grad(&b, r.view(), &labels, 0.7).unwrap();
        let f = |b: &Codebook, r: &Array2<f64>| mutual_info_loss(b, r.view(), &labels, 0.7).unwrap();
        let h = 1e-6;
        for idx in 0..r.len() {
            let mut p = r.clone();
            p.as_slice_mut().unwrap()[idx] += h;
            let mut m = r.clone();
            m.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&b, &p) - f(&b, &m)) / (2.0 * h);
            let an = g.residuals.as_slice().unwrap()[idx];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-4), "{fd} vs {an}");
        }
        for idx in 0..b.codes.len() {
            let mut p = b.clone();
            p.codes.as_slice_mut().unwrap()[idx] += h;
            let mut m = b.clone();
            m.codes.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&p, &r) - f(&m, &r)) / (2.0 * h);
            let an = g.codes.as_slice().unwrap()[idx];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-4), "{fd} vs {an}");
        }
    }

    #[test]
    fn update_ordering_contract() {
        let mut seq = UpdateSequence::default();
        seq.record(UpdatePhase::Grad).unwrap();
        seq.record(UpdatePhase::Ema).unwrap();
        seq.record(UpdatePhase::Reset).unwrap();
        assert_eq!(seq.phases(), &[UpdatePhase::Grad, UpdatePhase::Ema, UpdatePhase::Reset]);
        let mut bad = UpdateSequence::default();
        assert!(matches!(bad.record(UpdatePhase::Ema), Err(Error::Ordering(_))));
    }

    fn batch_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        (2usize..10).prop_flat_map(|m| {
            (
                proptest::collection::vec(-2.0f64..2.0, m * 2),
                proptest::collection::vec(0usize..3, m),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn mi_matches_enumeration_and_is_symmetric((values, labels) in batch_strategy()) {
            let (dense, n_labels) = dense_labels(&labels);
            prop_assume!(n_labels >= 2);
            let b = Codebook::new(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
            let r = Array2::from_shape_vec((labels.len(), 2), values).unwrap();
            let q = soft_assignments(&b, r.view(), 0.5).unwrap();
            let mi = mutual_info_loss(&b, r.view(), &labels, 0.5).unwrap();
            prop_assert!((mi - mi_oracle(&q, &dense, n_labels)).abs() < 1e-9);
            prop_assert!(mi >= -1e-9);
            let joint = assignment_label_joint(&q, &dense, n_labels);
            let swapped = joint.t().to_owned();
            prop_assert!((mutual_information(&joint) - mutual_information(&swapped)).abs() < 1e-12);
        }

        #[test]
        fn contrastive_ignores_label_names((values, labels) in batch_strategy()) {
            let e = Array2::from_shape_vec((labels.len(), 2), values).unwrap();
            let renamed: Vec<usize> = labels.iter().map(|l| [7, 2, 5][*l]).collect();
            let a = multipos_contrastive(e.view(), &labels, 0.2);
            let b = multipos_contrastive(e.view(), &renamed, 0.2);
            match (a, b) {
                (Ok((la, _)), Ok((lb, _))) => prop_assert!((la - lb).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "relabelling changed validity"),
            }
        }
    }
}
