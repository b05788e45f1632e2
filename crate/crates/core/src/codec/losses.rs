use nalgebra::{Matrix3, Vector3};
use ndarray::{Array1, Array3, ArrayView2};

use super::config::LossWeights;
use super::model::{stack_windows, CodecModel};
use crate::error::{Error, Result};
use crate::motion::kinematics::{positions_from_orientations, positions_from_orientations_backward};
use crate::motion::rotation::{sixd_backward, sixd_frame, SixdFrame};
use crate::motion::{assemble_features, FeatureLayout, MotionClip, Normalizer, Skeleton};

/// Scalar reconstruction-side loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub rec: f64,
    pub fk: f64,
    pub vel: f64,
    pub acc: f64,
}

impl LossTerms {
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [("rec", self.rec), ("fk", self.fk), ("vel", self.vel), ("acc", self.acc)]
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.rec * self.rec + w.fk * self.fk + w.vel * self.vel + w.acc * self.acc
    }
}

/// Joint positions per frame, `[T][J]`.
pub type Positions = Vec<Vec<Vector3<f64>>>;

struct FramePose {
    frames: Vec<Option<SixdFrame>>,
    positions: Vec<Vector3<f64>>,
}

fn pose_from_row(skeleton: &Skeleton, layout: FeatureLayout, row: &[f64]) -> FramePose {
    let mut frames = Vec::with_capacity(layout.joints());
    let mut mats = Vec::with_capacity(layout.joints());
    for j in 0..layout.joints() {
        let o = layout.orientation(j);
        let mut r6 = [0.0; 6];
        r6.copy_from_slice(&row[o..o + 6]);
        // A degenerate 6D pair contributes identity and no gradient.
        let f = sixd_frame(&r6).ok();
        mats.push(f.map(|f| f.matrix()).unwrap_or_else(Matrix3::identity));
        frames.push(f);
    }
    let p = layout.position(skeleton.root());
    let root = Vector3::new(row[p], row[p + 1], row[p + 2]);
    FramePose {
        frames,
        positions: positions_from_orientations(skeleton, &mats, root),
    }
}

/// Positions obtained by running FK over the orientations stored in raw
/// feature rows.
pub fn fk_positions(skeleton: &Skeleton, raw: ArrayView2<f64>) -> Positions {
    let layout = FeatureLayout::new(skeleton.joint_count());
    raw.rows()
        .into_iter()
        .map(|r| pose_from_row(skeleton, layout, &r.to_vec()).positions)
        .collect()
}

/// Loss values and the coefficient-weighted gradient on the normalized output.
pub struct ReconLoss {
    pub terms: LossTerms,
    pub grad: Array3<f64>,
}

/// Reconstruction, FK, velocity and acceleration losses for a batch.
///
/// `output` and `target` are normalized `[F, B, T]`; `target_positions[b]`
/// holds the ground-truth FK positions of clip `b`.
pub fn reconstruction_losses(
    skeleton: &Skeleton,
    normalizer: &Normalizer,
    feature_weights: &Array1<f64>,
    coef: &LossWeights,
    output: &Array3<f64>,
    target: &Array3<f64>,
    target_positions: &[Positions],
) -> Result<ReconLoss> {
    let (f, b, t) = output.dim();
    if target.dim() != output.dim() || feature_weights.len() != f || target_positions.len() != b {
        return Err(Error::Shape(format!(
            "loss inputs disagree: output {:?}, target {:?}, {} weights, {} position sets",
            output.dim(),
            target.dim(),
            feature_weights.len(),
            target_positions.len()
        )));
    }
    let layout = FeatureLayout::new(skeleton.joint_count());
    let nj = layout.joints();

    let mut grad = Array3::zeros(output.raw_dim());
    let count = (f * b * t) as f64;
    let mut rec = 0.0;
    for ((g, &y), &x) in grad.indexed_iter_mut().zip(output.iter()).zip(target.iter()) {
        let w = feature_weights[g.0 .0];
        let e = w * (y - x);
        rec += e * e;
        *g.1 = coef.rec * 2.0 * w * e / count;
    }
    rec /= count;

    let (mut fk, mut vel, mut acc) = (0.0, 0.0, 0.0);
    let n_fk = (b * t * nj) as f64;
    let n_vel = (b * t.saturating_sub(1) * nj) as f64;
    let n_acc = (b * t.saturating_sub(2) * nj) as f64;
    let mut raw = vec![0.0; f];
    for bi in 0..b {
        let gt = &target_positions[bi];
        if gt.len() != t {
            return Err(Error::Shape(format!("clip {bi}: {} target frames, expected {t}", gt.len())));
        }
        let poses: Vec<FramePose> = (0..t)
            .map(|ti| {
                for (fi, v) in raw.iter_mut().enumerate() {
                    *v = output[[fi, bi, ti]] * normalizer.std[fi] + normalizer.mean[fi];
                }
                pose_from_row(skeleton, layout, &raw)
            })
            .collect();
        let mut dp = vec![vec![Vector3::zeros(); nj]; t];
        for ti in 0..t {
            for j in 0..nj {
                let e = poses[ti].positions[j] - gt[ti][j];
                fk += e.norm_squared();
                dp[ti][j] += e * (2.0 * coef.fk / n_fk);
            }
        }
        for ti in 0..t.saturating_sub(1) {
            for j in 0..nj {
                let v_out = poses[ti + 1].positions[j] - poses[ti].positions[j];
                let v_gt = gt[ti + 1][j] - gt[ti][j];
                let e = v_out - v_gt;
                vel += e.norm_squared();
                let g = e * (2.0 * coef.vel / n_vel);
                dp[ti + 1][j] += g;
                dp[ti][j] -= g;
            }
        }
        for ti in 0..t.saturating_sub(2) {
            for j in 0..nj {
                let a = poses[ti + 2].positions[j] - 2.0 * poses[ti + 1].positions[j]
                    + poses[ti].positions[j];
                acc += a.norm_squared();
                let g = a * (2.0 * coef.acc / n_acc);
                dp[ti + 2][j] += g;
                dp[ti + 1][j] -= 2.0 * g;
                dp[ti][j] += g;
            }
        }
        let root_col = layout.position(skeleton.root());
        for ti in 0..t {
            let (grot, groot) = positions_from_orientations_backward(skeleton, &dp[ti]);
            for k in 0..3 {
                grad[[root_col + k, bi, ti]] += groot[k] * normalizer.std[root_col + k];
            }
            for j in 0..nj {
                if let Some(frame) = &poses[ti].frames[j] {
                    let d6 = sixd_backward(frame, &grot[j]);
                    let o = layout.orientation(j);
                    for k in 0..6 {
                        grad[[o + k, bi, ti]] += d6[k] * normalizer.std[o + k];
                    }
                }
            }
        }
    }
    let div = |s: f64, n: f64| if n > 0.0 { s / n } else { 0.0 };
    Ok(ReconLoss {
        terms: LossTerms {
            rec,
            fk: div(fk, n_fk),
            vel: div(vel, n_vel),
            acc: div(acc, n_acc),
        },
        grad,
    })
}

/// Loss values between a clip and a reconstruction of it.
pub fn loss_suite(model: &CodecModel, clip: &MotionClip, reconstruction: &MotionClip) -> Result<LossTerms> {
    if clip.len() != reconstruction.len()
        || clip.skeleton.joint_count() != reconstruction.skeleton.joint_count()
    {
        return Err(Error::Shape(format!(
            "reconstruction has {} frames × {} joints, clip has {} × {}",
            reconstruction.len(),
            reconstruction.skeleton.joint_count(),
            clip.len(),
            clip.skeleton.joint_count()
        )));
    }
    let x = model.normalize_clip(clip)?;
    let y = model.normalize_clip(reconstruction)?;
    let gt = fk_positions(&model.skeleton, assemble_features(clip)?.view());
    let w = FeatureLayout::new(model.skeleton.joint_count())
        .weights(model.skeleton.root(), model.config.emphasis_weight);
    let unit = LossWeights {
        rec: 1.0,
        fk: 1.0,
        vel: 1.0,
        acc: 1.0,
        commit: 0.0,
        con: 0.0,
        mi: 0.0,
    };
    reconstruction_losses(
        &model.skeleton,
        &model.normalizer,
        &w,
        &unit,
        &stack_windows(&[y.view()]),
        &stack_windows(&[x.view()]),
        &[gt],
    )
    .map(|l| l.terms)
}
