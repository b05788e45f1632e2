//! Flat per-frame feature vectors.
//!
//! Layout per frame, for `J` joints:
//!
//! | block | size | contents |
//! |-------|------|----------|
//! | p     | 3J   | joint positions, root frame |
//! | R     | 6J   | 6D orientations, root frame |
//! | v     | 3J   | linear velocities, root frame |
//! | ω     | 3J   | angular velocities, root frame |
//! | h     | 3    | global root height |
//! | u     | 3    | world up in root frame |
//!
//! giving `F = 15J + 6`.

use std::ops::Range;

use nalgebra::Vector3;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::skeleton::{FrameState, MotionClip, Skeleton};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    joints: usize,
}

impl FeatureLayout {
    pub fn new(joints: usize) -> Self {
        Self { joints }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dim(&self) -> usize {
        15 * self.joints + 6
    }

    pub fn positions(&self) -> Range<usize> {
        0..3 * self.joints
    }

    pub fn orientations(&self) -> Range<usize> {
        3 * self.joints..9 * self.joints
    }

    pub fn velocities(&self) -> Range<usize> {
        9 * self.joints..12 * self.joints
    }

    pub fn angular_velocities(&self) -> Range<usize> {
        12 * self.joints..15 * self.joints
    }

    pub fn height(&self) -> Range<usize> {
        15 * self.joints..15 * self.joints + 3
    }

    pub fn up(&self) -> Range<usize> {
        15 * self.joints + 3..15 * self.joints + 6
    }

    pub fn position(&self, joint: usize) -> usize {
        3 * joint
    }

    pub fn orientation(&self, joint: usize) -> usize {
        3 * self.joints + 6 * joint
    }

    pub fn velocity(&self, joint: usize) -> usize {
        9 * self.joints + 3 * joint
    }

    pub fn angular_velocity(&self, joint: usize) -> usize {
        12 * self.joints + 3 * joint
    }

    /// Per-feature loss weights: 1 everywhere, `emphasis` on the root
    /// linear and angular velocity.
    pub fn weights(&self, root: usize, emphasis: f64) -> Array1<f64> {
        let mut w = Array1::ones(self.dim());
        for start in [self.velocity(root), self.angular_velocity(root)] {
            for i in start..start + 3 {
                w[i] = emphasis;
            }
        }
        w
    }
}

fn put3(row: &mut [f64], at: usize, v: &Vector3<f64>) {
    row[at..at + 3].copy_from_slice(v.as_slice());
}

fn get3(row: &[f64], at: usize) -> Vector3<f64> {
    Vector3::new(row[at], row[at + 1], row[at + 2])
}

pub fn frame_features(frame: &FrameState, layout: FeatureLayout, row: &mut [f64]) {
    for j in 0..layout.joints() {
        put3(row, layout.position(j), &frame.positions[j]);
        let o = layout.orientation(j);
        row[o..o + 6].copy_from_slice(&frame.orientations[j]);
        put3(row, layout.velocity(j), &frame.velocities[j]);
        put3(row, layout.angular_velocity(j), &frame.angular_velocities[j]);
    }
    put3(row, layout.height().start, &frame.root_height);
    put3(row, layout.up().start, &frame.up);
}

pub fn row_to_frame(row: &[f64], layout: FeatureLayout) -> FrameState {
    let j = layout.joints();
    let mut f = FrameState {
        positions: Vec::with_capacity(j),
        orientations: Vec::with_capacity(j),
        velocities: Vec::with_capacity(j),
        angular_velocities: Vec::with_capacity(j),
        root_height: get3(row, layout.height().start),
        up: get3(row, layout.up().start),
    };
    for k in 0..j {
        f.positions.push(get3(row, layout.position(k)));
        let o = layout.orientation(k);
        let mut r6 = [0.0; 6];
        r6.copy_from_slice(&row[o..o + 6]);
        f.orientations.push(r6);
        f.velocities.push(get3(row, layout.velocity(k)));
        f.angular_velocities.push(get3(row, layout.angular_velocity(k)));
    }
    f
}

/// `[T × F]` feature matrix of a clip.
pub fn assemble_features(clip: &MotionClip) -> Result<Array2<f64>> {
    clip.validate()?;
    let layout = FeatureLayout::new(clip.skeleton.joint_count());
    let mut out = Array2::zeros((clip.len(), layout.dim()));
    for (t, frame) in clip.frames.iter().enumerate() {
        let mut row = out.row_mut(t);
        let row = row
            .as_slice_mut()
            .expect("rows of a standard-layout array are contiguous");
        frame_features(frame, layout, row);
    }
    Ok(out)
}

pub fn disassemble_features(
    skeleton: &Skeleton,
    features: ArrayView2<f64>,
    fps: f64,
    style_label: Option<String>,
) -> Result<MotionClip> {
    let layout = FeatureLayout::new(skeleton.joint_count());
    if features.ncols() != layout.dim() {
        return Err(Error::Shape(format!(
            "feature width {} does not match {} for {} joints",
            features.ncols(),
            layout.dim(),
            layout.joints()
        )));
    }
    let frames = features
        .rows()
        .into_iter()
        .map(|r| row_to_frame(&r.to_vec(), layout))
        .collect();
    Ok(MotionClip {
        skeleton: skeleton.clone(),
        frames,
        fps,
        style_label,
    })
}

/// Per-feature standardisation fitted on a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Features whose spread falls below this are centred but not scaled.
    pub const MIN_STD: f64 = 1e-4;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(matrices: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sum_sq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for m in matrices {
            let s = m.sum_axis(Axis(0));
            let q = m.mapv(|v| v * v).sum_axis(Axis(0));
            match (&mut sum, &mut sum_sq) {
                (Some(a), Some(b)) => {
                    if a.len() != s.len() {
                        return Err(Error::Shape("feature widths differ across inputs".into()));
                    }
                    *a += &s;
                    *b += &q;
                }
                _ => {
                    sum = Some(s);
                    sum_sq = Some(q);
                }
            }
            count += m.nrows();
        }
        let (Some(sum), Some(sum_sq)) = (sum, sum_sq) else {
            return Err(Error::Structural("cannot fit a normalizer on no data".into()));
        };
        if count == 0 {
            return Err(Error::Structural("cannot fit a normalizer on no frames".into()));
        }
        let n = count as f64;
        let mean = &sum / n;
        let std = (&sum_sq / n - &mean * &mean).mapv(|v| {
            let s = v.max(0.0).sqrt();
            if s < Self::MIN_STD {
                1.0
            } else {
                s
            }
        });
        Ok(Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn denormalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }
}
