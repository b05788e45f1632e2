use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2};

use super::rotation::{rot_y, rotation_between};
use super::skeleton::{MotionClip, Skeleton};
use crate::error::{Error, Result};

/// Global joint positions from parent-relative rotations.
///
/// Rotations compose down the tree; each joint sits at its parent's position
/// plus the parent's global rotation applied to its rest offset.
pub fn forward_kinematics(
    skeleton: &Skeleton,
    local_rotations: &[Matrix3<f64>],
    root_position: Vector3<f64>,
) -> Vec<Vector3<f64>> {
    let n = skeleton.joint_count();
    assert_eq!(local_rotations.len(), n, "one rotation per joint");
    let mut global_rot = vec![Matrix3::identity(); n];
    let mut pos = vec![Vector3::zeros(); n];
    for &j in skeleton.topological_order() {
        match skeleton.parent(j) {
            None => {
                global_rot[j] = local_rotations[j];
                pos[j] = root_position;
            }
            Some(p) => {
                global_rot[j] = global_rot[p] * local_rotations[j];
                pos[j] = pos[p] + global_rot[p] * skeleton.rest_offset(j);
            }
        }
    }
    pos
}

/// Joint positions from orientations that are already expressed in a common
/// (root) frame, as stored in the feature vector. No composition takes place,
/// so an error in one joint's orientation does not propagate to its siblings.
pub fn positions_from_orientations(
    skeleton: &Skeleton,
    orientations: &[Matrix3<f64>],
    root_position: Vector3<f64>,
) -> Vec<Vector3<f64>> {
    let mut pos = vec![Vector3::zeros(); skeleton.joint_count()];
    for &j in skeleton.topological_order() {
        pos[j] = match skeleton.parent(j) {
            None => root_position,
            Some(p) => pos[p] + orientations[p] * skeleton.rest_offset(j),
        };
    }
    pos
}

/// Backward pass of [`positions_from_orientations`]: returns gradients on the
/// orientation matrices and on the root position.
pub fn positions_from_orientations_backward(
    skeleton: &Skeleton,
    grad_positions: &[Vector3<f64>],
) -> (Vec<Matrix3<f64>>, Vector3<f64>) {
    let n = skeleton.joint_count();
    let mut gp = grad_positions.to_vec();
    let mut grot = vec![Matrix3::zeros(); n];
    for &j in skeleton.topological_order().iter().rev() {
        if let Some(p) = skeleton.parent(j) {
            let g = gp[j];
            gp[p] += g;
            grot[p] += g * skeleton.rest_offset(j).transpose();
        }
    }
    (grot, gp[skeleton.root()])
}

/// Forward difference along time (rows), scaled by `fps`. The last frame
/// repeats the previous derivative.
pub fn finite_diff(series: ArrayView2<f64>, fps: f64) -> Result<Array2<f64>> {
    let t = series.nrows();
    if t < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: t });
    }
    let mut out = Array2::zeros(series.raw_dim());
    for i in 0..t - 1 {
        let d = (&series.row(i + 1) - &series.row(i)) * fps;
        out.row_mut(i).assign(&d);
    }
    let prev = out.row(t - 2).to_owned();
    out.row_mut(t - 1).assign(&prev);
    Ok(out)
}

/// Root quantities needed to recover the world trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootKinematics {
    /// Linear velocity in the root frame, m/s.
    pub velocity: Vector3<f64>,
    /// Angular velocity in the root frame, rad/s.
    pub angular_velocity: Vector3<f64>,
    pub up: Vector3<f64>,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootPose {
    pub position: Vector3<f64>,
    /// Yaw about the world up axis, radians; zero faces +z.
    pub heading: f64,
}

impl Default for RootPose {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            heading: 0.0,
        }
    }
}

pub fn root_kinematics(clip: &MotionClip) -> Vec<RootKinematics> {
    let root = clip.skeleton.root();
    clip.frames
        .iter()
        .map(|f| RootKinematics {
            velocity: f.velocities[root],
            angular_velocity: f.angular_velocities[root],
            up: f.up,
            height: f.root_height.y,
        })
        .collect()
}

/// Explicit Euler integration of root-frame velocities into a world trajectory.
///
/// The heading advances by the yaw rate `u·ω`; horizontal motion uses the
/// root velocity rotated by the current heading and the tilt implied by `u`.
/// The height is read directly from each frame. The result has `T + 1`
/// entries: entry `t` is the root before frame `t` is applied, and the last
/// entry is the terminal position after all `T` velocity steps.
pub fn integrate_root(frames: &[RootKinematics], fps: f64, initial: RootPose) -> Vec<Vector3<f64>> {
    let dt = 1.0 / fps;
    let mut out = Vec::with_capacity(frames.len() + 1);
    let mut pos = initial.position;
    let mut heading = initial.heading;
    if let Some(first) = frames.first() {
        pos.y = first.height;
    }
    out.push(pos);
    for (t, f) in frames.iter().enumerate() {
        let up = if f.up.norm() > 1e-9 {
            f.up.normalize()
        } else {
            Vector3::y()
        };
        let tilt = rotation_between(&up, &Vector3::y());
        let world_vel = rot_y(heading) * tilt * f.velocity;
        pos.x += world_vel.x * dt;
        pos.z += world_vel.z * dt;
        pos.y = frames.get(t + 1).map_or(f.height, |n| n.height);
        heading += up.dot(&f.angular_velocity) * dt;
        out.push(pos);
    }
    out
}

/// Root trajectory of a clip, starting from the origin facing +z.
pub fn clip_root_trajectory(clip: &MotionClip) -> Vec<Vector3<f64>> {
    integrate_root(&root_kinematics(clip), clip.fps, RootPose::default())
}
