//! Procedural stylised gaits on a 12-joint skeleton.
//!
//! A content id picks the root path (straight, turn, figure-eight,
//! stop-and-go); a style id picks a deterministic perturbation of the gait
//! (stance width, arm swing, lean, bounce, stiffness). The root path depends
//! only on `(content_id, seed)`, so clips that share content and seed walk the
//! same route regardless of style.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kinematics::positions_from_orientations;
use super::rotation::{log_map, rot_x, rot_y, rot_z, rotmat_to_sixd};
use super::skeleton::{FrameState, MotionClip, Skeleton};
use crate::error::{Error, Result};

pub const SYNTH_FPS: f64 = 30.0;

pub const CONTENT_NAMES: [&str; 4] = ["straight", "turn", "figure_eight", "stop_and_go"];

pub const STYLE_NAMES: [&str; 6] = [
    "neutral",
    "wide_legs",
    "arm_swing",
    "lean_forward",
    "bouncy",
    "stiff",
];

pub mod joint {
    pub const PELVIS: usize = 0;
    pub const CHEST: usize = 1;
    pub const L_SHOULDER: usize = 2;
    pub const L_ELBOW: usize = 3;
    pub const R_SHOULDER: usize = 4;
    pub const R_ELBOW: usize = 5;
    pub const L_HIP: usize = 6;
    pub const L_KNEE: usize = 7;
    pub const L_ANKLE: usize = 8;
    pub const R_HIP: usize = 9;
    pub const R_KNEE: usize = 10;
    pub const R_ANKLE: usize = 11;
}

pub fn style_name(style_id: usize) -> Result<&'static str> {
    STYLE_NAMES
        .get(style_id)
        .copied()
        .ok_or_else(|| Error::Config(format!("unknown synthetic style id {style_id}")))
}

pub fn style_id(name: &str) -> Option<usize> {
    STYLE_NAMES.iter().position(|&n| n == name)
}

pub fn synthetic_skeleton() -> Skeleton {
    use joint::*;
    let mut parents = vec![None; 12];
    let mut offsets = vec![Vector3::zeros(); 12];
    let mut set = |j: usize, p: usize, o: [f64; 3]| {
        parents[j] = Some(p);
        offsets[j] = Vector3::new(o[0], o[1], o[2]);
    };
    set(CHEST, PELVIS, [0.0, 0.45, 0.0]);
    set(L_SHOULDER, CHEST, [0.18, 0.05, 0.0]);
    set(L_ELBOW, L_SHOULDER, [0.0, -0.28, 0.0]);
    set(R_SHOULDER, CHEST, [-0.18, 0.05, 0.0]);
    set(R_ELBOW, R_SHOULDER, [0.0, -0.28, 0.0]);
    set(L_HIP, PELVIS, [0.09, -0.05, 0.0]);
    set(L_KNEE, L_HIP, [0.0, -0.42, 0.0]);
    set(L_ANKLE, L_KNEE, [0.0, -0.40, 0.0]);
    set(R_HIP, PELVIS, [-0.09, -0.05, 0.0]);
    set(R_KNEE, R_HIP, [0.0, -0.42, 0.0]);
    set(R_ANKLE, R_KNEE, [0.0, -0.40, 0.0]);
    Skeleton::new(parents, offsets).expect("synthetic skeleton is a valid tree")
}

#[derive(Debug, Clone, Copy)]
struct StyleParams {
    hip_swing: f64,
    hip_abduction: f64,
    knee_bend: f64,
    knee_static: f64,
    arm_swing: f64,
    arm_abduction: f64,
    elbow_bend: f64,
    lean: f64,
    pelvis_pitch: f64,
    bounce: f64,
    height_offset: f64,
    twist: f64,
}

const NEUTRAL: StyleParams = StyleParams {
    hip_swing: 0.45,
    hip_abduction: 0.04,
    knee_bend: 0.55,
    knee_static: 0.05,
    arm_swing: 0.3,
    arm_abduction: 0.12,
    elbow_bend: 0.25,
    lean: 0.04,
    pelvis_pitch: 0.02,
    bounce: 0.015,
    height_offset: 0.0,
    twist: 0.12,
};

fn style_params(style_id: usize, rng: &mut ChaCha8Rng) -> Result<StyleParams> {
    let mut p = NEUTRAL;
    match style_id {
        0 => {}
        1 => {
            p.hip_abduction = 0.30;
            p.height_offset = -0.02;
            p.arm_abduction = 0.2;
        }
        2 => {
            p.arm_swing = 0.95;
            p.arm_abduction = 0.3;
            p.elbow_bend = 0.1;
            p.twist = 0.25;
        }
        3 => {
            p.lean = 0.4;
            p.pelvis_pitch = 0.1;
            p.arm_abduction = 0.05;
            p.elbow_bend = 0.45;
        }
        4 => {
            p.bounce = 0.04;
            p.knee_bend = 0.95;
            p.knee_static = 0.25;
            p.height_offset = -0.025;
        }
        5 => {
            p.knee_bend = 0.12;
            p.knee_static = 0.0;
            p.hip_swing = 0.25;
            p.arm_swing = 0.06;
            p.elbow_bend = 0.9;
            p.twist = 0.02;
        }
        other => {
            return Err(Error::Config(format!("unknown synthetic style id {other}")));
        }
    }
    let mut jitter = |v: &mut f64| *v *= 1.0 + rng.random_range(-0.08..0.08);
    jitter(&mut p.hip_swing);
    jitter(&mut p.hip_abduction);
    jitter(&mut p.knee_bend);
    jitter(&mut p.arm_swing);
    jitter(&mut p.arm_abduction);
    jitter(&mut p.elbow_bend);
    jitter(&mut p.lean);
    jitter(&mut p.bounce);
    Ok(p)
}

/// Root speed (m/s), yaw rate (rad/s) and gait phase for `n` states.
struct RootPath {
    speed: Vec<f64>,
    yaw_rate: Vec<f64>,
    phase: Vec<f64>,
}

fn root_path(content_id: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<RootPath> {
    let speed_scale = 1.0 + rng.random_range(-0.03..0.03);
    let rate_scale = 1.0 + rng.random_range(-0.05..0.05);
    let offset = rng.random_range(0.0..0.4);
    let phase0 = rng.random_range(0.0..TAU);
    let mut path = RootPath {
        speed: Vec::with_capacity(n),
        yaw_rate: Vec::with_capacity(n),
        phase: Vec::with_capacity(n),
    };
    let mut phase = phase0;
    for t in 0..n {
        let time = t as f64 / SYNTH_FPS;
        let (speed, yaw) = match content_id {
            0 => (1.3, 0.0),
            1 => (1.1, 0.45),
            2 => (1.2, -0.8 * (TAU * (time + offset) / 6.0).sin()),
            3 => (0.75 * (1.0 - (TAU * (time + offset) / 3.5).cos()), 0.0),
            other => {
                return Err(Error::Config(format!("unknown synthetic content id {other}")));
            }
        };
        let speed = speed * speed_scale;
        path.speed.push(speed);
        path.yaw_rate.push(yaw * rate_scale);
        path.phase.push(phase);
        phase += TAU * (0.8 + 0.5 * speed) / SYNTH_FPS;
    }
    Ok(path)
}

fn local_rotations(p: &StyleParams, phase: f64, amp: f64) -> Vec<Matrix3<f64>> {
    use joint::*;
    let s = phase.sin();
    let knee_phase = (phase + 0.5).sin();
    let mut r = vec![Matrix3::identity(); 12];
    r[CHEST] = rot_x(p.lean) * rot_y(p.twist * amp * s);
    r[L_SHOULDER] = rot_z(p.arm_abduction) * rot_x(p.arm_swing * amp * s);
    r[L_ELBOW] = rot_x(-(p.elbow_bend + 0.1 * amp * s));
    r[R_SHOULDER] = rot_z(-p.arm_abduction) * rot_x(-p.arm_swing * amp * s);
    r[R_ELBOW] = rot_x(-(p.elbow_bend - 0.1 * amp * s));
    r[L_HIP] = rot_z(p.hip_abduction) * rot_x(-p.hip_swing * amp * s);
    r[L_KNEE] = rot_x(p.knee_static + p.knee_bend * amp * 0.5 * (1.0 + knee_phase));
    r[L_ANKLE] = rot_x(0.25 * amp * s);
    r[R_HIP] = rot_z(-p.hip_abduction) * rot_x(p.hip_swing * amp * s);
    r[R_KNEE] = rot_x(p.knee_static + p.knee_bend * amp * 0.5 * (1.0 - knee_phase));
    r[R_ANKLE] = rot_x(-0.25 * amp * s);
    r
}

fn seeded(seed: u64, salt: u64, id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ id as u64,
    )
}

/// Deterministic stylised clip of `frames` frames at [`SYNTH_FPS`].
pub fn generate_synthetic(
    content_id: usize,
    style_id: usize,
    frames: usize,
    seed: u64,
) -> Result<MotionClip> {
    let label = style_name(style_id)?;
    if frames == 0 {
        return Err(Error::Config("synthetic clip needs at least one frame".into()));
    }
    let mut root_rng = seeded(seed, 1, content_id);
    let mut style_rng = seeded(seed, 2, style_id);
    let path = root_path(content_id, frames + 1, &mut root_rng)?;
    let params = style_params(style_id, &mut style_rng)?;
    let skeleton = synthetic_skeleton();
    let n = frames + 1;
    let dt = 1.0 / SYNTH_FPS;

    // World-space states, one more than requested so every frame has a
    // forward difference.
    let mut root_pos = Vec::with_capacity(n);
    let mut root_rot = Vec::with_capacity(n);
    let mut joint_orient = Vec::with_capacity(n);
    let mut joint_pos = Vec::with_capacity(n);
    let mut heading = 0.0f64;
    let mut ground = Vector3::zeros();
    for t in 0..n {
        let amp = (path.speed[t] / 1.2).clamp(0.0, 1.2);
        let phase = path.phase[t];
        let height =
            0.92 + params.height_offset + params.bounce * amp * (2.0 * phase).cos();
        let q = rot_y(heading) * rot_x(params.pelvis_pitch) * rot_z(0.04 * amp * phase.sin());
        let locals = local_rotations(&params, phase, amp);
        let mut orient = vec![Matrix3::identity(); 12];
        for &j in skeleton.topological_order() {
            orient[j] = match skeleton.parent(j) {
                None => locals[j],
                Some(p) => orient[p] * locals[j],
            };
        }
        let local_pos = positions_from_orientations(&skeleton, &orient, Vector3::zeros());
        root_pos.push(Vector3::new(ground.x, height, ground.z));
        root_rot.push(q);
        joint_pos.push(local_pos);
        joint_orient.push(orient);

        ground += rot_y(heading) * Vector3::new(0.0, 0.0, path.speed[t] * dt);
        heading += path.yaw_rate[t] * dt;
    }

    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let q = root_rot[t];
        let qt = q.transpose();
        let mut state = FrameState {
            positions: joint_pos[t].clone(),
            orientations: joint_orient[t].iter().map(rotmat_to_sixd).collect(),
            velocities: Vec::with_capacity(12),
            angular_velocities: Vec::with_capacity(12),
            root_height: Vector3::new(0.0, root_pos[t].y, 0.0),
            up: qt * Vector3::y(),
        };
        for j in 0..12 {
            let w0 = root_pos[t] + q * joint_pos[t][j];
            let w1 = root_pos[t + 1] + root_rot[t + 1] * joint_pos[t + 1][j];
            state.velocities.push(qt * (w1 - w0) * SYNTH_FPS);
            let r0 = q * joint_orient[t][j];
            let r1 = root_rot[t + 1] * joint_orient[t + 1][j];
            state
                .angular_velocities
                .push(qt * log_map(&(r1 * r0.transpose())) * SYNTH_FPS);
        }
        out.push(state);
    }
    Ok(MotionClip {
        skeleton,
        frames: out,
        fps: SYNTH_FPS,
        style_label: Some(label.to_string()),
    })
}

/// Mean left/right ankle separation along the lateral axis, meters.
pub fn mean_ankle_separation(clip: &MotionClip) -> f64 {
    let sum: f64 = clip
        .frames
        .iter()
        .map(|f| (f.positions[joint::L_ANKLE].x - f.positions[joint::R_ANKLE].x).abs())
        .sum();
    sum / clip.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::kinematics::clip_root_trajectory;

    fn rms(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
        let n = a.len().min(b.len());
        (a.iter().zip(b).take(n).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / n as f64).sqrt()
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(0, 0, 50, 1).unwrap();
        let b = generate_synthetic(0, 0, 50, 1).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn unknown_ids_are_config_errors() {
        assert!(matches!(generate_synthetic(9, 0, 10, 1), Err(Error::Config(_))));
        assert!(matches!(generate_synthetic(0, 42, 10, 1), Err(Error::Config(_))));
    }

    #[test]
    fn up_vector_is_unit_and_orientations_are_rotations() {
        let clip = generate_synthetic(2, 3, 40, 4).unwrap();
        for f in &clip.frames {
            assert!((f.up.norm() - 1.0).abs() < 1e-6);
            for r6 in &f.orientations {
                let m = crate::motion::rotation::sixd_to_rotmat(r6).unwrap();
                assert!((m.determinant() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn content_defines_the_route() {
        let frames = 128;
        for content in 0..4 {
            let base = clip_root_trajectory(&generate_synthetic(content, 0, frames, 7).unwrap());
            for style in 1..STYLE_NAMES.len() {
                let other =
                    clip_root_trajectory(&generate_synthetic(content, style, frames, 7).unwrap());
                let d = rms(&base, &other);
                assert!(d <= 0.05, "content {content} style {style}: {d}");
            }
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                let ta = clip_root_trajectory(&generate_synthetic(a, 1, frames, 7).unwrap());
                let tb = clip_root_trajectory(&generate_synthetic(b, 1, frames, 7).unwrap());
                let d = rms(&ta, &tb);
                assert!(d >= 0.5, "contents {a},{b}: {d}");
            }
        }
    }
}
