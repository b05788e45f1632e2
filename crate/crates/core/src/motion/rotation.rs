//! Continuous 6D rotation parameterization.
//!
//! A rotation is stored as the first two columns of its matrix. Reconstruction
//! orthonormalizes the pair with Gram–Schmidt and completes the frame with a
//! cross product, so any 6-vector with non-parallel halves maps to a proper
//! rotation.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use crate::error::{Error, Result};

const DEGENERATE_EPS: f64 = 1e-12;

pub fn rotmat_to_sixd(m: &Matrix3<f64>) -> [f64; 6] {
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Intermediate values of the Gram–Schmidt reconstruction, kept for backprop.
#[derive(Debug, Clone, Copy)]
pub struct SixdFrame {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
    a_norm: f64,
    u_norm: f64,
    b: Vector3<f64>,
}

impl SixdFrame {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.e1, self.e2, self.e3])
    }
}

pub fn sixd_frame(r6: &[f64; 6]) -> Result<SixdFrame> {
    let a = Vector3::new(r6[0], r6[1], r6[2]);
    let b = Vector3::new(r6[3], r6[4], r6[5]);
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite 6D rotation".into()));
    }
    let a_norm = a.norm();
    if a_norm < DEGENERATE_EPS {
        return Err(Error::Degenerate("6D rotation has a zero first column".into()));
    }
    let e1 = a / a_norm;
    let u = b - e1 * e1.dot(&b);
    let u_norm = u.norm();
    if u_norm < DEGENERATE_EPS {
        return Err(Error::Degenerate(
            "6D rotation columns are parallel".into(),
        ));
    }
    let e2 = u / u_norm;
    let e3 = e1.cross(&e2);
    Ok(SixdFrame {
        e1,
        e2,
        e3,
        a_norm,
        u_norm,
        b,
    })
}

pub fn sixd_to_rotmat(r6: &[f64; 6]) -> Result<Matrix3<f64>> {
    sixd_frame(r6).map(|f| f.matrix())
}

/// Pulls a gradient on the reconstructed matrix back onto the 6D input.
pub fn sixd_backward(frame: &SixdFrame, grad: &Matrix3<f64>) -> [f64; 6] {
    let g1: Vector3<f64> = grad.column(0).into();
    let g2: Vector3<f64> = grad.column(1).into();
    let g3: Vector3<f64> = grad.column(2).into();
    let SixdFrame {
        e1,
        e2,
        a_norm,
        u_norm,
        b,
        ..
    } = *frame;

    // e3 = e1 × e2
    let mut ge1 = g1 + e2.cross(&g3);
    let ge2 = g2 + g3.cross(&e1);
    // e2 = u / |u|
    let gu = (ge2 - e2 * e2.dot(&ge2)) / u_norm;
    // u = b - (e1·b) e1
    let gb = gu - e1 * e1.dot(&gu);
    ge1 -= gu * e1.dot(&b) + b * e1.dot(&gu);
    // e1 = a / |a|
    let ga = (ge1 - e1 * e1.dot(&ge1)) / a_norm;
    [ga.x, ga.y, ga.z, gb.x, gb.y, gb.z]
}

pub fn axis_angle(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    axis_angle(Vector3::x(), angle)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    axis_angle(Vector3::y(), angle)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    axis_angle(Vector3::z(), angle)
}

/// Rotation vector (axis × angle) of a rotation matrix.
pub fn log_map(m: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*m).scaled_axis()
}

/// Smallest rotation taking `from` onto `to`; identity when they coincide.
pub fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::rotation_between(from, to)
        .map(|r| r.into_inner())
        .unwrap_or_else(|| {
            // Antiparallel: any half-turn about an axis orthogonal to `from`.
            let axis = if from.x.abs() < 0.9 {
                from.cross(&Vector3::x())
            } else {
                from.cross(&Vector3::z())
            };
            axis_angle(axis, std::f64::consts::PI)
        })
}
