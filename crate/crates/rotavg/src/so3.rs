//! Rotation kernels: exponential and logarithm maps, rotation angles, n-th
//! roots, and nearest-rotation projection.
//!
//! Conventions used throughout the crate:
//!
//! * [`Rotation`] wraps a 3x3 matrix that is orthogonal with determinant +1
//!   within [`ROTATION_TOL`] (Frobenius norm of `R^T R - I`).
//! * [`AxisAngle`] stores a unit axis and an angle in `[0, pi]`. The identity
//!   maps to axis `(0, 0, 1)` and angle `0`. At angle `pi`, where both axis
//!   signs describe the same rotation, the canonical axis has its first
//!   nonzero component positive.
//! * Angles of rotation are computed as `arccos(clamp((trace - 1) / 2, -1, 1))`.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::{PI, TAU};
use std::ops::Mul;
use thiserror::Error;

/// Orthogonality tolerance for accepting a matrix as a rotation.
pub const ROTATION_TOL: f64 = 1e-12;

/// Below this angle the logarithm extracts the axis from the skew part alone.
const SMALL_ANGLE: f64 = 1e-6;

/// Above this angle the logarithm switches to the symmetric-part extraction,
/// which stays well conditioned through `angle = pi`.
const NEAR_PI: f64 = 2.9;

#[derive(Debug, Error)]
pub enum So3Error {
    /// Input matrix is not orthogonal with determinant +1 within tolerance.
    #[error("matrix is not a rotation: orthogonality error {orthogonality:.3e}, det {det:.6}")]
    NotARotation { orthogonality: f64, det: f64 },
    /// Axis is not unit length within tolerance.
    #[error("axis norm {0:.17} is not 1 within 1e-12")]
    NonUnitAxis(f64),
    /// Root count must be at least 1.
    #[error("root count must be >= 1")]
    ZeroRoots,
    /// Matrix entries must be finite.
    #[error("matrix has non-finite entries")]
    NonFinite,
    /// Projection target is rank deficient: the second singular value vanishes
    /// and the nearest rotation is not unique.
    #[error("projection is degenerate: singular values ({0:.3e}, {1:.3e}, {2:.3e})")]
    DegenerateProjection(f64, f64, f64),
}

/// A rotation matrix in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    m: Matrix3<f64>,
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation { m: Matrix3::identity() }
    }

    /// Validates orthogonality (`||R^T R - I||_F <= 1e-12`) and `det R > 0`.
    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self, So3Error> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(So3Error::NonFinite);
        }
        let orthogonality = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if orthogonality > ROTATION_TOL || det < 0.0 {
            return Err(So3Error::NotARotation { orthogonality, det });
        }
        Ok(Rotation { m })
    }

    /// Rodrigues formula. The axis must be unit length within 1e-12; the angle
    /// is unrestricted.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self, So3Error> {
        let norm = axis.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(So3Error::NonUnitAxis(norm));
        }
        let k = skew(axis);
        // 1 - cos(t) = 2 sin^2(t/2) avoids cancellation for small angles.
        let half = 0.5 * angle;
        let s = half.sin();
        let m = Matrix3::identity() + angle.sin() * k + (2.0 * s * s) * (k * k);
        Ok(Rotation { m })
    }

    /// Internal constructor for products and projections that preserve the
    /// invariants up to roundoff.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation { m }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Rotation { m: self.m.transpose() }
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        angle_of(self)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation { m: self.m * rhs.m }
    }
}

impl Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation { m: self.m * rhs.m }
    }
}

/// A unit axis with an angle in `[0, pi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle {
    axis: Vector3<f64>,
    angle: f64,
}

impl AxisAngle {
    /// Wraps the angle into `[0, pi]`, flipping the axis for negative angles.
    pub fn new(axis: Vector3<f64>, angle: f64) -> Result<Self, So3Error> {
        let norm = axis.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(So3Error::NonUnitAxis(norm));
        }
        let mut a = angle % TAU;
        if a > PI {
            a -= TAU;
        } else if a <= -PI {
            a += TAU;
        }
        let axis = if a < 0.0 { -axis } else { axis };
        Ok(AxisAngle { axis, angle: a.abs() })
    }

    pub fn axis(&self) -> &Vector3<f64> {
        &self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }
}

/// The n-th roots of a rotation, all sharing the logarithm axis of the base
/// rotation.
#[derive(Clone, Debug)]
pub struct RootSet {
    roots: Vec<Rotation>,
    axis: Vector3<f64>,
    base_angle: f64,
}

impl RootSet {
    pub fn roots(&self) -> &[Rotation] {
        &self.roots
    }

    pub fn root(&self, k: usize) -> &Rotation {
        &self.roots[k]
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    /// Axis shared by every root (the logarithm axis of the base rotation).
    pub fn axis(&self) -> &Vector3<f64> {
        &self.axis
    }

    /// Angle of the base rotation, in `[0, pi]`.
    pub fn base_angle(&self) -> f64 {
        self.base_angle
    }

    /// Signed angle of root `k` about the shared axis:
    /// `base_angle / n - 2 pi k / n`.
    pub fn root_angle(&self, k: usize) -> f64 {
        let n = self.roots.len() as f64;
        self.base_angle / n - TAU * k as f64 / n
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map of `angle * axis`.
pub fn exp_axis_angle(aa: &AxisAngle) -> Rotation {
    // The axis is unit by construction, so the Rodrigues call cannot fail.
    Rotation::from_axis_angle(&aa.axis, aa.angle).expect("axis-angle invariant violated")
}

/// Logarithm map. Returns the canonical axis-angle form: angle in `[0, pi]`,
/// identity mapped to `((0, 0, 1), 0)`, first nonzero axis component positive
/// at angle `pi`.
pub fn log_rotation(r: &Rotation) -> AxisAngle {
    let m = &r.m;
    let t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // w = sin(angle) * axis, read from the skew part.
    let w = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5;
    let s = w.norm();
    let angle = s.atan2(t);

    let axis = if angle < SMALL_ANGLE {
        if s > 0.0 {
            w / s
        } else {
            Vector3::z()
        }
    } else if angle < NEAR_PI {
        w / s
    } else {
        // Near pi the skew part cancels; recover the axis from the symmetric
        // part, a a^T = (sym(R) - cos(angle) I) / (1 - cos(angle)), and take
        // the sign from w where it is still meaningful.
        let sym = (m + m.transpose()) * 0.5;
        let b = (sym - Matrix3::identity() * t) / (1.0 - t);
        let c = (0..3)
            .max_by(|&a, &bb| b[(a, a)].partial_cmp(&b[(bb, bb)]).unwrap())
            .unwrap();
        let col = b.column(c).into_owned();
        let unsigned = col / col.norm();
        let d = w.dot(&unsigned);
        if d.abs() > 1e-12 {
            unsigned * d.signum()
        } else {
            canonicalize_axis(&unsigned)
        }
    };
    let axis = axis.normalize();
    AxisAngle { axis, angle }
}

/// Rotation angle `arccos(clamp((trace - 1) / 2, -1, 1))`, in `[0, pi]`.
pub fn angle_of(r: &Rotation) -> f64 {
    (((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0)).acos()
}

/// All `n` rotations `X` with `X^n = e`, sharing the logarithm axis of `e`.
/// Root `k` has signed angle `angle(e) / n - 2 pi k / n` about that axis.
pub fn nth_roots(e: &Rotation, n: usize) -> Result<RootSet, So3Error> {
    if n == 0 {
        return Err(So3Error::ZeroRoots);
    }
    let aa = log_rotation(e);
    let axis = *aa.axis();
    let base_angle = aa.angle();
    let nf = n as f64;
    let roots = (0..n)
        .map(|k| {
            let angle = base_angle / nf - TAU * k as f64 / nf;
            Rotation::from_axis_angle(&axis, angle).expect("log axis is unit")
        })
        .collect();
    Ok(RootSet { roots, axis, base_angle })
}

/// Nearest rotation to `m` in Frobenius norm, via SVD with determinant
/// correction. Fails if `m` has non-finite entries or its second singular
/// value vanishes (the projection is then not unique).
pub fn project_to_rotation(m: &Matrix3<f64>) -> Result<Rotation, So3Error> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(So3Error::NonFinite);
    }
    let svd = m
        .try_svd(true, true, f64::EPSILON, 500)
        .ok_or(So3Error::NonFinite)?;
    let sv = svd.singular_values;
    if sv[1] <= 1e-13 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(So3Error::DegenerateProjection(sv[0], sv[1], sv[2]));
    }
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    Ok(Rotation { m: r })
}

/// Flips the sign so the first component larger than 1e-12 in magnitude is
/// positive. Used to disambiguate the axis at angle pi.
fn canonicalize_axis(v: &Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { *v };
        }
    }
    *v
}
