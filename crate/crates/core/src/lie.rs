//! SE(3) geometry with right-perturbation conventions.
//!
//! Tangent vectors are ordered `(rho, phi)`: translation first, then the
//! axis-angle rotation. Group elements store a unit quaternion and a
//! translation. The manifold operators are
//!
//! * `x ⊕ ξ = x · exp(ξ)`
//! * `a ⊖ b = log(b⁻¹ · a)`
//!
//! so that `b ⊕ (a ⊖ b) = a`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};

/// Below this rotation angle exp/log switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Rotation angles within this distance of π are flagged by [`log_with_flag`].
pub const NEAR_PI: f64 = 1e-6;

/// Element of se(3) in `(rho, phi)` order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentPose {
    /// Translational component (meters).
    pub rho: Vector3<f64>,
    /// Rotational component, axis-angle (radians).
    pub phi: Vector3<f64>,
}

impl TangentPose {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        Self::new(
            Vector3::new(c[0], c[1], c[2]),
            Vector3::new(c[3], c[4], c[5]),
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.rho.norm_squared() + self.phi.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }
}

impl Add for TangentPose {
    type Output = TangentPose;
    fn add(self, rhs: TangentPose) -> TangentPose {
        TangentPose::new(self.rho + rhs.rho, self.phi + rhs.phi)
    }
}

impl Sub for TangentPose {
    type Output = TangentPose;
    fn sub(self, rhs: TangentPose) -> TangentPose {
        TangentPose::new(self.rho - rhs.rho, self.phi - rhs.phi)
    }
}

impl Neg for TangentPose {
    type Output = TangentPose;
    fn neg(self) -> TangentPose {
        TangentPose::new(-self.rho, -self.phi)
    }
}

impl Mul<f64> for TangentPose {
    type Output = TangentPose;
    fn mul(self, rhs: f64) -> TangentPose {
        TangentPose::new(self.rho * rhs, self.phi * rhs)
    }
}

/// Rigid transform: unit quaternion rotation plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupPose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for GroupPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for GroupPose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.canonical().rotation;
        let t = self.translation;
        write!(
            f,
            "t=[{:.6}, {:.6}, {:.6}] q=[w {:.6}, x {:.6}, y {:.6}, z {:.6}]",
            t.x, t.y, t.z, q.w, q.i, q.j, q.k
        )
    }
}

impl GroupPose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a (possibly unnormalized) quaternion.
    pub fn new(rotation: Quaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalized(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self {
            rotation,
            translation: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(rotation.into_inner(), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Same transform with the quaternion sign chosen so that `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.rotation.w < 0.0 {
            Self {
                rotation: UnitQuaternion::new_unchecked(-self.rotation.into_inner()),
                translation: self.translation,
            }
        } else {
            *self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.coords.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Max-abs distance between the two poses, insensitive to the
    /// quaternion double cover.
    pub fn distance(&self, other: &GroupPose) -> f64 {
        let dt = (self.translation - other.translation).amax();
        let qa = self.rotation.coords;
        let qb = other.rotation.coords;
        let dq = (qa - qb).amax().min((qa + qb).amax());
        dt.max(dq)
    }

    pub fn approx_eq(&self, other: &GroupPose, tol: f64) -> bool {
        self.distance(other) <= tol
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn renormalized(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    // leave already-unit quaternions bit-for-bit untouched
    if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
        UnitQuaternion::new_unchecked(q)
    } else {
        UnitQuaternion::new_normalize(q)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Scalar coefficients of the closed-form exponential.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ExpCoefficients {
    /// cos(θ/2)
    cos_half: f64,
    /// sin(θ/2)/θ
    sin_half_over_theta: f64,
    /// (1 − cos θ)/θ²
    a: f64,
    /// (θ − sin θ)/θ³
    b: f64,
}

pub(crate) fn exp_coefficients_series(theta_sq: f64) -> ExpCoefficients {
    let t2 = theta_sq;
    let t4 = t2 * t2;
    ExpCoefficients {
        cos_half: 1.0 - t2 / 8.0 + t4 / 384.0,
        sin_half_over_theta: 0.5 - t2 / 48.0 + t4 / 3840.0,
        a: 0.5 - t2 / 24.0 + t4 / 720.0,
        b: 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
    }
}

pub(crate) fn exp_coefficients_closed(theta_sq: f64) -> ExpCoefficients {
    let theta = theta_sq.sqrt();
    let (s, c) = (theta * 0.5).sin_cos();
    ExpCoefficients {
        cos_half: c,
        sin_half_over_theta: s / theta,
        a: 2.0 * s * s / theta_sq,
        b: (theta - theta.sin()) / (theta_sq * theta),
    }
}

fn exp_coefficients(theta_sq: f64) -> ExpCoefficients {
    if theta_sq < SMALL_ANGLE * SMALL_ANGLE {
        exp_coefficients_series(theta_sq)
    } else {
        exp_coefficients_closed(theta_sq)
    }
}

pub(crate) fn exp_with(xi: &TangentPose, coeffs: ExpCoefficients) -> GroupPose {
    let k = skew(&xi.phi);
    let v = Matrix3::identity() + k * coeffs.a + k * k * coeffs.b;
    let qv = xi.phi * coeffs.sin_half_over_theta;
    GroupPose {
        rotation: renormalized(Quaternion::new(coeffs.cos_half, qv.x, qv.y, qv.z)),
        translation: v * xi.rho,
    }
}

/// Exponential map se(3) → SE(3).
pub fn exp(xi: &TangentPose) -> GroupPose {
    exp_with(xi, exp_coefficients(xi.phi.norm_squared()))
}

/// Logarithm plus a flag for rotations within [`NEAR_PI`] of π, where the
/// rotation axis is poorly conditioned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogOutput {
    pub tangent: TangentPose,
    pub near_pi: bool,
}

/// Logarithm map SE(3) → se(3), returning the representative with ‖phi‖ ≤ π.
pub fn log_with_flag(g: &GroupPose) -> LogOutput {
    let q = g.canonical().rotation;
    let w = q.w;
    let v = q.imag();
    let n = v.norm();
    // atan2 stays well conditioned both near 0 and near π
    let theta = 2.0 * n.atan2(w);

    let phi_per_v = if theta < SMALL_ANGLE {
        let x2 = (n / w) * (n / w);
        2.0 / w * (1.0 - x2 / 3.0 + x2 * x2 / 5.0)
    } else {
        theta / n
    };
    let phi = v * phi_per_v;
    let theta_sq = theta * theta;

    // V⁻¹ = I − ½K + c K² with c = (1 − (θ/2)·cot(θ/2)) / θ²
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq / 30240.0
    } else {
        (1.0 - 0.5 * theta * w / n) / theta_sq
    };
    let k = skew(&phi);
    let v_inv = Matrix3::identity() - k * 0.5 + k * k * c;

    LogOutput {
        tangent: TangentPose::new(v_inv * g.translation, phi),
        near_pi: (theta - std::f64::consts::PI).abs() < NEAR_PI,
    }
}

pub fn log(g: &GroupPose) -> TangentPose {
    log_with_flag(g).tangent
}

/// Group product `a · b`.
pub fn compose(a: &GroupPose, b: &GroupPose) -> GroupPose {
    GroupPose {
        rotation: renormalized(a.rotation.into_inner() * b.rotation.into_inner()),
        translation: a.translation + a.rotation * b.translation,
    }
}

pub fn inverse(g: &GroupPose) -> GroupPose {
    let r_inv = g.rotation.inverse();
    GroupPose {
        rotation: r_inv,
        translation: -(r_inv * g.translation),
    }
}

/// `x ⊕ ξ = x · exp(ξ)`
pub fn oplus(x: &GroupPose, xi: &TangentPose) -> GroupPose {
    compose(x, &exp(xi))
}

/// `a ⊖ b = log(b⁻¹ · a)`
pub fn ominus(a: &GroupPose, b: &GroupPose) -> TangentPose {
    log(&compose(&inverse(b), a))
}

pub fn ominus_with_flag(a: &GroupPose, b: &GroupPose) -> LogOutput {
    log_with_flag(&compose(&inverse(b), a))
}

/// Adjoint matrix `[[R, [t]×R], [0, R]]`, satisfying
/// `g · exp(ξ) · g⁻¹ = exp(Ad(g) ξ)`.
pub fn adjoint(g: &GroupPose) -> Matrix6<f64> {
    let r = g.rotation_matrix();
    let tr = skew(&g.translation) * r;
    let mut ad = Matrix6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(0, 3).copy_from(&tr);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad
}

/// Central-difference Jacobian of a tangent-to-tangent map.
///
/// `step` must lie in `[1e-8, 1e-3]`.
pub fn numeric_jacobian<F>(f: F, at: &TangentPose, step: f64) -> Matrix6<f64>
where
    F: Fn(&TangentPose) -> TangentPose,
{
    assert!(
        (1e-8..=1e-3).contains(&step),
        "numeric_jacobian step {step} outside [1e-8, 1e-3]"
    );
    let x = at.to_vector();
    let mut jac = Matrix6::zeros();
    for j in 0..6 {
        let mut plus = x;
        let mut minus = x;
        plus[j] += step;
        minus[j] -= step;
        let fp = f(&TangentPose::from_vector(&plus)).to_vector();
        let fm = f(&TangentPose::from_vector(&minus)).to_vector();
        jac.set_column(j, &((fp - fm) / (2.0 * step)));
    }
    jac
}
