//! SO(3) rotation algebra: skew operator, exponential and logarithm maps,
//! and orthonormality maintenance.
//!
//! Rotations are stored as 3x3 matrices. The exp/log maps use Rodrigues'
//! formula with a 4th-order series fallback below [`SMALL_ANGLE`] and a
//! symmetric-part axis extraction near pi, where the antisymmetric part
//! loses the axis.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;
use std::ops::Mul;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Frobenius tolerance for accepting a matrix as orthonormal with det +1.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Below this angle (rad) exp/log switch to their 4th-order series, avoiding
/// the 0/0 in the Rodrigues coefficients.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Within this angle of pi the log axis comes from the symmetric part of R;
/// the sign still comes from the antisymmetric part.
const NEAR_PI: f64 = 1e-3;

/// Within this angle of pi the sign of the rotation vector is numerically
/// meaningless and the result is flagged ambiguous.
const PI_AMBIGUITY: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("matrix is not orthonormal: ||R^T R - I||_F = {defect:.3e}")]
    NotOrthonormal { defect: f64 },
    #[error("matrix determinant is not acceptable: det = {det:.6}")]
    BadDeterminant { det: f64 },
    #[error("matrix has non-finite entries")]
    NotFinite,
}

/// Skew-symmetric matrix of `a`, so that `skew(a) * b == a.cross(&b)`.
#[rustfmt::skip]
pub fn skew(a: Vec3) -> Mat3 {
    Mat3::new(
         0.0, -a.z,  a.y,
         a.z,  0.0, -a.x,
        -a.y,  a.x,  0.0,
    )
}

/// Rotation vector (axis times angle, radians) together with the flag raised
/// when the angle is within tolerance of pi, where `v` and `-v` encode the
/// same rotation.
#[derive(Clone, Copy, Debug)]
pub struct RotationVector {
    pub vector: Vec3,
    pub pi_ambiguous: bool,
}

/// An element of SO(3), stored as an orthonormal matrix with det +1.
///
/// For a rotation taking frame B coordinates to frame A coordinates
/// (`v_A = R_AB * v_B`), the matrix is applied with [`Rotation::mul`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Frobenius norm of `M^T M - I`.
    pub fn orthonormality_defect(m: &Mat3) -> f64 {
        (m.transpose() * m - Mat3::identity()).norm()
    }

    /// Validates orthonormality within [`ORTHONORMALITY_TOL`] and det = +1.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NotFinite);
        }
        let defect = Self::orthonormality_defect(&m);
        if defect > ORTHONORMALITY_TOL {
            return Err(GeometryError::NotOrthonormal { defect });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::BadDeterminant { det });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix that is known to be a rotation (e.g. a product of
    /// validated rotations). No check is performed.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Exponential map: Rodrigues' formula, series expansion below
    /// [`SMALL_ANGLE`].
    pub fn exp(v: Vec3) -> Self {
        let theta2 = v.norm_squared();
        let theta = theta2.sqrt();
        let (a, b) = if theta < SMALL_ANGLE {
            (
                1.0 - theta2 / 6.0 * (1.0 - theta2 / 20.0),
                0.5 - theta2 / 24.0 * (1.0 - theta2 / 30.0),
            )
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        let k = skew(v);
        Rotation(Mat3::identity() + k * a + k * k * b)
    }

    /// Logarithm map. Returns the canonical rotation vector with angle in
    /// [0, pi]; at pi (both signs valid) the representative with its first
    /// nonzero component positive is returned and the result is flagged.
    pub fn log(&self) -> RotationVector {
        let m = &self.0;
        // w = vee(R - R^T) / 2 = sin(theta) * axis
        let w = Vec3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        ) * 0.5;
        let s = w.norm().min(1.0);
        let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = s.atan2(c);

        if theta < SMALL_ANGLE {
            let f = 1.0 + theta * theta / 6.0 + 7.0 * theta.powi(4) / 360.0;
            return RotationVector {
                vector: w * f,
                pi_ambiguous: false,
            };
        }
        if theta < PI - NEAR_PI {
            return RotationVector {
                vector: w * (theta / s),
                pi_ambiguous: false,
            };
        }

        // Near pi: (R + R^T)/2 - c*I = (1 - c) * n n^T, well conditioned here.
        let one_minus_c = 1.0 - c;
        let sym = (m + m.transpose()) * 0.5 - Mat3::identity() * c;
        let diag = Vec3::new(sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]) / one_minus_c;
        let i = if diag.x >= diag.y && diag.x >= diag.z {
            0
        } else if diag.y >= diag.z {
            1
        } else {
            2
        };
        let mut axis = Vec3::zeros();
        axis[i] = diag[i].max(0.0).sqrt();
        for j in 0..3 {
            if j != i {
                axis[j] = sym[(i, j)] / (one_minus_c * axis[i]);
            }
        }
        axis.normalize_mut();

        let pi_ambiguous = PI - theta < PI_AMBIGUITY;
        let sign = if !pi_ambiguous && w.dot(&axis).abs() > 0.0 {
            w.dot(&axis).signum()
        } else {
            // canonical representative: first nonzero component positive
            let lead = axis
                .iter()
                .copied()
                .find(|x| x.abs() > 1e-12)
                .unwrap_or(1.0);
            lead.signum()
        };
        RotationVector {
            vector: axis * (theta * sign),
            pi_ambiguous,
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_matrix(self) -> Mat3 {
        self.0
    }

    /// The inverse rotation.
    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Angle (rad) of the relative rotation `self^T * other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).log().vector.norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Validating logarithm for raw matrices coming from external data.
pub fn log_matrix(m: &Mat3) -> Result<RotationVector, GeometryError> {
    Ok(Rotation::from_matrix(*m)?.log())
}

/// Nearest rotation to `m` (orthogonal polar factor), used to control drift
/// after incremental attitude integration. Requires `||M^T M - I||_F < 0.1`
/// and det(M) > 0.
pub fn reorthonormalize(m: &Mat3) -> Result<Rotation, GeometryError> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(GeometryError::NotFinite);
    }
    let defect = Rotation::orthonormality_defect(m);
    if defect >= 0.1 {
        return Err(GeometryError::NotOrthonormal { defect });
    }
    let det = m.determinant();
    if det <= 0.0 {
        return Err(GeometryError::BadDeterminant { det });
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of finite 3x3 matrix");
    let v_t = svd.v_t.expect("svd of finite 3x3 matrix");
    let s = (u * v_t).determinant().signum();
    let r = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, s)) * v_t;
    Ok(Rotation(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Series-expansion oracle for the exponential map: truncated matrix
    /// power series, independent of the Rodrigues implementation.
    fn exp_series_oracle(v: Vec3) -> Mat3 {
        let k = skew(v);
        let mut term = Mat3::identity();
        let mut sum = Mat3::identity();
        for n in 1..25 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn skew_matches_definition() {
        let m = skew(Vec3::new(1.0, 2.0, 3.0));
        #[rustfmt::skip]
        let expected = Mat3::new(
            0.0, -3.0,  2.0,
            3.0,  0.0, -1.0,
           -2.0,  1.0,  0.0,
        );
        assert_eq!(m, expected);
        assert_eq!(skew(Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn skew_cross_product_with_self_is_zero() {
        let a = Vec3::new(0.3, -1.2, 2.0);
        assert_relative_eq!(skew(a) * a, Vec3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(Rotation::exp(Vec3::zeros()).into_matrix(), Mat3::identity());
    }

    #[test]
    fn exp_half_turn_about_x() {
        let r = Rotation::exp(Vec3::new(PI, 0.0, 0.0));
        let expected = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        assert_relative_eq!(r.into_matrix(), expected, epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_series_oracle_and_round_trips() {
        let v = Vec3::new(0.1, -0.2, 0.3);
        let r = Rotation::exp(v);
        assert_relative_eq!(r.into_matrix(), exp_series_oracle(v), epsilon = 1e-14);
        let back = r.log();
        assert!(!back.pi_ambiguous);
        assert_relative_eq!(back.vector, v, epsilon = 1e-12);
    }

    #[test]
    fn log_identity_is_zero() {
        let l = Rotation::identity().log();
        assert_eq!(l.vector, Vec3::zeros());
        assert!(!l.pi_ambiguous);
    }

    #[test]
    fn log_at_pi_is_flagged_and_canonical() {
        let r = Rotation::from_matrix(Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0))).unwrap();
        let l = r.log();
        assert!(l.pi_ambiguous);
        assert_relative_eq!(l.vector, Vec3::new(PI, 0.0, 0.0), epsilon = 1e-9);
        // first nonzero component positive
        assert!(l.vector.x > 0.0);
    }

    #[test]
    fn log_small_angle_round_trip() {
        let v = Vec3::new(0.02, 0.01, -0.03);
        let l = Rotation::exp(v).log();
        assert_relative_eq!(l.vector, v, epsilon = 1e-12);
    }

    #[test]
    fn log_rejects_non_orthonormal() {
        let m = Mat3::identity() * 1.01;
        assert!(log_matrix(&m).is_err());
    }

    #[test]
    fn log_near_pi_round_trips() {
        // angles spread through the near-pi branch
        for &gap in &[1e-4, 1e-6, 1e-8, 1e-10, 0.0] {
            let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
            let v = axis * (PI - gap);
            let l = Rotation::exp(v).log();
            let err = (l.vector - v).norm().min((l.vector + v).norm());
            assert!(err < 1e-9, "gap {gap:e}: err {err:e}");
        }
    }

    #[test]
    fn reorthonormalize_is_idempotent_on_rotations() {
        let r = Rotation::exp(Vec3::new(0.4, -0.7, 0.2));
        let fixed = reorthonormalize(r.matrix()).unwrap();
        assert_relative_eq!(fixed.into_matrix(), r.into_matrix(), epsilon = 1e-14);
    }

    /// Polar-factor oracle via the symmetric square root of M^T M,
    /// independent of the SVD route used by `reorthonormalize`.
    fn polar_oracle(m: &Mat3) -> Mat3 {
        let mtm = m.transpose() * m;
        let eig = mtm.symmetric_eigen();
        let inv_sqrt = Mat3::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x.sqrt()));
        m * (eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose())
    }

    #[test]
    fn reorthonormalize_matches_polar_oracle() {
        let m = Mat3::identity() + skew(Vec3::new(1.0, 1.0, 1.0)) * 1e-6;
        let r = reorthonormalize(&m).unwrap();
        assert!(Rotation::orthonormality_defect(r.matrix()) < 1e-14);
        assert!((r.matrix() - m).norm() < 1e-5);
        assert_relative_eq!(r.into_matrix(), polar_oracle(&m), epsilon = 1e-12);
    }

    #[test]
    fn reorthonormalize_rejects_non_positive_determinant() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            reorthonormalize(&m),
            Err(GeometryError::NotOrthonormal { .. }) | Err(GeometryError::BadDeterminant { .. })
        ));
        // reflection-like input inside the defect precondition
        let n = Mat3::from_diagonal(&Vec3::new(-1.0, -1.0, -1.0)) * 0.99;
        assert!(reorthonormalize(&n).is_err());
    }

    #[test]
    fn long_product_stays_orthonormal() {
        // 1e6 small factors with renormalization each step
        let step = Rotation::exp(Vec3::new(3e-4, -2e-4, 5e-4));
        let mut r = Rotation::identity();
        for _ in 0..1_000_000 {
            r = reorthonormalize(&(r * step).into_matrix()).unwrap();
        }
        assert!(Rotation::orthonormality_defect(r.matrix()) < 1e-9);
        assert!((r.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn small_delta_linearization_bound() {
        for &scale in &[1e-3, 1e-4, 1e-5] {
            let d = Vec3::new(0.5, -0.3, 0.8).normalize() * scale;
            let lin = Mat3::identity() + skew(d);
            let err = (Rotation::exp(d).into_matrix() - lin).norm();
            assert!(err <= d.norm_squared(), "scale {scale:e}: {err:e}");
        }
    }

    fn arb_rotation_vector(max_angle: f64) -> impl Strategy<Value = Vec3> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 1e-6f64..max_angle).prop_filter_map(
            "nonzero direction",
            move |(x, y, z, angle)| {
                let dir = Vec3::new(x, y, z);
                if dir.norm() < 1e-3 {
                    None
                } else {
                    Some(dir.normalize() * angle)
                }
            },
        )
    }

    proptest! {
        #[test]
        fn prop_exp_log_round_trip(v in arb_rotation_vector(PI - 1e-3)) {
            let l = Rotation::exp(v).log();
            prop_assert!((l.vector - v).norm() < 1e-9);
        }

        #[test]
        fn prop_exp_transpose_is_exp_of_negation(v in arb_rotation_vector(PI - 1e-3)) {
            let a = Rotation::exp(v).transpose();
            let b = Rotation::exp(-v);
            prop_assert!((a.into_matrix() - b.into_matrix()).norm() < 1e-12);
        }

        #[test]
        fn prop_skew_is_linear(
            a in arb_rotation_vector(1.0),
            b in arb_rotation_vector(1.0),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let lhs = skew(a * alpha + b * beta);
            let rhs = skew(a) * alpha + skew(b) * beta;
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn prop_exp_is_orthonormal(v in arb_rotation_vector(PI)) {
            let r = Rotation::exp(v);
            prop_assert!(Rotation::orthonormality_defect(r.matrix()) < 1e-13);
            prop_assert!((r.matrix().determinant() - 1.0).abs() < 1e-13);
        }
    }
}
