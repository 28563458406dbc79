//! Navigation/body frames, the yaw-parameterised rotation matrix and its
//! affine vectorisation.
//!
//! The vehicle moves on a flat area, so roll and pitch are known constants
//! and only the yaw angle is unknown. The body-to-navigation rotation is
//!
//! ```text
//! R = [ cψ cγ   sψ cφ + cψ sγ sφ   -sψ sφ + cψ sγ cφ ]
//!     [ sψ cγ  -cψ cφ + sψ sγ sφ    cψ sφ + sψ sγ cφ ]
//!     [ sγ     -cγ sφ              -cγ cφ            ]
//! ```
//!
//! and its column-stacked vectorisation is affine in `u = [sin ψ, cos ψ]`:
//! `vec(R) = α + Γ u`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, RowSVector, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Vehicle attitude: unknown yaw plus known roll and pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attitude {
    yaw: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl Attitude {
    pub fn new(yaw: f64, roll: f64, pitch: f64) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            roll,
            pitch,
        }
    }

    /// Level attitude (roll = pitch = 0).
    pub fn level(yaw: f64) -> Self {
        Self::new(yaw, 0.0, 0.0)
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn with_yaw(&self, yaw: f64) -> Self {
        Self::new(yaw, self.roll, self.pitch)
    }

    /// `[sin ψ, cos ψ]`
    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(self.yaw.sin(), self.yaw.cos())
    }
}

/// Planar vehicle pose with a fixed reference-point height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub attitude: Attitude,
    pub h: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, attitude: Attitude, h: f64) -> Self {
        Self { x, y, attitude, h }
    }

    pub fn yaw(&self) -> f64 {
        self.attitude.yaw()
    }

    /// Reference point `p_c = [x, y, h]` in the navigation frame.
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.h)
    }

    /// The estimated parameters `[x, y, ψ]`.
    pub fn theta(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.yaw())
    }

    /// Same height and roll/pitch, new `[x, y, ψ]`.
    pub fn with_theta(&self, theta: &Vector3<f64>) -> Self {
        Self {
            x: theta[0],
            y: theta[1],
            attitude: self.attitude.with_yaw(theta[2]),
            h: self.h,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(&self.attitude)
    }
}

pub fn rotation_matrix(att: &Attitude) -> Matrix3<f64> {
    let (sp, cp) = att.yaw.sin_cos();
    let (sg, cg) = att.roll.sin_cos();
    let (sf, cf) = att.pitch.sin_cos();
    Matrix3::new(
        cp * cg,
        sp * cf + cp * sg * sf,
        -sp * sf + cp * sg * cf,
        sp * cg,
        -cp * cf + sp * sg * sf,
        cp * sf + sp * sg * cf,
        sg,
        -cg * sf,
        -cg * cf,
    )
}

/// `vec(R) = alpha + gamma_mat * u`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationVectorization {
    pub alpha: SVector<f64, 9>,
    pub gamma_mat: SMatrix<f64, 9, 2>,
    pub u: Vector2<f64>,
}

impl RotationVectorization {
    /// The yaw-independent parts `(α, Γ)` for given roll and pitch.
    pub fn basis(roll: f64, pitch: f64) -> (SVector<f64, 9>, SMatrix<f64, 9, 2>) {
        let (sg, cg) = roll.sin_cos();
        let (sf, cf) = pitch.sin_cos();
        let alpha = SVector::<f64, 9>::from_column_slice(&[
            0.0,
            0.0,
            sg,
            0.0,
            0.0,
            -cg * sf,
            0.0,
            0.0,
            -cg * cf,
        ]);
        let sin_col = [0.0, cg, 0.0, cf, sg * sf, 0.0, -sf, sg * cf, 0.0];
        let cos_col = [cg, 0.0, 0.0, sg * sf, -cf, 0.0, sg * cf, sf, 0.0];
        let mut gamma = SMatrix::<f64, 9, 2>::zeros();
        for r in 0..9 {
            gamma[(r, 0)] = sin_col[r];
            gamma[(r, 1)] = cos_col[r];
        }
        (alpha, gamma)
    }

    /// `α + Γ u`
    pub fn vec_r(&self) -> SVector<f64, 9> {
        self.alpha + self.gamma_mat * self.u
    }

    /// `∂ vec(R) / ∂ψ = Γ [cos ψ, -sin ψ]`.
    pub fn yaw_derivative(&self) -> SVector<f64, 9> {
        self.gamma_mat * Vector2::new(self.u[1], -self.u[0])
    }
}

pub fn vectorize_rotation(att: &Attitude) -> RotationVectorization {
    let (alpha, gamma_mat) = RotationVectorization::basis(att.roll, att.pitch);
    RotationVectorization {
        alpha,
        gamma_mat,
        u: att.direction(),
    }
}

/// Column-stacks a 3×3 matrix.
pub fn vec_matrix(m: &Matrix3<f64>) -> SVector<f64, 9> {
    SVector::<f64, 9>::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_matrix`].
pub fn unvec_matrix(v: &SVector<f64, 9>) -> Matrix3<f64> {
    Matrix3::from_column_slice(v.as_slice())
}

/// `p_i = p_c + R l_i`
pub fn antenna_position(pose: &Pose, lever: &Vector3<f64>) -> Vector3<f64> {
    pose.center() + pose.rotation() * lever
}

/// `lᵀ ⊗ pᵀ`, so that `pᵀ R l = (lᵀ ⊗ pᵀ) · vec(R)`.
pub fn kronecker_row(l: &Vector3<f64>, p: &Vector3<f64>) -> RowSVector<f64, 9> {
    let mut row = RowSVector::<f64, 9>::zeros();
    for a in 0..3 {
        for b in 0..3 {
            row[3 * a + b] = l[a] * p[b];
        }
    }
    row
}

/// `∂ (R l) / ∂ψ` for the given attitude.
pub fn rotated_lever_yaw_derivative(att: &Attitude, lever: &Vector3<f64>) -> Vector3<f64> {
    let dvec = vectorize_rotation(att).yaw_derivative();
    unvec_matrix(&dvec) * lever
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn identity_yaw_is_axis_flip() {
        let r = rotation_matrix(&Attitude::level(0.0));
        assert_relative_eq!(r, Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    }

    #[test]
    fn quarter_turn() {
        let r = rotation_matrix(&Attitude::level(FRAC_PI_2));
        let expected = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn direction_vector_at_cardinal_yaws() {
        let v0 = vectorize_rotation(&Attitude::level(0.0));
        assert_relative_eq!(v0.u, Vector2::new(0.0, 1.0));
        let expected = vec_matrix(&Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
        assert_relative_eq!(v0.vec_r(), expected);
        let v1 = vectorize_rotation(&Attitude::level(FRAC_PI_2));
        assert_relative_eq!(v1.u, Vector2::new(1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn antenna_positions() {
        let pose = Pose::new(10.0, 5.0, Attitude::level(FRAC_PI_2), 0.0);
        let p = antenna_position(&pose, &Vector3::new(4.0, 2.0, 0.0));
        assert_relative_eq!(p, Vector3::new(12.0, 9.0, 0.0), epsilon = 1e-12);
        let p0 = antenna_position(&pose, &Vector3::zeros());
        assert_relative_eq!(p0, pose.center());

        // First four-anchor epoch, lever [4, -2, 0], evaluated by hand:
        // x + 4cψ - 2sψ, y + 4sψ + 2cψ.
        let pose = Pose::new(11.24, -9.29, Attitude::level(0.74), 0.0);
        let p = antenna_position(&pose, &Vector3::new(4.0, -2.0, 0.0));
        let (s, c) = 0.74f64.sin_cos();
        assert_relative_eq!(p[0], 11.24 + 4.0 * c - 2.0 * s, epsilon = 1e-12);
        assert_relative_eq!(p[1], -9.29 + 4.0 * s + 2.0 * c, epsilon = 1e-12);
        assert_relative_eq!(p[0], 12.84529841, epsilon = 1e-6);
        assert_relative_eq!(p[1], -5.11591124, epsilon = 1e-6);
    }

    #[test]
    fn kronecker_selects_entries() {
        let r = rotation_matrix(&Attitude::new(0.3, 0.1, -0.2));
        let vr = vec_matrix(&r);
        let e1 = Vector3::x();
        let e2 = Vector3::y();
        assert_relative_eq!((kronecker_row(&e1, &e1) * vr)[0], r[(0, 0)]);
        assert_relative_eq!((kronecker_row(&e1, &e2) * vr)[0], r[(1, 0)]);
    }

    #[test]
    fn wrap_is_half_open() {
        assert_relative_eq!(wrap_angle(PI), PI);
        assert_relative_eq!(wrap_angle(-PI), PI);
        assert_relative_eq!(wrap_angle(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_relative_eq!(Attitude::level(7.0).yaw(), 7.0 - 2.0 * PI, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_proper(yaw in -10.0f64..10.0, roll in -0.5f64..0.5, pitch in -0.5f64..0.5) {
            let r = rotation_matrix(&Attitude::new(yaw, roll, pitch));
            let err = (r.transpose() * r - Matrix3::identity()).abs().max();
            prop_assert!(err < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn vectorization_matches_direct(yaw in -10.0f64..10.0, roll in -0.5f64..0.5, pitch in -0.5f64..0.5) {
            let att = Attitude::new(yaw, roll, pitch);
            let v = vectorize_rotation(&att);
            prop_assert!((v.u.norm() - 1.0).abs() < 1e-15);
            let diff = (v.vec_r() - vec_matrix(&rotation_matrix(&att))).abs().max();
            prop_assert!(diff < 1e-12);
        }

        #[test]
        fn kronecker_identity(
            yaw in -4.0f64..4.0,
            l in prop::array::uniform3(-5.0f64..5.0),
            p in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let att = Attitude::new(yaw, 0.05, -0.02);
            let l = Vector3::from(l);
            let p = Vector3::from(p);
            let v = vectorize_rotation(&att);
            let lhs = (kronecker_row(&l, &p) * v.vec_r())[0];
            let rhs = p.dot(&(rotation_matrix(&att) * l));
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn antenna_baselines_invariant_under_yaw(
            yaw in -4.0f64..4.0,
            x in -50.0f64..50.0,
            y in -50.0f64..50.0,
        ) {
            let levers = [Vector3::new(4.0, 2.0, -0.15), Vector3::new(4.0, -2.0, -0.15), Vector3::new(-4.0, 0.0, -0.15)];
            let pose = Pose::new(x, y, Attitude::level(yaw), 2.0);
            for a in 0..3 {
                for b in 0..3 {
                    let d = (antenna_position(&pose, &levers[a]) - antenna_position(&pose, &levers[b])).norm();
                    prop_assert!((d - (levers[a] - levers[b]).norm()).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn yaw_derivative_matches_central_difference(yaw in -4.0f64..4.0) {
            let att = Attitude::new(yaw, 0.1, 0.2);
            let l = Vector3::new(4.0, -2.0, 0.3);
            let step = 1e-6;
            let fd = (rotation_matrix(&att.with_yaw(yaw + step)) * l
                - rotation_matrix(&att.with_yaw(yaw - step)) * l) / (2.0 * step);
            let an = rotated_lever_yaw_derivative(&att, &l);
            prop_assert!((fd - an).abs().max() < 1e-8);
        }
    }
}
