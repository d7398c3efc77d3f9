//! Rigid-body geometry in 64-bit floats.
//!
//! Poses are stored as an explicit rotation matrix plus translation. The
//! network side works with the 6D rotation representation (the first two
//! columns of the matrix), which is turned back into a proper rotation by
//! Gram-Schmidt orthonormalization.
//!
//! Angular thresholds everywhere in the crate are geodesic angles on SO(3).

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a 6D rotation is considered degenerate.
pub const ROT6_EPS: f64 = 1e-8;

/// Tolerance used by [`Pose::is_valid`].
pub const ROTATION_TOL: f64 = 1e-6;

/// Rigid transform `[R | t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose::new(Matrix3::identity(), translation)
    }

    /// Orthonormality and unit determinant within [`ROTATION_TOL`].
    pub fn is_valid(&self) -> bool {
        orthonormality_error(&self.rotation) <= ROTATION_TOL
            && (self.rotation.determinant() - 1.0).abs() <= ROTATION_TOL
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn to_vec9(&self) -> PoseVec9 {
        PoseVec9 {
            rot6: matrix_to_rot6d(&self.rotation),
            trans: [self.translation.x, self.translation.y, self.translation.z],
        }
    }
}

/// Network-side pose: 6D rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseVec9 {
    pub rot6: [f64; 6],
    pub trans: [f64; 3],
}

impl PoseVec9 {
    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), 9, "PoseVec9 needs exactly 9 values");
        let mut rot6 = [0.0; 6];
        rot6.copy_from_slice(&v[..6]);
        PoseVec9 {
            rot6,
            trans: [v[6], v[7], v[8]],
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..6].copy_from_slice(&self.rot6);
        out[6..].copy_from_slice(&self.trans);
        out
    }

    pub fn to_pose(&self) -> Result<Pose> {
        Ok(Pose::new(
            rot6d_to_matrix(&self.rot6)?,
            Vector3::from(self.trans),
        ))
    }
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Gram-Schmidt map from the 6D representation to SO(3).
///
/// The input holds two 3-vectors `a1 = rot6[0..3]`, `a2 = rot6[3..6]`; the
/// output columns are `b1 = a1/|a1|`, `b2` the normalized part of `a2`
/// orthogonal to `b1`, and `b3 = b1 × b2`.
pub fn rot6d_to_matrix(rot6: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(rot6[0], rot6[1], rot6[2]);
    let a2 = Vector3::new(rot6[3], rot6[4], rot6[5]);
    let n1 = a1.norm();
    if !(n1 > ROT6_EPS) {
        return Err(Error::DegenerateRotation6D { norm: n1 });
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    if !(n2 > ROT6_EPS) {
        return Err(Error::DegenerateRotation6D { norm: n2 });
    }
    let b2 = u / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// First two columns of `r`, concatenated.
pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> [f64; 6] {
    [
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ]
}

/// Geodesic distance on SO(3), in degrees, in `[0, 180]`.
pub fn geodesic_angle(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let cos = (((r1.transpose() * r2).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    cos.acos().to_degrees()
}

/// Translation distance and geodesic rotation angle (degrees).
pub fn pose_distance(p1: &Pose, p2: &Pose) -> (f64, f64) {
    (
        (p1.translation - p2.translation).norm(),
        geodesic_angle(&p1.rotation, &p2.rotation),
    )
}

/// Chordal L2 mean: the rotation minimizing `Σ‖R − Rᵢ‖²_F`.
///
/// Computed by projecting the arithmetic mean of the matrices onto SO(3)
/// through its singular value decomposition. Fails with
/// [`Error::DegenerateMean`] when the two smallest singular values of the
/// mean sum to at most `1e-9`, where the projection is not well defined.
pub fn chordal_l2_mean(rotations: &[Matrix3<f64>]) -> Result<Matrix3<f64>> {
    if rotations.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mean = rotations.iter().fold(Matrix3::zeros(), |acc, r| acc + r) / rotations.len() as f64;
    let svd = mean.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateMean { sum: 0.0 }),
    };
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let tail = sv[order[1]] + sv[order[2]];
    if !(tail > 1e-9) {
        return Err(Error::DegenerateMean { sum: tail });
    }
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    d[order[2]] = (u * v_t).determinant().signum();
    Ok(u * Matrix3::from_diagonal(&d) * v_t)
}

/// Rotation of `degrees` about `axis` (need not be normalized).
pub fn rotation_about(axis: Vector3<f64>, degrees: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), degrees.to_radians()).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).amax()
    }

    fn rz(deg: f64) -> Matrix3<f64> {
        rotation_about(Vector3::z(), deg)
    }

    /// Straight-line Gram-Schmidt on plain arrays.
    fn gram_schmidt_oracle(v: &[f64; 6]) -> [[f64; 3]; 3] {
        let a1 = [v[0], v[1], v[2]];
        let a2 = [v[3], v[4], v[5]];
        let n1 = (a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2]).sqrt();
        let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
        let d = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
        let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
        let n2 = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
        let b3 = [
            b1[1] * b2[2] - b1[2] * b2[1],
            b1[2] * b2[0] - b1[0] * b2[2],
            b1[0] * b2[1] - b1[1] * b2[0],
        ];
        // rows of the result
        [
            [b1[0], b2[0], b3[0]],
            [b1[1], b2[1], b3[1]],
            [b1[2], b2[2], b3[2]],
        ]
    }

    #[test]
    fn rot6d_trivial_cases() {
        let id = Matrix3::identity();
        for v in [
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            [2.0, 0.0, 0.0, 0.0, 3.0, 0.0],
            [1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        ] {
            assert!(max_abs_diff(&rot6d_to_matrix(&v).unwrap(), &id) < 1e-15);
        }
    }

    #[test]
    fn rot6d_matches_oracle() {
        let vs = [
            [0.3, -1.2, 0.7, 2.0, 0.1, -0.4],
            [-5.0, 0.01, 0.2, 0.3, 0.3, 9.0],
            [1e-3, 2e-3, -1e-3, 4.0, -4.0, 0.5],
        ];
        for v in vs {
            let r = rot6d_to_matrix(&v).unwrap();
            let o = gram_schmidt_oracle(&v);
            let om = Matrix3::from_fn(|i, j| o[i][j]);
            assert!(orthonormality_error(&om) < 1e-12);
            assert!(max_abs_diff(&r, &om) <= 1e-12);
        }
    }

    #[test]
    fn rot6d_degenerate_inputs() {
        assert!(matches!(
            rot6d_to_matrix(&[0.0; 6]),
            Err(Error::DegenerateRotation6D { .. })
        ));
        // parallel columns
        assert!(matches!(
            rot6d_to_matrix(&[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]),
            Err(Error::DegenerateRotation6D { .. })
        ));
        assert!(rot6d_to_matrix(&[f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn matrix_to_rot6d_reads_columns() {
        assert_eq!(
            matrix_to_rot6d(&Matrix3::identity()),
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        let v = matrix_to_rot6d(&rz(90.0));
        let want = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn geodesic_trivial_cases() {
        let id = Matrix3::identity();
        assert_eq!(geodesic_angle(&id, &id), 0.0);
        assert!((geodesic_angle(&id, &rz(90.0)) - 90.0).abs() < 1e-9);
        assert!((geodesic_angle(&id, &rotation_about(Vector3::x(), 180.0)) - 180.0).abs() < 1e-6);
    }

    #[test]
    fn pose_distance_cases() {
        let p = Pose::identity();
        assert_eq!(pose_distance(&p, &p), (0.0, 0.0));
        let q = Pose::from_translation(Vector3::new(3.0, 4.0, 0.0));
        assert_eq!(pose_distance(&p, &q), (5.0, 0.0));
        let (t, a) = pose_distance(&p, &Pose::new(rz(90.0), Vector3::zeros()));
        assert_eq!(t, 0.0);
        assert!((a - 90.0).abs() < 1e-9);
    }

    #[test]
    fn chordal_mean_trivial_cases() {
        let r = rotation_about(Vector3::new(1.0, 2.0, -0.5), 33.0);
        assert!(max_abs_diff(&chordal_l2_mean(&[r]).unwrap(), &r) < 1e-12);
        let m = chordal_l2_mean(&[rz(40.0), rz(-40.0)]).unwrap();
        assert!(max_abs_diff(&m, &Matrix3::identity()) < 1e-12);
    }

    #[test]
    fn chordal_mean_degenerate() {
        // Antipodal pair about z: mean is diag(0, 0, 1).
        let err = chordal_l2_mean(&[rz(90.0), rz(-90.0)]).unwrap_err();
        assert!(matches!(err, Error::DegenerateMean { .. }));
        assert!(matches!(chordal_l2_mean(&[]), Err(Error::EmptySamples)));
    }

    fn rotation_strategy() -> impl Strategy<Value = Matrix3<f64>> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            0.0f64..179.0,
        )
            .prop_filter("axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a)| rotation_about(Vector3::new(x, y, z), a))
    }

    fn rot6_strategy() -> impl Strategy<Value = [f64; 6]> {
        proptest::array::uniform6(-10.0f64..10.0).prop_filter("non-degenerate", |v| {
            rot6d_to_matrix(v).is_ok()
        })
    }

    proptest! {
        #[test]
        fn rot6d_output_is_rotation(v in rot6_strategy()) {
            let r = rot6d_to_matrix(&v).unwrap();
            prop_assert!(orthonormality_error(&r) <= 1e-6);
            prop_assert!((r.determinant() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn rot6d_round_trip(r in rotation_strategy()) {
            let back = rot6d_to_matrix(&matrix_to_rot6d(&r)).unwrap();
            prop_assert!(max_abs_diff(&back, &r) <= 1e-9);
        }

        #[test]
        fn geodesic_is_symmetric_and_bounded(a in rotation_strategy(), b in rotation_strategy()) {
            let ab = geodesic_angle(&a, &b);
            let ba = geodesic_angle(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=180.0).contains(&ab));
            prop_assert!(geodesic_angle(&a, &a) < 1e-5);
        }

        #[test]
        fn chordal_mean_is_equivariant(
            q in rotation_strategy(),
            rs in proptest::collection::vec(0.0f64..60.0, 1..6),
            axis in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        ) {
            let set: Vec<_> = rs
                .iter()
                .enumerate()
                .map(|(i, &a)| rotation_about(Vector3::new(axis.0 + i as f64 * 0.3, axis.1, axis.2), a))
                .collect();
            let m = chordal_l2_mean(&set).unwrap();
            let moved: Vec<_> = set.iter().map(|r| q * r).collect();
            let mq = chordal_l2_mean(&moved).unwrap();
            prop_assert!(max_abs_diff(&mq, &(q * m)) <= 1e-9);
        }
    }
}
