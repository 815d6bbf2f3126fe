//! Rank-2 Cartesian tensor algebra.
//!
//! A [`Mat3`] holds one 3×3 feature matrix in row-major order. Any such
//! matrix splits uniquely into an isotropic part `I = tr(X)/3 · Id`, an
//! antisymmetric part `A = (X − Xᵀ)/2` and a symmetric traceless part
//! `S = (X + Xᵀ)/2 − I`. Under an orthogonal transformation `R` of the
//! input coordinates each part transforms as `R · P · Rᵀ`.

use std::ops::{Add, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Mat3(pub [f64; 9]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([0.0; 9]);
    pub const IDENTITY: Mat3 = Mat3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        let mut m = [0.0; 9];
        for (r, row) in rows.iter().enumerate() {
            m[3 * r..3 * r + 3].copy_from_slice(row);
        }
        Mat3(m)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[3 * row + col]
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[4] + self.0[8]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn scale(&self, factor: f64) -> Mat3 {
        Mat3(self.0.map(|v| v * factor))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Cross-product matrix: `skew(u) · v = u × v`.
    pub fn skew(u: [f64; 3]) -> Mat3 {
        Mat3([0.0, -u[2], u[1], u[2], 0.0, -u[0], -u[1], u[0], 0.0])
    }

    pub fn outer(u: [f64; 3], v: [f64; 3]) -> Mat3 {
        let mut m = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                m[3 * r + c] = u[r] * v[c];
            }
        }
        Mat3(m)
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
        ]
    }

    /// `R · self · Rᵀ`
    pub fn conjugate(&self, rotation: &Mat3) -> Mat3 {
        matmul(&matmul(rotation, self), &rotation.transpose())
    }

    pub fn max_abs_diff(&self, other: &Mat3) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, rhs: Mat3) -> Mat3 {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        Mat3(out)
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, rhs: Mat3) -> Mat3 {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o -= r;
        }
        Mat3(out)
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    fn neg(self) -> Mat3 {
        Mat3(self.0.map(|v| -v))
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        matmul(&self, &rhs)
    }
}

/// The three O(3)-irreducible parts of a rank-2 tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IrrepDecomposition {
    pub scalar_part: Mat3,
    pub vector_part: Mat3,
    pub traceless_part: Mat3,
}

impl IrrepDecomposition {
    pub fn recompose(&self) -> Mat3 {
        self.scalar_part + self.vector_part + self.traceless_part
    }
}

pub fn decompose(x: &Mat3) -> Result<IrrepDecomposition> {
    if !x.is_finite() {
        return Err(Error::NonFinite("decompose input"));
    }
    let t = x.transpose();
    let scalar_part = Mat3::IDENTITY.scale(x.trace() / 3.0);
    let vector_part = (*x - t).scale(0.5);
    let traceless_part = (*x + t).scale(0.5) - scalar_part;
    Ok(IrrepDecomposition {
        scalar_part,
        vector_part,
        traceless_part,
    })
}

pub fn frobenius_norm_sq(x: &Mat3) -> f64 {
    x.0.iter().map(|v| v * v).sum()
}

pub fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let (a, b) = (&a.0, &b.0);
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = a[3 * r] * b[c] + a[3 * r + 1] * b[3 + c] + a[3 * r + 2] * b[6 + c];
        }
    }
    Mat3(out)
}

/// Divides each channel by its Frobenius norm plus one.
pub fn normalize_feature(channels: &[Mat3]) -> Vec<Mat3> {
    channels
        .iter()
        .map(|x| x.scale(1.0 / (frobenius_norm_sq(x).sqrt() + 1.0)))
        .collect()
}

/// Seeded random element of SO(3), or of O(3) when `allow_reflection` is set.
///
/// Rotations come from a normalised Gaussian quaternion, which is uniform
/// over SO(3). With reflections allowed the rotation is multiplied by `−Id`
/// with probability one half.
pub fn random_orthogonal(seed: u64, allow_reflection: bool) -> Mat3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = [0.0f64; 4];
    loop {
        for v in q.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.iter_mut().for_each(|v| *v /= norm);
            break;
        }
    }
    let [w, x, y, z] = q;
    let r = Mat3::from_rows([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]);
    if allow_reflection && rng.random::<bool>() {
        -r
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, Strategy};

    fn random_mat(rng: &mut ChaCha8Rng) -> Mat3 {
        Mat3(std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
    }

    fn check_invariants(x: &Mat3, d: &IrrepDecomposition) {
        assert_eq!(d.scalar_part, Mat3::IDENTITY.scale(x.trace() / 3.0));
        let a = d.vector_part;
        assert!((a + a.transpose()).0.iter().all(|v| v.abs() < 1e-15));
        let s = d.traceless_part;
        assert!(s.max_abs_diff(&s.transpose()) < 1e-12);
        assert!(s.trace().abs() < 1e-12);
        assert!(d.recompose().max_abs_diff(x) < 1e-12);
    }

    #[test]
    fn decompose_identity_is_pure_trace() {
        let d = decompose(&Mat3::IDENTITY).unwrap();
        assert_eq!(d.scalar_part, Mat3::IDENTITY);
        assert_eq!(d.vector_part, Mat3::ZERO);
        assert_eq!(d.traceless_part, Mat3::ZERO);
    }

    #[test]
    fn decompose_skew_is_pure_vector() {
        let x = Mat3::from_rows([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let d = decompose(&x).unwrap();
        assert_eq!(d.scalar_part, Mat3::ZERO);
        assert_eq!(d.vector_part, x);
        assert_eq!(d.traceless_part, Mat3::ZERO);
    }

    #[test]
    fn decompose_random_matrices_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..20 {
            let x = random_mat(&mut rng);
            let d = decompose(&x).unwrap();
            check_invariants(&x, &d);
        }
    }

    #[test]
    fn decompose_rejects_non_finite() {
        let mut x = Mat3::IDENTITY;
        x.0[4] = f64::NAN;
        assert!(matches!(decompose(&x), Err(Error::NonFinite(_))));
        x.0[4] = f64::INFINITY;
        assert!(decompose(&x).is_err());
    }

    #[test]
    fn decomposition_is_a_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = decompose(&random_mat(&mut rng)).unwrap();
        for (part, slot) in [(d.scalar_part, 0), (d.vector_part, 1), (d.traceless_part, 2)] {
            let again = decompose(&part).unwrap();
            let parts = [again.scalar_part, again.vector_part, again.traceless_part];
            for (k, p) in parts.iter().enumerate() {
                let expected = if k == slot { part } else { Mat3::ZERO };
                assert!(p.max_abs_diff(&expected) < 1e-15);
            }
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm_sq(&Mat3::IDENTITY), 3.0);
        assert_eq!(frobenius_norm_sq(&Mat3::ZERO), 0.0);
        assert_eq!(frobenius_norm_sq(&Mat3([1.0; 9])), 9.0);
    }

    #[test]
    fn matmul_examples() {
        let b = Mat3([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.5]);
        assert_eq!(matmul(&Mat3::IDENTITY, &b), b);
        assert_eq!(matmul(&b, &Mat3::ZERO), Mat3::ZERO);
        for seed in 0..50 {
            let r = random_orthogonal(seed, true);
            assert!(matmul(&r, &r.transpose()).max_abs_diff(&Mat3::IDENTITY) < 1e-14);
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_feature(&[Mat3::ZERO]), vec![Mat3::ZERO]);
        let out = normalize_feature(&[Mat3::IDENTITY]);
        let expected = Mat3::IDENTITY.scale(1.0 / (3f64.sqrt() + 1.0));
        assert!(out[0].max_abs_diff(&expected) < 1e-16);
    }

    #[test]
    fn random_orthogonal_properties() {
        let mut signs = [0usize; 2];
        for seed in 0..200 {
            let r = random_orthogonal(seed, true);
            assert!(matmul(&r, &r.transpose()).max_abs_diff(&Mat3::IDENTITY) < 1e-13);
            let det = r.determinant();
            assert!((det.abs() - 1.0).abs() < 1e-13);
            signs[(det < 0.0) as usize] += 1;

            let proper = random_orthogonal(seed, false);
            assert!((proper.determinant() - 1.0).abs() < 1e-13);
        }
        assert!(signs[0] > 0 && signs[1] > 0);
        assert_eq!(random_orthogonal(0, true), random_orthogonal(0, true));
    }

    fn mat_strategy() -> impl Strategy<Value = Mat3> {
        proptest::array::uniform9(-10.0f64..10.0).prop_map(Mat3)
    }

    proptest! {
        #[test]
        fn decomposition_commutes_with_rotation(x in mat_strategy(), seed in any::<u64>()) {
            let r = random_orthogonal(seed, true);
            let d = decompose(&x).unwrap();
            let rotated = decompose(&x.conjugate(&r)).unwrap();
            prop_assert!(rotated.scalar_part.max_abs_diff(&d.scalar_part.conjugate(&r)) < 1e-12);
            prop_assert!(rotated.vector_part.max_abs_diff(&d.vector_part.conjugate(&r)) < 1e-12);
            prop_assert!(rotated.traceless_part.max_abs_diff(&d.traceless_part.conjugate(&r)) < 1e-12);
        }

        #[test]
        fn frobenius_is_rotation_invariant(x in mat_strategy(), seed in any::<u64>()) {
            let r = random_orthogonal(seed, true);
            let n0 = frobenius_norm_sq(&x);
            let n1 = frobenius_norm_sq(&x.conjugate(&r));
            prop_assert!((n0 - n1).abs() <= 1e-12 * n0.max(1e-300));
        }

        #[test]
        fn normalized_channels_have_norm_below_one(xs in proptest::collection::vec(mat_strategy(), 1..8)) {
            for x in normalize_feature(&xs) {
                prop_assert!(frobenius_norm_sq(&x).sqrt() < 1.0);
            }
        }

        #[test]
        fn decomposition_invariants_hold(x in mat_strategy()) {
            let d = decompose(&x).unwrap();
            check_invariants(&x, &d);
        }
    }
}
