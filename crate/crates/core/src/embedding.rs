//! Vector primitives for the joint embedding space.
//!
//! Backbone outputs enter as [`FeatureVector`]s, pass through a bias-free
//! linear [`ProjectionHead`] and land on the unit hypersphere as
//! [`EmbeddingVector`]s. Every similarity downstream is a plain dot product of
//! unit vectors.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance on the unit-norm invariant of [`EmbeddingVector`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Pre-projection backbone feature for one image, caption, frame or token.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * alpha).collect())
    }
}

/// A vector on the unit hypersphere of the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Accepts values that are already unit-norm (within [`UNIT_NORM_TOLERANCE`]).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        let n = norm(&values);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "embedding vector norm {n} is not 1"
            )));
        }
        Ok(Self(values))
    }

    /// Normalizes arbitrary finite values onto the sphere.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("embedding vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding vector"));
        }
        let n = norm(&values);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateVector);
        }
        Ok(Self(values.into_iter().map(|v| v / n).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Unit axis vector `e_axis` in `dim` dimensions.
    pub fn axis(dim: usize, axis: usize) -> Result<Self> {
        if axis >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: axis + 1,
            });
        }
        let mut values = vec![0.0; dim];
        values[axis] = 1.0;
        Ok(Self(values))
    }

    /// Uniformly distributed random unit vector.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        loop {
            let values: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            match Self::normalized(values) {
                Err(Error::DegenerateVector) => continue,
                other => return other,
            }
        }
    }
}

/// Bias-free linear map from backbone space to the joint space.
///
/// Weights are stored row-major with shape `backbone_dim x joint_dim`, so an
/// embedding is `x^T W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    backbone_dim: usize,
    joint_dim: usize,
    weights: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(backbone_dim: usize, joint_dim: usize, weights: Vec<f64>) -> Result<Self> {
        if backbone_dim == 0 || joint_dim == 0 {
            return Err(Error::Empty("projection head"));
        }
        if weights.len() != backbone_dim * joint_dim {
            return Err(Error::DimensionMismatch {
                expected: backbone_dim * joint_dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("projection head"));
        }
        Ok(Self {
            backbone_dim,
            joint_dim,
            weights,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, weights)
    }

    /// Random head with orthonormal columns (Gram-Schmidt over Gaussian
    /// draws). When `joint_dim > backbone_dim` orthonormal columns do not
    /// exist and the head falls back to Gaussian entries scaled by
    /// `1/sqrt(backbone_dim)`.
    pub fn random_orthonormal<R: Rng + ?Sized>(
        backbone_dim: usize,
        joint_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if backbone_dim == 0 || joint_dim == 0 {
            return Err(Error::Empty("projection head"));
        }
        let scale = 1.0 / (backbone_dim as f64).sqrt();
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(joint_dim);
        if joint_dim <= backbone_dim {
            while columns.len() < joint_dim {
                let mut c: Vec<f64> = (0..backbone_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                for prev in &columns {
                    let p = dot(&c, prev);
                    c.iter_mut().zip(prev).for_each(|(a, b)| *a -= p * b);
                }
                let n = norm(&c);
                if n > 1e-8 {
                    c.iter_mut().for_each(|a| *a /= n);
                    columns.push(c);
                }
            }
        } else {
            for _ in 0..joint_dim {
                columns.push(
                    (0..backbone_dim)
                        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                );
            }
        }
        let mut weights = vec![0.0; backbone_dim * joint_dim];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                weights[i * joint_dim + j] = v;
            }
        }
        Self::new(backbone_dim, joint_dim, weights)
    }

    pub fn backbone_dim(&self) -> usize {
        self.backbone_dim
    }

    pub fn joint_dim(&self) -> usize {
        self.joint_dim
    }

    /// Row-major `backbone_dim x joint_dim` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Unnormalized projection `x^T W`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.backbone_dim {
            return Err(Error::DimensionMismatch {
                expected: self.backbone_dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.joint_dim];
        for (xi, row) in x.iter().zip(self.weights.chunks_exact(self.joint_dim)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        Ok(out)
    }
}

/// The visual and textual heads of a dual encoder, sharing one joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct DualHeads {
    pub visual: ProjectionHead,
    pub textual: ProjectionHead,
}

impl DualHeads {
    pub fn new(visual: ProjectionHead, textual: ProjectionHead) -> Result<Self> {
        if visual.joint_dim() != textual.joint_dim() {
            return Err(Error::DimensionMismatch {
                expected: visual.joint_dim(),
                got: textual.joint_dim(),
            });
        }
        Ok(Self { visual, textual })
    }

    pub fn joint_dim(&self) -> usize {
        self.visual.joint_dim()
    }
}

pub fn l2_normalize(x: &FeatureVector) -> Result<EmbeddingVector> {
    EmbeddingVector::normalized(x.values().to_vec())
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            got: v.dim(),
        });
    }
    Ok(dot(u.values(), v.values()))
}

/// Arithmetic mean of the sequence, re-normalized to unit length.
pub fn mean_pool(seq: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = seq.first().ok_or(Error::Empty("pooled sequence"))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for e in seq {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
        acc.iter_mut().zip(e.values()).for_each(|(a, v)| *a += v);
    }
    let count = seq.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    // cancellation down to rounding noise is as degenerate as exact zero
    if norm(&acc) < 1e-12 {
        return Err(Error::DegeneratePooled);
    }
    EmbeddingVector::normalized(acc)
}

pub fn project(x: &FeatureVector, head: &ProjectionHead) -> Result<EmbeddingVector> {
    EmbeddingVector::normalized(head.apply(x.values())?)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::from_unit(v.to_vec()).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn normalize_examples() {
        assert_close(
            l2_normalize(&fv(&[3.0, 4.0])).unwrap().values(),
            &[0.6, 0.8],
            1e-15,
        );
        assert_close(
            l2_normalize(&fv(&[0.0, 0.0, 5.0])).unwrap().values(),
            &[0.0, 0.0, 1.0],
            0.0,
        );
        let h = 1.0 / 2f64.sqrt();
        assert_close(
            l2_normalize(&fv(&[1.0, 1.0])).unwrap().values(),
            &[h, h],
            1e-15,
        );
    }

    #[test]
    fn normalize_zero_is_degenerate() {
        let err = l2_normalize(&fv(&[0.0, 0.0])).unwrap_err();
        assert_eq!(err.to_string(), "degenerate feature vector");
    }

    #[test]
    fn feature_vector_rejects_non_finite() {
        assert!(FeatureVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![]).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = unit(&[1.0, 0.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &unit(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&a, &unit(&[-1.0, 0.0])).unwrap(), -1.0);
        assert!(matches!(
            cosine(&a, &unit(&[0.0, 0.0, 1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(
            mean_pool(&[unit(&[1.0, 0.0])]).unwrap().values(),
            &[1.0, 0.0]
        );
        let h = 1.0 / 2f64.sqrt();
        assert_close(
            mean_pool(&[unit(&[1.0, 0.0]), unit(&[0.0, 1.0])])
                .unwrap()
                .values(),
            &[h, h],
            1e-15,
        );
        let err = mean_pool(&[unit(&[1.0, 0.0]), unit(&[-1.0, 0.0])]).unwrap_err();
        assert_eq!(err.to_string(), "degenerate pooled vector");
        assert!(matches!(mean_pool(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn project_identity_reduces_to_normalize() {
        let head = ProjectionHead::identity(2).unwrap();
        assert_close(
            project(&fv(&[3.0, 4.0]), &head).unwrap().values(),
            &[0.6, 0.8],
            1e-15,
        );
    }

    #[test]
    fn project_onto_one_axis() {
        // every backbone dimension maps onto joint axis 1
        let head = ProjectionHead::new(3, 2, vec![0.0, 2.0, 0.0, 0.5, 0.0, 7.0]).unwrap();
        for x in [[1.0, 1.0, 1.0], [100.0, 3.0, 0.1]] {
            assert_eq!(project(&fv(&x), &head).unwrap().values(), &[0.0, 1.0]);
        }
    }

    #[test]
    fn project_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = ProjectionHead::random_orthonormal(8, 4, &mut rng).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        // column-at-a-time matrix product, then normalize
        let w = head.weights();
        let mut y = [0.0f64; 4];
        for (j, yj) in y.iter_mut().enumerate() {
            for (i, xi) in x.iter().enumerate() {
                *yj += xi * w[i * 4 + j];
            }
        }
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected: Vec<f64> = y.iter().map(|v| v / n).collect();
        let got = project(&fv(&x), &head).unwrap();
        assert_close(got.values(), &expected, 1e-6);
    }

    #[test]
    fn project_dim_mismatch() {
        let head = ProjectionHead::identity(3).unwrap();
        assert!(matches!(
            project(&fv(&[1.0, 2.0]), &head),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn random_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = ProjectionHead::random_orthonormal(6, 4, &mut rng).unwrap();
        let w = head.weights();
        for a in 0..4 {
            for b in 0..4 {
                let d: f64 = (0..6).map(|i| w[i * 4 + a] * w[i * 4 + b]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-12);
            }
        }
    }

    fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim)
            .prop_filter("nonzero", |v| norm(v) > 1e-3)
            .prop_map(|v| {
                let n = norm(&v);
                v.into_iter().map(|x| x / n).collect()
            })
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(u in unit_vec(5), v in unit_vec(5)) {
            let (u, v) = (EmbeddingVector::from_unit(u).unwrap(), EmbeddingVector::from_unit(v).unwrap());
            let a = cosine(&u, &v).unwrap();
            prop_assert_eq!(a, cosine(&v, &u).unwrap());
            prop_assert!(a.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn project_scale_invariant(
            x in prop::collection::vec(-1.0f64..1.0, 6).prop_filter("nonzero", |v| norm(v) > 1e-3),
            alpha in 1e-3f64..1e3,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let head = ProjectionHead::random_orthonormal(6, 3, &mut rng).unwrap();
            let x = FeatureVector::new(x).unwrap();
            let a = project(&x, &head).unwrap();
            let b = project(&x.scaled(alpha).unwrap(), &head).unwrap();
            for (p, q) in a.values().iter().zip(b.values()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn mean_pool_of_copies(u in unit_vec(4), k in 1usize..10) {
            let u = EmbeddingVector::from_unit(u).unwrap();
            let pooled = mean_pool(&vec![u.clone(); k]).unwrap();
            for (p, q) in pooled.values().iter().zip(u.values()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
