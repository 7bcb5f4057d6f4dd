//! Positive-augmented symmetric InfoNCE objective and its analytic gradient.
//!
//! The objective combines three symmetric InfoNCE terms over one batch of
//! augmented tuples:
//!
//! ```text
//! L = L(V, T) + lambda_v * L(V', T) + lambda_t * L(V, T')
//! ```
//!
//! where each `L(A, B)` averages the row-wise (A to B) and column-wise (B to
//! A) cross-entropies of the `N x N` cosine logits divided by `tau`, with the
//! diagonal as positives. Gradients are taken with respect to both projection
//! heads, through the l2 normalization, and with respect to `log(tau)`.

use serde::{Deserialize, Serialize};

use crate::dataset::{AugmentedTuple, FeatureStore};
use crate::embedding::{dot, norm, DualHeads, EmbeddingVector, FeatureVector, ProjectionHead};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax temperature dividing the cosine logits.
    pub tau: f64,
    /// Weight of the generated-image / real-caption term.
    pub lambda_v: f64,
    /// Weight of the real-image / generated-caption term.
    pub lambda_t: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            lambda_v: 0.05,
            lambda_t: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        for (name, value) in [("lambda_v", self.lambda_v), ("lambda_t", self.lambda_t)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Loss value with gradients for both heads (row-major, same layout as
/// [`ProjectionHead::weights`]) and for `log(tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PacGradient {
    pub loss: f64,
    pub visual: Vec<f64>,
    pub textual: Vec<f64>,
    pub log_tau: f64,
}

/// Symmetric InfoNCE over matched lists of unit vectors.
pub fn info_nce(v: &[EmbeddingVector], t: &[EmbeddingVector], tau: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("info_nce batch"));
    }
    if v.len() != t.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            got: t.len(),
        });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let d = v[0].dim();
    for e in v.iter().chain(t) {
        if e.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: e.dim(),
            });
        }
    }
    let vf: Vec<f64> = v.iter().flat_map(|e| e.values().iter().copied()).collect();
    let tf: Vec<f64> = t.iter().flat_map(|e| e.values().iter().copied()).collect();
    Ok(symmetric_nce(&vf, &tf, v.len(), d, tau, None).0)
}

pub fn pac_loss(
    batch: &[AugmentedTuple],
    store: &FeatureStore,
    heads: &DualHeads,
    cfg: &LossConfig,
) -> Result<f64> {
    let resolved = store.resolve(batch)?;
    Ok(pac_objective(&resolved, heads, cfg, false)?.loss)
}

pub fn pac_loss_grad(
    batch: &[AugmentedTuple],
    store: &FeatureStore,
    heads: &DualHeads,
    cfg: &LossConfig,
) -> Result<PacGradient> {
    let resolved = store.resolve(batch)?;
    pac_objective(&resolved, heads, cfg, true)
}

/// Backbone rows of one modality set, their projections and unit embeddings.
struct Projected<'a> {
    inputs: Vec<&'a FeatureVector>,
    norms: Vec<f64>,
    unit: Vec<f64>,
    /// Gradient of the loss with respect to `unit`.
    grad: Vec<f64>,
}

impl<'a> Projected<'a> {
    fn new(inputs: Vec<&'a FeatureVector>, head: &ProjectionHead) -> Result<Self> {
        let d = head.joint_dim();
        let mut norms = Vec::with_capacity(inputs.len());
        let mut unit = Vec::with_capacity(inputs.len() * d);
        for x in &inputs {
            let z = head.apply(x.values())?;
            let n = norm(&z);
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateVector);
            }
            unit.extend(z.iter().map(|v| v / n));
            norms.push(n);
        }
        let grad = vec![0.0; unit.len()];
        Ok(Self {
            inputs,
            norms,
            unit,
            grad,
        })
    }

    /// Accumulates `d loss / d W` into `out` by pulling `grad` back through
    /// `u = z / |z|` and `z = x^T W`.
    fn backprop(&self, d: usize, out: &mut [f64]) {
        for (k, x) in self.inputs.iter().enumerate() {
            let u = &self.unit[k * d..(k + 1) * d];
            let g = &self.grad[k * d..(k + 1) * d];
            let ug = dot(u, g);
            let gz: Vec<f64> = u
                .iter()
                .zip(g)
                .map(|(ui, gi)| (gi - ui * ug) / self.norms[k])
                .collect();
            for (xi, row) in x.values().iter().zip(out.chunks_exact_mut(d)) {
                for (w, gzj) in row.iter_mut().zip(&gz) {
                    *w += xi * gzj;
                }
            }
        }
    }
}

pub(crate) fn pac_objective(
    batch: &[[&FeatureVector; 4]],
    heads: &DualHeads,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<PacGradient> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    let n = batch.len();
    let d = heads.joint_dim();
    let column = |k: usize| batch.iter().map(|tup| tup[k]).collect::<Vec<_>>();
    let mut v = Projected::new(column(0), &heads.visual)?;
    let mut t = Projected::new(column(1), &heads.textual)?;
    let mut v_gen = Projected::new(column(2), &heads.visual)?;
    let mut t_gen = Projected::new(column(3), &heads.textual)?;

    let mut loss = 0.0;
    let mut log_tau = 0.0;
    {
        let (l, s) = term(&mut v, &mut t, n, d, cfg.tau, 1.0, with_grad);
        loss += l;
        log_tau += s;
    }
    if cfg.lambda_v != 0.0 {
        let (l, s) = term(&mut v_gen, &mut t, n, d, cfg.tau, cfg.lambda_v, with_grad);
        loss += cfg.lambda_v * l;
        log_tau += cfg.lambda_v * s;
    }
    if cfg.lambda_t != 0.0 {
        let (l, s) = term(&mut v, &mut t_gen, n, d, cfg.tau, cfg.lambda_t, with_grad);
        loss += cfg.lambda_t * l;
        log_tau += cfg.lambda_t * s;
    }

    let mut visual = Vec::new();
    let mut textual = Vec::new();
    if with_grad {
        visual = vec![0.0; heads.visual.weights().len()];
        textual = vec![0.0; heads.textual.weights().len()];
        v.backprop(d, &mut visual);
        v_gen.backprop(d, &mut visual);
        t.backprop(d, &mut textual);
        t_gen.backprop(d, &mut textual);
    }
    Ok(PacGradient {
        loss,
        visual,
        textual,
        log_tau,
    })
}

fn term(
    a: &mut Projected<'_>,
    b: &mut Projected<'_>,
    n: usize,
    d: usize,
    tau: f64,
    weight: f64,
    with_grad: bool,
) -> (f64, f64) {
    if with_grad {
        let mut g = NceGrad {
            da: &mut a.grad,
            db: &mut b.grad,
            weight,
        };
        symmetric_nce(&a.unit, &b.unit, n, d, tau, Some(&mut g))
    } else {
        symmetric_nce(&a.unit, &b.unit, n, d, tau, None)
    }
}

struct NceGrad<'a> {
    da: &'a mut [f64],
    db: &'a mut [f64],
    weight: f64,
}

/// Returns the symmetric InfoNCE value and its (unweighted) derivative with
/// respect to `log(tau)`. When `grad` is given, `weight * dL/da` and
/// `weight * dL/db` are accumulated into it.
fn symmetric_nce(
    a: &[f64],
    b: &[f64],
    n: usize,
    d: usize,
    tau: f64,
    grad: Option<&mut NceGrad<'_>>,
) -> (f64, f64) {
    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        let ai = &a[i * d..(i + 1) * d];
        for j in 0..n {
            logits[i * n + j] = dot(ai, &b[j * d..(j + 1) * d]) / tau;
        }
    }
    let row_lse: Vec<f64> = (0..n)
        .map(|i| log_sum_exp((0..n).map(|j| logits[i * n + j])))
        .collect();
    let col_lse: Vec<f64> = (0..n)
        .map(|j| log_sum_exp((0..n).map(|i| logits[i * n + j])))
        .collect();
    let nf = n as f64;
    let row_loss: f64 = (0..n).map(|i| row_lse[i] - logits[i * n + i]).sum::<f64>() / nf;
    let col_loss: f64 = (0..n).map(|j| col_lse[j] - logits[j * n + j]).sum::<f64>() / nf;

    // dL/dS_ij = (P_ij + Q_ij - 2 delta_ij) / N with P row-softmax, Q column-softmax
    let mut dlogits = vec![0.0; n * n];
    let mut d_log_tau = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = logits[i * n + j];
            let p = (s - row_lse[i]).exp();
            let q = (s - col_lse[j]).exp();
            let delta = if i == j { 2.0 } else { 0.0 };
            let g = (p + q - delta) / nf;
            dlogits[i * n + j] = g;
            d_log_tau -= g * s;
        }
    }

    if let Some(g) = grad {
        let scale = g.weight / tau;
        for i in 0..n {
            for j in 0..n {
                let c = scale * dlogits[i * n + j];
                if c == 0.0 {
                    continue;
                }
                let (ai, bj) = (i * d, j * d);
                for k in 0..d {
                    g.da[ai + k] += c * b[bj + k];
                    g.db[bj + k] += c * a[ai + k];
                }
            }
        }
    }
    (row_loss + col_loss, d_log_tau)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(v.to_vec()).unwrap()
    }

    /// Direct double loop over the definition, no shared helpers.
    fn brute_info_nce(v: &[EmbeddingVector], t: &[EmbeddingVector], tau: f64) -> f64 {
        let n = v.len();
        let cos = |a: &EmbeddingVector, b: &EmbeddingVector| -> f64 {
            a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
        };
        let mut total = 0.0;
        for i in 0..n {
            let num = (cos(&v[i], &t[i]) / tau).exp();
            let row: f64 = (0..n).map(|j| (cos(&v[i], &t[j]) / tau).exp()).sum();
            let col: f64 = (0..n).map(|j| (cos(&v[j], &t[i]) / tau).exp()).sum();
            total -= (num / row).ln() / n as f64;
            total -= (num / col).ln() / n as f64;
        }
        total
    }

    #[test]
    fn single_pair_is_zero() {
        let v = [unit(&[0.3, 0.4])];
        let t = [unit(&[-1.0, 2.0])];
        assert_eq!(info_nce(&v, &t, 0.07).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_hand_value() {
        let e = [unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
        // 2 * -ln(e / (e + 1)) = 2 * ln(1 + e^-1)
        let expected = 0.626_523_375_036_445_6;
        assert!((info_nce(&e, &e, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn random_batch_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<_> = (0..8)
            .map(|_| EmbeddingVector::random(6, &mut rng).unwrap())
            .collect();
        let t: Vec<_> = (0..8)
            .map(|_| EmbeddingVector::random(6, &mut rng).unwrap())
            .collect();
        for tau in [0.5, 1.0, 2.0] {
            let got = info_nce(&v, &t, tau).unwrap();
            assert!((got - brute_info_nce(&v, &t, tau)).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_similarities_give_two_log_n() {
        for n in [2usize, 4, 8, 64] {
            let e = vec![unit(&[1.0, 0.0]); n];
            let got = info_nce(&e, &e, 0.01).unwrap();
            assert!((got - 2.0 * (n as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn info_nce_errors() {
        let e = [unit(&[1.0, 0.0])];
        assert!(matches!(info_nce(&[], &[], 1.0), Err(Error::Empty(_))));
        assert!(matches!(
            info_nce(&e, &e, 0.0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            info_nce(&e, &e, -1.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    fn random_fixture(
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> (FeatureStore, Vec<AugmentedTuple>, DualHeads) {
        let (dv, dt, d) = (5, 4, 3);
        let mut store = FeatureStore::new();
        let mut tuples = Vec::new();
        let fv = |dim: usize, rng: &mut ChaCha8Rng| {
            FeatureVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        for i in 0..n {
            store.insert_visual(format!("v{i}"), fv(dv, rng)).unwrap();
            store.insert_visual(format!("vg{i}"), fv(dv, rng)).unwrap();
            store.insert_text(format!("t{i}"), fv(dt, rng)).unwrap();
            store.insert_text(format!("tg{i}"), fv(dt, rng)).unwrap();
            tuples.push(AugmentedTuple::new(
                format!("v{i}"),
                format!("t{i}"),
                format!("vg{i}"),
                format!("tg{i}"),
            ));
        }
        let heads = DualHeads::new(
            ProjectionHead::random_orthonormal(dv, d, rng).unwrap(),
            ProjectionHead::random_orthonormal(dt, d, rng).unwrap(),
        )
        .unwrap();
        (store, tuples, heads)
    }

    fn embed(
        store: &FeatureStore,
        heads: &DualHeads,
        ids: &[&str],
        visual: bool,
    ) -> Vec<EmbeddingVector> {
        ids.iter()
            .map(|id| {
                if visual {
                    project(store.visual(id).unwrap(), &heads.visual).unwrap()
                } else {
                    project(store.text(id).unwrap(), &heads.textual).unwrap()
                }
            })
            .collect()
    }

    #[test]
    fn zero_lambdas_equal_plain_info_nce_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (store, tuples, heads) = random_fixture(&mut rng, 6);
        let cfg = LossConfig {
            tau: 0.1,
            lambda_v: 0.0,
            lambda_t: 0.0,
        };
        let v_ids: Vec<&str> = tuples.iter().map(|t| t.v.as_str()).collect();
        let t_ids: Vec<&str> = tuples.iter().map(|t| t.t.as_str()).collect();
        let plain = info_nce(
            &embed(&store, &heads, &v_ids, true),
            &embed(&store, &heads, &t_ids, false),
            0.1,
        )
        .unwrap();
        assert_eq!(pac_loss(&tuples, &store, &heads, &cfg).unwrap(), plain);
    }

    #[test]
    fn weighted_terms_match_independent_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (store, tuples, heads) = random_fixture(&mut rng, 4);
        let cfg = LossConfig {
            tau: 0.2,
            lambda_v: 0.05,
            lambda_t: 0.1,
        };
        let ids = |f: fn(&AugmentedTuple) -> &String| -> Vec<&str> {
            tuples.iter().map(|t| f(t).as_str()).collect()
        };
        let v = embed(&store, &heads, &ids(|t| &t.v), true);
        let t = embed(&store, &heads, &ids(|t| &t.t), false);
        let vg = embed(&store, &heads, &ids(|t| &t.v_gen), true);
        let tg = embed(&store, &heads, &ids(|t| &t.t_gen), false);
        let l1 = brute_info_nce(&v, &t, 0.2);
        let l2 = brute_info_nce(&vg, &t, 0.2);
        let l3 = brute_info_nce(&v, &tg, 0.2);
        let got = pac_loss(&tuples, &store, &heads, &cfg).unwrap();
        assert!((got - (l1 + 0.05 * l2 + 0.1 * l3)).abs() < 1e-10);
    }

    #[test]
    fn duplicated_positives_scale_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (store, mut tuples, heads) = random_fixture(&mut rng, 5);
        for t in &mut tuples {
            t.v_gen = t.v.clone();
            t.t_gen = t.t.clone();
        }
        let cfg = LossConfig::default();
        let base = pac_loss(
            &tuples,
            &store,
            &heads,
            &LossConfig {
                lambda_v: 0.0,
                lambda_t: 0.0,
                ..cfg
            },
        )
        .unwrap();
        let got = pac_loss(&tuples, &store, &heads, &cfg).unwrap();
        assert!((got - 1.15 * base).abs() < 1e-9 * got.abs().max(1.0));
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (store, tuples, heads) = random_fixture(&mut rng, 7);
        let cfg = LossConfig {
            tau: 0.3,
            ..LossConfig::default()
        };
        let mut shuffled = tuples.clone();
        shuffled.rotate_left(3);
        shuffled.swap(0, 5);
        let a = pac_loss(&tuples, &store, &heads, &cfg).unwrap();
        let b = pac_loss(&shuffled, &store, &heads, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn single_tuple_without_augmentation_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (store, tuples, heads) = random_fixture(&mut rng, 1);
        let cfg = LossConfig {
            tau: 0.01,
            lambda_v: 0.0,
            lambda_t: 0.0,
        };
        let g = pac_loss_grad(&tuples, &store, &heads, &cfg).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.visual.iter().chain(&g.textual).all(|&x| x == 0.0));
    }

    #[test]
    fn log_tau_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (store, tuples, heads) = random_fixture(&mut rng, 6);
        let cfg = LossConfig {
            tau: 0.05,
            ..LossConfig::default()
        };
        let g = pac_loss_grad(&tuples, &store, &heads, &cfg).unwrap();
        let h = 1e-6;
        let at = |s: f64| {
            pac_loss(
                &tuples,
                &store,
                &heads,
                &LossConfig {
                    tau: s.exp(),
                    ..cfg
                },
            )
            .unwrap()
        };
        let s = cfg.tau.ln();
        let numeric = (at(s + h) - at(s - h)) / (2.0 * h);
        assert!((numeric - g.log_tau).abs() < 1e-5 * numeric.abs().max(1.0));
    }
}
