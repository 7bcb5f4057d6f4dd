//! Projection-head finetuning with AdamW, early stopping and a lambda grid
//! search.

use serde::{Deserialize, Serialize};

use rand::seq::SliceRandom;

use crate::dataset::{FeatureStore, TrainSplits};
use crate::embedding::{dot, project, DualHeads, FeatureVector, ProjectionHead};
use crate::error::{Error, Result};
use crate::loss::{pac_objective, LossConfig};
use crate::optim::{adamw_step, AdamWParams, OptimizerState};
use crate::rng::{SeedStreams, INIT, SHUFFLE};
use crate::scoring::{pac_score, ScoreConfig};
use crate::stats::CorrelationStat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stop once this many iterations pass without a new validation minimum.
    pub patience_iters: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Validation cadence in iterations (capped at `patience_iters`).
    pub val_every: usize,
    /// Learn `log(tau)` jointly with the heads.
    pub learn_temperature: bool,
    pub adamw: AdamWParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 256,
            patience_iters: 1500,
            max_iters: 100_000,
            seed: 0,
            val_every: 100,
            learn_temperature: false,
            adamw: AdamWParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adamw.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("patience_iters", self.patience_iters),
            ("max_iters", self.max_iters),
            ("val_every", self.val_every),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Where the heads start from.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadInit {
    /// Exported backbone projections.
    Pretrained(DualHeads),
    /// Seeded random heads with orthonormal columns.
    Random { joint_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Patience,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Minibatch loss at each iteration, before that iteration's update.
    pub train_loss: Vec<f64>,
    /// `(iteration, validation loss)`, starting with iteration 0.
    pub validation: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Heads from the best validation checkpoint.
    pub heads: DualHeads,
    /// Temperature at the best checkpoint.
    pub tau: f64,
    pub best_iteration: usize,
    pub best_val_loss: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub history: TrainHistory,
}

pub fn initial_heads(init: &HeadInit, store: &FeatureStore, seed: u64) -> Result<DualHeads> {
    let dv = store.visual_dim().ok_or(Error::Empty("visual features"))?;
    let dt = store.text_dim().ok_or(Error::Empty("text features"))?;
    match init {
        HeadInit::Pretrained(h) => {
            if h.visual.backbone_dim() != dv {
                return Err(Error::DimensionMismatch {
                    expected: dv,
                    got: h.visual.backbone_dim(),
                });
            }
            if h.textual.backbone_dim() != dt {
                return Err(Error::DimensionMismatch {
                    expected: dt,
                    got: h.textual.backbone_dim(),
                });
            }
            Ok(h.clone())
        }
        HeadInit::Random { joint_dim } => {
            let mut rng = SeedStreams::new(seed).stream(INIT);
            DualHeads::new(
                ProjectionHead::random_orthonormal(dv, *joint_dim, &mut rng)?,
                ProjectionHead::random_orthonormal(dt, *joint_dim, &mut rng)?,
            )
        }
    }
}

/// Mean objective over the validation set, evaluated in chunks of at most
/// `chunk` tuples and weighted by chunk size.
fn validation_loss(
    val: &[[&FeatureVector; 4]],
    heads: &DualHeads,
    loss_cfg: &LossConfig,
    chunk: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for part in val.chunks(chunk) {
        total += part.len() as f64 * pac_objective(part, heads, loss_cfg, false)?.loss;
    }
    Ok(total / val.len() as f64)
}

/// Minibatch training of both heads.
///
/// Minibatches come from epoch-wise seeded shuffles with the last partial
/// batch dropped; the batch size is capped at the training-set size. The
/// validation loss is computed at iteration 0 and every
/// `min(val_every, patience_iters)` iterations, and training stops once
/// `patience_iters` iterations pass without a strictly lower value.
pub fn train(
    splits: &TrainSplits,
    store: &FeatureStore,
    init: &HeadInit,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if splits.val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let train_set = store.resolve(&splits.train)?;
    let val_set = store.resolve(&splits.val)?;
    let mut heads = initial_heads(init, store, cfg.seed)?;

    let batch = cfg.batch_size.min(train_set.len());
    let cadence = cfg.val_every.min(cfg.patience_iters);
    let mut shuffle_rng = SeedStreams::new(cfg.seed).stream(SHUFFLE);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;

    let mut state_v = OptimizerState::new(heads.visual.weights().len());
    let mut state_t = OptimizerState::new(heads.textual.weights().len());
    let mut state_tau = OptimizerState::new(1);
    let tau_params = AdamWParams {
        weight_decay: 0.0,
        ..cfg.adamw
    };
    let mut loss_cfg = *loss_cfg;
    let mut log_tau = [loss_cfg.tau.ln()];

    let mut history = TrainHistory::default();
    let initial = validation_loss(&val_set, &heads, &loss_cfg, batch)?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: 0,
            value: initial,
        });
    }
    history.validation.push((0, initial));
    let mut best = (initial, 0usize, heads.clone(), loss_cfg.tau);
    let mut stop_reason = StopReason::MaxIters;
    let mut iterations = 0;

    let mut minibatch = Vec::with_capacity(batch);
    for it in 1..=cfg.max_iters {
        if cursor + batch > order.len() {
            order.shuffle(&mut shuffle_rng);
            cursor = 0;
        }
        minibatch.clear();
        minibatch.extend(order[cursor..cursor + batch].iter().map(|&i| train_set[i]));
        cursor += batch;

        let g = pac_objective(&minibatch, &heads, &loss_cfg, true)?;
        if !g.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                value: g.loss,
            });
        }
        history.train_loss.push(g.loss);
        adamw_step(
            heads.visual.weights_mut(),
            &g.visual,
            &mut state_v,
            cfg.learning_rate,
            &cfg.adamw,
        )?;
        adamw_step(
            heads.textual.weights_mut(),
            &g.textual,
            &mut state_t,
            cfg.learning_rate,
            &cfg.adamw,
        )?;
        if cfg.learn_temperature {
            adamw_step(
                &mut log_tau,
                &[g.log_tau],
                &mut state_tau,
                cfg.learning_rate,
                &tau_params,
            )?;
            loss_cfg.tau = log_tau[0].exp();
        }
        iterations = it;

        if it % cadence == 0 || it == cfg.max_iters {
            let val = validation_loss(&val_set, &heads, &loss_cfg, batch)?;
            if !val.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    value: val,
                });
            }
            history.validation.push((it, val));
            if val < best.0 {
                best = (val, it, heads.clone(), loss_cfg.tau);
            } else if it - best.1 >= cfg.patience_iters {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let (best_val_loss, best_iteration, heads, tau) = best;
    Ok(TrainOutcome {
        heads,
        tau,
        best_iteration,
        best_val_loss,
        iterations,
        stop_reason,
        history,
    })
}

/// Recall@1 of diagonal retrieval in both directions over tuples' real
/// pairs: `(image -> text, text -> image)`.
pub fn retrieval_recall_at_1(
    splits_val: &[crate::dataset::AugmentedTuple],
    store: &FeatureStore,
    heads: &DualHeads,
) -> Result<(f64, f64)> {
    let resolved = store.resolve(splits_val)?;
    if resolved.is_empty() {
        return Err(Error::Empty("retrieval set"));
    }
    let v = resolved
        .iter()
        .map(|t| project(t[0], &heads.visual))
        .collect::<Result<Vec<_>>>()?;
    let t = resolved
        .iter()
        .map(|t| project(t[1], &heads.textual))
        .collect::<Result<Vec<_>>>()?;
    let n = v.len();
    let sim = |i: usize, j: usize| dot(v[i].values(), t[j].values());
    let argmax =
        |f: &dyn Fn(usize) -> f64| (0..n).fold(0, |best, k| if f(k) > f(best) { k } else { best });
    let i2t = (0..n).filter(|&i| argmax(&|j| sim(i, j)) == i).count();
    let t2i = (0..n).filter(|&j| argmax(&|i| sim(i, j)) == j).count();
    Ok((i2t as f64 / n as f64, t2i as f64 / n as f64))
}

/// Validation tasks scoring a set of trained heads.
pub trait EvalBundle {
    /// One correlation (or accuracy) value per task.
    fn evaluate(&self, heads: &DualHeads) -> Result<Vec<f64>>;
}

/// Human-judgment correlation task over pre-projection features.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTask {
    /// `(media id, candidate caption id, human score)`.
    pub items: Vec<(String, String, f64)>,
    pub stat: CorrelationStat,
}

pub struct CorrelationBundle<'a> {
    pub store: &'a FeatureStore,
    pub tasks: Vec<CorrelationTask>,
    pub score: ScoreConfig,
}

impl EvalBundle for CorrelationBundle<'_> {
    fn evaluate(&self, heads: &DualHeads) -> Result<Vec<f64>> {
        self.tasks
            .iter()
            .map(|task| {
                let mut metric = Vec::with_capacity(task.items.len());
                let mut human = Vec::with_capacity(task.items.len());
                for (media, cand, h) in &task.items {
                    let v = self
                        .store
                        .visual(media)
                        .ok_or_else(|| Error::DanglingIds(vec![media.clone()]))?;
                    let t = self
                        .store
                        .text(cand)
                        .ok_or_else(|| Error::DanglingIds(vec![cand.clone()]))?;
                    metric.push(pac_score(
                        &project(t, &heads.textual)?,
                        &project(v, &heads.visual)?,
                        &self.score,
                    )?);
                    human.push(*h);
                }
                task.stat.compute(&metric, &human)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub lambda_v: f64,
    pub lambda_t: f64,
    pub scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchOutcome {
    pub best: (f64, f64),
    pub points: Vec<GridPoint>,
    pub best_outcome: TrainOutcome,
}

/// Trains one model per `(lambda_v, lambda_t)` point and keeps the one whose
/// bundle scores have the highest mean. Ties go to the earlier grid point.
pub fn grid_search(
    grid: &[(f64, f64)],
    splits: &TrainSplits,
    store: &FeatureStore,
    init: &HeadInit,
    cfg: &TrainConfig,
    base: &LossConfig,
    bundle: &dyn EvalBundle,
) -> Result<GridSearchOutcome> {
    if grid.is_empty() {
        return Err(Error::Empty("lambda grid"));
    }
    let mut points: Vec<GridPoint> = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, TrainOutcome)> = None;
    for &(lambda_v, lambda_t) in grid {
        let loss_cfg = LossConfig {
            lambda_v,
            lambda_t,
            ..*base
        };
        let outcome = train(splits, store, init, cfg, &loss_cfg)?;
        let scores = bundle.evaluate(&outcome.heads)?;
        if scores.is_empty() {
            return Err(Error::Empty("evaluation bundle"));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let better = match &best {
            None => true,
            Some((idx, _)) => mean > points[*idx].mean,
        };
        if better {
            best = Some((points.len(), outcome));
        }
        points.push(GridPoint {
            lambda_v,
            lambda_t,
            scores,
            mean,
        });
    }
    let (idx, best_outcome) = best.expect("nonempty grid");
    Ok(GridSearchOutcome {
        best: (points[idx].lambda_v, points[idx].lambda_t),
        points,
        best_outcome,
    })
}
