//! Accuracy protocols: pairwise caption preference, foil detection and
//! system-level comparison tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedStreams, DRAWS};
use crate::scoring::{mean_std, CaptionScorer, ScoreRecord};

/// Pair category: two correct human captions (HC), human correct vs human
/// incorrect (HI), human vs machine (HM), two machine captions (MM).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    HC,
    HI,
    HM,
    MM,
    #[serde(rename = "none")]
    Unlabeled,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::HC => "HC",
            Category::HI => "HI",
            Category::HM => "HM",
            Category::MM => "MM",
            Category::Unlabeled => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
}

impl Winner {
    /// Majority of human votes; an exact tie is settled by a coin flip.
    pub fn from_votes<R: Rng + ?Sized>(votes_a: u32, votes_b: u32, rng: &mut R) -> Self {
        match votes_a.cmp(&votes_b) {
            std::cmp::Ordering::Greater => Winner::A,
            std::cmp::Ordering::Less => Winner::B,
            std::cmp::Ordering::Equal => {
                if rng.random_bool(0.5) {
                    Winner::A
                } else {
                    Winner::B
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwisePair {
    pub id: String,
    pub media: String,
    pub a: String,
    pub b: String,
    pub winner: Winner,
    pub category: Category,
    /// Reference pool the per-draw references are sampled from.
    #[serde(default)]
    pub refs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseConfig {
    pub refs_per_draw: usize,
    pub draws: usize,
    pub seed: u64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        Self {
            refs_per_draw: 5,
            draws: 5,
            seed: 0,
        }
    }
}

/// Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAccuracy {
    pub per_category: BTreeMap<Category, f64>,
    /// Unweighted mean over the categories present.
    pub mean: f64,
    /// Draws actually run (one for reference-free scorers).
    pub draws: usize,
    pub seed: u64,
}

impl PairwiseAccuracy {
    pub fn mean_percent(&self) -> f64 {
        100.0 * self.mean
    }
}

/// Fraction of pairs where the human-preferred caption scores strictly
/// higher; equal scores count one half. Reference-based scorers are run once
/// per draw with `refs_per_draw` references sampled from each pair's pool,
/// and results are averaged over draws.
pub fn pairwise_accuracy(
    pairs: &[PairwisePair],
    scorer: &dyn CaptionScorer,
    cfg: &PairwiseConfig,
) -> Result<PairwiseAccuracy> {
    if pairs.is_empty() {
        return Err(Error::Empty("pairwise pairs"));
    }
    let uses_refs = scorer.uses_references();
    if uses_refs {
        if cfg.draws == 0 || cfg.refs_per_draw == 0 {
            return Err(Error::InvalidConfig(
                "draws and refs_per_draw must be positive".into(),
            ));
        }
        for p in pairs {
            if p.refs.len() < cfg.refs_per_draw {
                return Err(Error::InsufficientReferences {
                    media: p.media.clone(),
                    available: p.refs.len(),
                    required: cfg.refs_per_draw,
                });
            }
        }
    }
    let draws = if uses_refs { cfg.draws } else { 1 };
    let streams = SeedStreams::new(cfg.seed);
    let mut sums: BTreeMap<Category, f64> = BTreeMap::new();
    for d in 0..draws {
        let mut rng = streams.substream(DRAWS, d as u64);
        let mut hits: BTreeMap<Category, (f64, usize)> = BTreeMap::new();
        for p in pairs {
            let refs: Vec<String> = if uses_refs {
                index::sample(&mut rng, p.refs.len(), cfg.refs_per_draw)
                    .into_iter()
                    .map(|i| p.refs[i].clone())
                    .collect()
            } else {
                Vec::new()
            };
            let sa = scorer.score(&p.media, &p.a, &refs)?;
            let sb = scorer.score(&p.media, &p.b, &refs)?;
            let (preferred, other) = match p.winner {
                Winner::A => (sa, sb),
                Winner::B => (sb, sa),
            };
            let hit = if preferred > other {
                1.0
            } else if preferred == other {
                0.5
            } else {
                0.0
            };
            let e = hits.entry(p.category).or_default();
            e.0 += hit;
            e.1 += 1;
        }
        for (cat, (h, n)) in hits {
            *sums.entry(cat).or_default() += h / n as f64;
        }
    }
    let per_category: BTreeMap<Category, f64> = sums
        .into_iter()
        .map(|(c, s)| (c, s / draws as f64))
        .collect();
    let mean = per_category.values().sum::<f64>() / per_category.len() as f64;
    Ok(PairwiseAccuracy {
        per_category,
        mean,
        draws,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoilPair {
    pub id: String,
    pub media: String,
    pub correct: String,
    pub foil: String,
    #[serde(default)]
    pub refs: Vec<String>,
}

/// Fraction of pairs where the correct caption scores strictly above the
/// foil. Ties count as failures.
pub fn foil_accuracy(pairs: &[FoilPair], scorer: &dyn CaptionScorer) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("foil pairs"));
    }
    let mut hits = 0usize;
    for p in pairs {
        if p.correct == p.foil {
            return Err(Error::InvalidConfig(format!(
                "foil pair {} uses the same caption twice",
                p.id
            )));
        }
        let good = scorer.score(&p.media, &p.correct, &p.refs)?;
        let bad = scorer.score(&p.media, &p.foil, &p.refs)?;
        if good > bad {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// One captioning system's predictions over a shared media set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelCandidates {
    pub name: String,
    pub records: Vec<ScoreRecord>,
}

/// Corpus-mean score of every model under every metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemTable {
    pub metrics: Vec<String>,
    pub rows: Vec<SystemRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemRow {
    pub model: String,
    pub means: Vec<f64>,
}

impl fmt::Display for SystemTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.model.len())
            .chain(std::iter::once("model".len()))
            .max()
            .unwrap_or(5);
        write!(f, "{:<name_w$}", "model")?;
        for m in &self.metrics {
            write!(f, "  {:>10}", m)?;
        }
        writeln!(f)?;
        for row in &self.rows {
            write!(f, "{:<name_w$}", row.model)?;
            for v in &row.means {
                write!(f, "  {:>10.4}", v)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn system_report(
    models: &[ModelCandidates],
    metrics: &[(&str, &dyn CaptionScorer)],
) -> Result<SystemTable> {
    let first = models.first().ok_or(Error::Empty("system report models"))?;
    if metrics.is_empty() {
        return Err(Error::Empty("system report metrics"));
    }
    let media_set = |m: &ModelCandidates| -> BTreeSet<String> {
        m.records.iter().map(|r| r.media.clone()).collect()
    };
    let baseline = media_set(first);
    if baseline.is_empty() {
        return Err(Error::Empty("model candidates"));
    }
    for m in &models[1..] {
        if media_set(m) != baseline {
            return Err(Error::MismatchedMedia {
                model: m.name.clone(),
                baseline: first.name.clone(),
            });
        }
    }
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let mut means = Vec::with_capacity(metrics.len());
        for (_, scorer) in metrics {
            let scores = m
                .records
                .iter()
                .map(|r| scorer.score(&r.media, &r.candidate, &r.refs))
                .collect::<Result<Vec<_>>>()?;
            let (mean, _) = mean_std(scores.iter().copied());
            means.push(mean.expect("nonempty"));
        }
        rows.push(SystemRow {
            model: m.name.clone(),
            means,
        });
    }
    Ok(SystemTable {
        metrics: metrics.iter().map(|(n, _)| n.to_string()).collect(),
        rows,
    })
}
