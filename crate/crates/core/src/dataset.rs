//! Feature stores and positive-augmented training tuples.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::FeatureVector;
use crate::error::{Error, Result};
use crate::rng::{SeedStreams, SPLIT};

/// `(v, t, v', t')`: a real image, its real caption, an image generated from
/// the caption and a caption generated from the image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedTuple {
    pub v: String,
    pub t: String,
    pub v_gen: String,
    pub t_gen: String,
}

impl AugmentedTuple {
    pub fn new(
        v: impl Into<String>,
        t: impl Into<String>,
        v_gen: impl Into<String>,
        t_gen: impl Into<String>,
    ) -> Self {
        Self {
            v: v.into(),
            t: t.into(),
            v_gen: v_gen.into(),
            t_gen: t_gen.into(),
        }
    }
}

/// Pre-projection features keyed by record id, one map per modality.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    visual: HashMap<String, FeatureVector>,
    text: HashMap<String, FeatureVector>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_visual(&mut self, id: impl Into<String>, x: FeatureVector) -> Result<()> {
        insert_checked(&mut self.visual, id.into(), x)
    }

    pub fn insert_text(&mut self, id: impl Into<String>, x: FeatureVector) -> Result<()> {
        insert_checked(&mut self.text, id.into(), x)
    }

    pub fn visual(&self, id: &str) -> Option<&FeatureVector> {
        self.visual.get(id)
    }

    pub fn text(&self, id: &str) -> Option<&FeatureVector> {
        self.text.get(id)
    }

    pub fn visual_dim(&self) -> Option<usize> {
        self.visual.values().next().map(FeatureVector::dim)
    }

    pub fn text_dim(&self) -> Option<usize> {
        self.text.values().next().map(FeatureVector::dim)
    }

    pub fn visual_ids(&self) -> impl Iterator<Item = &str> {
        self.visual.keys().map(String::as_str)
    }

    pub fn text_ids(&self) -> impl Iterator<Item = &str> {
        self.text.keys().map(String::as_str)
    }

    /// Resolves every tuple to feature references. All missing ids are
    /// reported together.
    pub fn resolve<'a>(&'a self, tuples: &[AugmentedTuple]) -> Result<Vec<[&'a FeatureVector; 4]>> {
        let mut missing = BTreeSet::new();
        let mut out = Vec::with_capacity(tuples.len());
        for tup in tuples {
            let v = self.visual.get(&tup.v);
            let t = self.text.get(&tup.t);
            let vg = self.visual.get(&tup.v_gen);
            let tg = self.text.get(&tup.t_gen);
            match (v, t, vg, tg) {
                (Some(v), Some(t), Some(vg), Some(tg)) => out.push([v, t, vg, tg]),
                _ => {
                    for (found, id) in [
                        (v.is_some(), &tup.v),
                        (t.is_some(), &tup.t),
                        (vg.is_some(), &tup.v_gen),
                        (tg.is_some(), &tup.t_gen),
                    ] {
                        if !found {
                            missing.insert(id.clone());
                        }
                    }
                }
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(Error::DanglingIds(missing.into_iter().collect()))
        }
    }
}

fn insert_checked(
    map: &mut HashMap<String, FeatureVector>,
    id: String,
    x: FeatureVector,
) -> Result<()> {
    if let Some(existing) = map.values().next() {
        if existing.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                expected: existing.dim(),
                got: x.dim(),
            });
        }
    }
    if map.contains_key(&id) {
        return Err(Error::InvalidConfig(format!("duplicate feature id {id}")));
    }
    map.insert(id, x);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSplits {
    pub train: Vec<AugmentedTuple>,
    pub val: Vec<AugmentedTuple>,
}

impl TrainSplits {
    /// Seeded random split holding out `round(val_fraction * len)` tuples
    /// (at least one of each side).
    pub fn random(tuples: Vec<AugmentedTuple>, val_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {val_fraction} outside (0, 1)"
            )));
        }
        if tuples.len() < 2 {
            return Err(Error::Empty("training tuples (need at least two to split)"));
        }
        let mut tuples = tuples;
        tuples.shuffle(&mut SeedStreams::new(seed).stream(SPLIT));
        let n_val =
            ((tuples.len() as f64 * val_fraction).round() as usize).clamp(1, tuples.len() - 1);
        let train = tuples.split_off(n_val);
        Ok(Self { train, val: tuples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn resolve_reports_all_missing_ids() {
        let mut store = FeatureStore::new();
        store.insert_visual("v1", fv(&[1.0, 0.0])).unwrap();
        store.insert_text("t1", fv(&[1.0])).unwrap();
        let tuples = vec![
            AugmentedTuple::new("v1", "t1", "v1", "t1"),
            AugmentedTuple::new("v1", "t9", "v8", "t1"),
        ];
        match store.resolve(&tuples) {
            Err(Error::DanglingIds(ids)) => assert_eq!(ids, vec!["t9", "v8"]),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.resolve(&tuples[..1]).unwrap().len(), 1);
    }

    #[test]
    fn store_rejects_mixed_dims_and_duplicates() {
        let mut store = FeatureStore::new();
        store.insert_visual("a", fv(&[1.0, 0.0])).unwrap();
        assert!(store.insert_visual("b", fv(&[1.0])).is_err());
        assert!(store.insert_visual("a", fv(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn split_is_seeded_and_partitions() {
        let tuples: Vec<_> = (0..20)
            .map(|i| AugmentedTuple::new(format!("v{i}"), format!("t{i}"), "g", "h"))
            .collect();
        let a = TrainSplits::random(tuples.clone(), 0.25, 1).unwrap();
        let b = TrainSplits::random(tuples.clone(), 0.25, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.val.len(), 5);
        assert_eq!(a.train.len(), 15);
        let c = TrainSplits::random(tuples, 0.25, 2).unwrap();
        assert_ne!(a, c);
    }
}
