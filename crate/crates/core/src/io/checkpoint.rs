//! Projection-head checkpoints stored as `projection-head` containers.
//!
//! The container holds two ids, `visual` and `textual`, each with
//! `backbone_dim` rows of `joint_dim` columns. Training metadata is the
//! container's JSON metadata block; an exporter initializer may leave it
//! empty.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{DualHeads, ProjectionHead};
use crate::error::{Error, Result};
use crate::io::container::{
    read_container, write_container, ContainerEntry, ContainerError, EmbeddingContainer, Role,
};
use crate::loss::LossConfig;
use crate::train::TrainConfig;

pub const VISUAL_ID: &str = "visual";
pub const TEXTUAL_ID: &str = "textual";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Iteration of the saved (best-validation) weights.
    pub iteration: usize,
    pub best_val_loss: f64,
    /// Temperature at the saved iteration.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub heads: DualHeads,
    pub meta: Option<CheckpointMeta>,
}

impl Checkpoint {
    /// Weights are stored as f32.
    pub fn to_container(&self) -> Result<EmbeddingContainer> {
        let meta = match &self.meta {
            Some(m) => serde_json::to_string(m).expect("checkpoint metadata serializes"),
            None => String::new(),
        };
        let entry = |id: &str, h: &ProjectionHead| {
            ContainerEntry::new(id, h.weights().iter().map(|&w| w as f32).collect())
        };
        Ok(EmbeddingContainer::new(
            Role::ProjectionHead,
            self.heads.joint_dim(),
            meta,
            vec![
                entry(VISUAL_ID, &self.heads.visual),
                entry(TEXTUAL_ID, &self.heads.textual),
            ],
        )?)
    }

    pub fn from_container(c: &EmbeddingContainer) -> Result<Self> {
        if c.role() != Role::ProjectionHead {
            return Err(ContainerError::InvalidLayout(format!(
                "expected a projection-head container, got {}",
                c.role()
            ))
            .into());
        }
        let head = |id: &str| -> Result<ProjectionHead> {
            let e = c.get(id).ok_or_else(|| {
                ContainerError::InvalidLayout(format!("checkpoint lacks the {id} head"))
            })?;
            let rows = e.values.len() / c.cols();
            let weights = e.values.iter().map(|&w| f64::from(w)).collect();
            ProjectionHead::new(rows, c.cols(), weights)
        };
        let heads = DualHeads::new(head(VISUAL_ID)?, head(TEXTUAL_ID)?)?;
        let meta = if c.metadata().trim().is_empty() {
            None
        } else {
            Some(
                serde_json::from_str(c.metadata())
                    .map_err(|e| Error::InvalidConfig(format!("checkpoint metadata: {e}")))?,
            )
        };
        Ok(Self { heads, meta })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_container(&ckpt.to_container()?, path)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_container(&read_container(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f32_exact() {
        let heads = DualHeads::new(
            ProjectionHead::new(3, 2, vec![0.5, -1.0, 0.25, 2.0, 1.5, 0.0]).unwrap(),
            ProjectionHead::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let ckpt = Checkpoint {
            heads,
            meta: Some(CheckpointMeta {
                loss: LossConfig::default(),
                train: TrainConfig::default(),
                iteration: 300,
                best_val_loss: 0.75,
                tau: 0.01,
            }),
        };
        let back = Checkpoint::from_container(&ckpt.to_container().unwrap()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn wrong_role_rejected() {
        let c = EmbeddingContainer::new(Role::VisualFeature, 1, "", vec![]).unwrap();
        assert!(Checkpoint::from_container(&c).is_err());
    }

    #[test]
    fn missing_head_rejected() {
        let c = EmbeddingContainer::new(
            Role::ProjectionHead,
            1,
            "",
            vec![ContainerEntry::new(VISUAL_ID, vec![1.0])],
        )
        .unwrap();
        assert!(Checkpoint::from_container(&c).is_err());
    }
}
