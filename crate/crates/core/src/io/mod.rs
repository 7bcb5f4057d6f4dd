//! File interchange: embedding containers, manifests, checkpoints, reports,
//! and the loaders turning containers into feature and embedding stores.

pub mod checkpoint;
pub mod container;
pub mod manifest;
pub mod report;

use std::collections::BTreeSet;

use crate::dataset::FeatureStore;
use crate::embedding::{l2_normalize, project, DualHeads, FeatureVector, ProjectionHead};
use crate::error::{Error, Result};
use crate::scoring::{EmbeddingStore, TokenSequence};

use container::{ContainerError, EmbeddingContainer, Role};

fn expect_role(c: &EmbeddingContainer, role: Role) -> Result<()> {
    if c.role() == role {
        Ok(())
    } else {
        Err(
            ContainerError::InvalidLayout(format!("expected a {role} container, got {}", c.role()))
                .into(),
        )
    }
}

/// Pre-projection features for training.
pub fn feature_store(
    visual: &EmbeddingContainer,
    text: &EmbeddingContainer,
) -> Result<FeatureStore> {
    expect_role(visual, Role::VisualFeature)?;
    expect_role(text, Role::TextFeature)?;
    let mut store = FeatureStore::new();
    for e in visual.entries() {
        store.insert_visual(e.id.clone(), FeatureVector::from_f32(&e.values)?)?;
    }
    for e in text.entries() {
        store.insert_text(e.id.clone(), FeatureVector::from_f32(&e.values)?)?;
    }
    Ok(store)
}

/// Containers feeding a scoring run. Any may be absent when the mode does
/// not need it.
#[derive(Debug, Clone, Default)]
pub struct StoreSources {
    pub visual: Option<EmbeddingContainer>,
    pub text: Option<EmbeddingContainer>,
    pub frames: Option<EmbeddingContainer>,
    pub tokens: Option<EmbeddingContainer>,
}

fn embed(
    values: &[f32],
    head: Option<&ProjectionHead>,
) -> Result<crate::embedding::EmbeddingVector> {
    let x = FeatureVector::from_f32(values)?;
    match head {
        Some(h) => project(&x, h),
        None => l2_normalize(&x),
    }
}

/// Projects every container row into the joint space. Without heads the
/// rows are taken to be joint-space already and only normalized. Token
/// sequences take their global embedding from the text container row with
/// the same id.
pub fn embedding_store(
    sources: &StoreSources,
    heads: Option<&DualHeads>,
) -> Result<EmbeddingStore> {
    let vh = heads.map(|h| &h.visual);
    let th = heads.map(|h| &h.textual);
    let mut store = EmbeddingStore::new();
    if let Some(c) = &sources.visual {
        expect_role(c, Role::VisualFeature)?;
        for e in c.entries() {
            store.insert_visual(e.id.clone(), embed(&e.values, vh)?);
        }
    }
    if let Some(c) = &sources.text {
        expect_role(c, Role::TextFeature)?;
        for e in c.entries() {
            store.insert_text(e.id.clone(), embed(&e.values, th)?);
        }
    }
    if let Some(c) = &sources.frames {
        expect_role(c, Role::FrameSequence)?;
        for e in c.entries() {
            let frames = e
                .values
                .chunks_exact(c.cols())
                .map(|row| embed(row, vh))
                .collect::<Result<Vec<_>>>()?;
            store.insert_frames(e.id.clone(), frames)?;
        }
    }
    if let Some(c) = &sources.tokens {
        expect_role(c, Role::TextTokenSequence)?;
        let mut missing = BTreeSet::new();
        for e in c.entries() {
            let Ok(global) = store.text(&e.id) else {
                missing.insert(e.id.clone());
                continue;
            };
            let global = global.clone();
            let tokens = e
                .labels
                .iter()
                .zip(e.values.chunks_exact(c.cols()))
                .map(|(label, row)| Ok((label.clone(), embed(row, th)?)))
                .collect::<Result<Vec<_>>>()?;
            store.insert_tokens(e.id.clone(), TokenSequence::new(tokens, global)?);
        }
        if !missing.is_empty() {
            return Err(Error::DanglingIds(missing.into_iter().collect()));
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::container::ContainerEntry;
    use super::*;

    #[test]
    fn tokens_need_global_rows() {
        let tokens = EmbeddingContainer::new(
            Role::TextTokenSequence,
            2,
            "",
            vec![ContainerEntry::with_labels(
                "c",
                vec![1.0, 0.0],
                vec!["dog".into()],
            )],
        )
        .unwrap();
        let sources = StoreSources {
            tokens: Some(tokens.clone()),
            ..StoreSources::default()
        };
        assert!(matches!(
            embedding_store(&sources, None),
            Err(Error::DanglingIds(_))
        ));
        let text = EmbeddingContainer::new(
            Role::TextFeature,
            2,
            "",
            vec![ContainerEntry::new("c", vec![3.0, 4.0])],
        )
        .unwrap();
        let sources = StoreSources {
            text: Some(text),
            tokens: Some(tokens),
            ..StoreSources::default()
        };
        let store = embedding_store(&sources, None).unwrap();
        assert_eq!(store.tokens("c").unwrap().global().values(), &[0.6, 0.8]);
    }

    #[test]
    fn roles_checked() {
        let c = EmbeddingContainer::new(Role::TextFeature, 1, "", vec![]).unwrap();
        assert!(feature_store(&c, &c).is_err());
    }
}
