use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use pacs_core::io::checkpoint::read_checkpoint;
use pacs_core::io::container::read_container;
use pacs_core::io::{embedding_store, StoreSources};
use pacs_core::scoring::{compute_idf, TokenSequence};
use pacs_core::{DualHeads, EmbeddingStore, IdfTable, Mode, ScoreConfig};

/// Embedding inputs shared by every scoring command.
#[derive(Debug, Args)]
pub struct EmbeddingArgs {
    /// Projection-head checkpoint; without one, container rows are used as
    /// joint-space embeddings directly
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Visual-feature container (image mode)
    #[arg(long)]
    pub features_visual: Option<PathBuf>,
    /// Text-feature container (captions; global embeddings in video mode)
    #[arg(long)]
    pub features_text: Option<PathBuf>,
    /// Frame-sequence container (video mode)
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Text-token-sequence container (video mode)
    #[arg(long)]
    pub tokens: Option<PathBuf>,
}

pub fn heads(path: Option<&Path>) -> Result<Option<DualHeads>> {
    path.map(|p| {
        read_checkpoint(p)
            .map(|c| c.heads)
            .with_context(|| format!("loading checkpoint {}", p.display()))
    })
    .transpose()
}

fn container(
    path: Option<&PathBuf>,
    flag: &str,
    needed: bool,
) -> Result<Option<pacs_core::EmbeddingContainer>> {
    match path {
        Some(p) => Ok(Some(
            read_container(p).with_context(|| format!("reading {}", p.display()))?,
        )),
        None if needed => bail!("--{flag} is required"),
        None => Ok(None),
    }
}

pub fn store(args: &EmbeddingArgs, mode: Mode) -> Result<EmbeddingStore> {
    let video = mode == Mode::Video;
    let sources = StoreSources {
        visual: container(args.features_visual.as_ref(), "features-visual", !video)?,
        text: container(args.features_text.as_ref(), "features-text", true)?,
        frames: container(args.frames.as_ref(), "frames", video)?,
        tokens: container(args.tokens.as_ref(), "tokens", video)?,
    };
    let heads = heads(args.checkpoint.as_deref())?;
    Ok(embedding_store(&sources, heads.as_ref())?)
}

/// Idf over the given caption ids' token surfaces.
pub fn idf_for(store: &EmbeddingStore, ids: &[&str]) -> Result<IdfTable> {
    let corpus = ids
        .iter()
        .map(|id| store.tokens(id).map(TokenSequence::surface))
        .collect::<pacs_core::Result<Vec<_>>>()?;
    Ok(compute_idf(&corpus)?)
}

pub fn score_config(mode: Mode, w: Option<f64>) -> ScoreConfig {
    let mut cfg = ScoreConfig::default();
    match (mode, w) {
        (Mode::Image, Some(w)) => cfg.w = w,
        (Mode::Video, Some(w)) => cfg.video_w = w,
        (_, None) => {}
    }
    cfg
}

pub fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
