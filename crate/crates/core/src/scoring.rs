//! Reference-free and reference-based caption scores for images and videos.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, mean_pool, EmbeddingVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Scale applied to the clamped image-caption cosine.
    pub w: f64,
    /// Scale applied to the video score.
    pub video_w: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            w: 2.0,
            video_w: 1.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w > 0.0 && self.w.is_finite() && self.video_w > 0.0 && self.video_w.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "score scales must be positive, got w = {}, video_w = {}",
                self.w, self.video_w
            )))
        }
    }
}

/// `w * max(cos(t, v), 0)`.
pub fn pac_score(t: &EmbeddingVector, v: &EmbeddingVector, cfg: &ScoreConfig) -> Result<f64> {
    Ok(cfg.w * cosine(t, v)?.max(0.0))
}

/// `2ab / (a + b)`, zero when `a + b == 0`.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Harmonic mean of the reference-free score and the best clamped
/// candidate-reference cosine.
pub fn ref_pac_score(
    t: &EmbeddingVector,
    v: &EmbeddingVector,
    refs: &[EmbeddingVector],
    cfg: &ScoreConfig,
) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    let mut best = f64::NEG_INFINITY;
    for r in refs {
        best = best.max(cosine(t, r)?);
    }
    Ok(harmonic_mean(pac_score(t, v, cfg)?, best.max(0.0)))
}

/// A caption's per-token embeddings (with surface strings for idf lookup)
/// and its global embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    tokens: Vec<(String, EmbeddingVector)>,
    global: EmbeddingVector,
}

impl TokenSequence {
    pub fn new(tokens: Vec<(String, EmbeddingVector)>, global: EmbeddingVector) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        for (_, e) in &tokens {
            if e.dim() != global.dim() {
                return Err(Error::DimensionMismatch {
                    expected: global.dim(),
                    got: e.dim(),
                });
            }
        }
        Ok(Self { tokens, global })
    }

    pub fn tokens(&self) -> &[(String, EmbeddingVector)] {
        &self.tokens
    }

    pub fn global(&self) -> &EmbeddingVector {
        &self.global
    }

    pub fn surface(&self) -> Vec<String> {
        self.tokens.iter().map(|(s, _)| s.clone()).collect()
    }

    fn embeddings(&self) -> Vec<EmbeddingVector> {
        self.tokens.iter().map(|(_, e)| e.clone()).collect()
    }
}

/// Add-one smoothed inverse document frequencies over a reference corpus:
/// `idf(w) = ln((M + 1) / (df(w) + 1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: HashMap<String, f64>,
    corpus_size: usize,
}

impl IdfTable {
    pub fn weight(&self, token: &str) -> f64 {
        self.weights
            .get(token)
            .copied()
            .unwrap_or_else(|| self.unseen_weight())
    }

    pub fn unseen_weight(&self) -> f64 {
        (self.corpus_size as f64 + 1.0).ln()
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn compute_idf(corpus: &[Vec<String>]) -> Result<IdfTable> {
    if corpus.is_empty() {
        return Err(Error::Empty("idf corpus"));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for caption in corpus {
        let unique: HashSet<&str> = caption.iter().map(String::as_str).collect();
        for tok in unique {
            *df.entry(tok).or_default() += 1;
        }
    }
    let m = corpus.len() as f64;
    let weights = df
        .into_iter()
        .map(|(tok, count)| (tok.to_owned(), ((m + 1.0) / (count as f64 + 1.0)).ln()))
        .collect();
    Ok(IdfTable {
        weights,
        corpus_size: corpus.len(),
    })
}

/// Idf-weighted F1 of greedy token-to-frame matching.
///
/// Precision weights each token's best clamped cosine against any frame by
/// its normalized idf; recall averages each frame's best clamped cosine
/// against any token uniformly.
pub fn video_fine(
    candidate: &TokenSequence,
    frames: &[EmbeddingVector],
    idf: &IdfTable,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Empty("frame sequence"));
    }
    let tokens = candidate.tokens();
    let mut sims = vec![0.0; tokens.len() * frames.len()];
    for (i, (_, te)) in tokens.iter().enumerate() {
        for (j, fe) in frames.iter().enumerate() {
            sims[i * frames.len() + j] = cosine(te, fe)?;
        }
    }
    let mut weights: Vec<f64> = tokens.iter().map(|(s, _)| idf.weight(s)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    } else {
        let uniform = 1.0 / tokens.len() as f64;
        weights.iter_mut().for_each(|w| *w = uniform);
    }

    let nf = frames.len();
    let precision: f64 = (0..tokens.len())
        .map(|i| {
            let best = sims[i * nf..(i + 1) * nf]
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            weights[i] * best.max(0.0)
        })
        .sum();
    let recall: f64 = (0..nf)
        .map(|j| {
            (0..tokens.len())
                .map(|i| sims[i * nf + j])
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0)
        })
        .sum::<f64>()
        / nf as f64;
    Ok(harmonic_mean(precision, recall))
}

fn video_score_unscaled(
    candidate: &TokenSequence,
    frames: &[EmbeddingVector],
    idf: &IdfTable,
) -> Result<f64> {
    let pooled = mean_pool(frames)?;
    let coarse = cosine(candidate.global(), &pooled)?.max(0.0);
    let fine = video_fine(candidate, frames, idf)?;
    Ok((coarse + fine) / 2.0)
}

fn caption_pair_unscaled(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    idf: &IdfTable,
) -> Result<f64> {
    let coarse = cosine(candidate.global(), reference.global())?.max(0.0);
    let fine = video_fine(candidate, &reference.embeddings(), idf)?;
    Ok((coarse + fine) / 2.0)
}

/// Mean of the coarse (global caption vs pooled video) and fine-grained
/// scores, scaled by `video_w`.
pub fn video_score(
    candidate: &TokenSequence,
    frames: &[EmbeddingVector],
    idf: &IdfTable,
    cfg: &ScoreConfig,
) -> Result<f64> {
    Ok(cfg.video_w * video_score_unscaled(candidate, frames, idf)?)
}

/// Mean of the video score and the best caption-to-reference score, where a
/// reference's tokens stand in for frames and its global embedding for the
/// pooled video.
pub fn ref_video_score(
    candidate: &TokenSequence,
    frames: &[EmbeddingVector],
    refs: &[TokenSequence],
    idf: &IdfTable,
    cfg: &ScoreConfig,
) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    let vs = video_score_unscaled(candidate, frames, idf)?;
    let mut best = f64::NEG_INFINITY;
    for r in refs {
        best = best.max(caption_pair_unscaled(candidate, r, idf)?);
    }
    Ok(cfg.video_w * (vs + best) / 2.0)
}

/// Projected embeddings for everything a scorer may look up.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    visual: HashMap<String, EmbeddingVector>,
    text: HashMap<String, EmbeddingVector>,
    frames: HashMap<String, Vec<EmbeddingVector>>,
    tokens: HashMap<String, TokenSequence>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_visual(&mut self, id: impl Into<String>, e: EmbeddingVector) {
        self.visual.insert(id.into(), e);
    }

    pub fn insert_text(&mut self, id: impl Into<String>, e: EmbeddingVector) {
        self.text.insert(id.into(), e);
    }

    pub fn insert_frames(
        &mut self,
        id: impl Into<String>,
        frames: Vec<EmbeddingVector>,
    ) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::Empty("frame sequence"));
        }
        self.frames.insert(id.into(), frames);
        Ok(())
    }

    pub fn insert_tokens(&mut self, id: impl Into<String>, seq: TokenSequence) {
        self.tokens.insert(id.into(), seq);
    }

    pub fn visual(&self, id: &str) -> Result<&EmbeddingVector> {
        self.visual.get(id).ok_or_else(|| dangling(id))
    }

    pub fn text(&self, id: &str) -> Result<&EmbeddingVector> {
        self.text.get(id).ok_or_else(|| dangling(id))
    }

    pub fn frames(&self, id: &str) -> Result<&[EmbeddingVector]> {
        self.frames
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| dangling(id))
    }

    pub fn tokens(&self, id: &str) -> Result<&TokenSequence> {
        self.tokens.get(id).ok_or_else(|| dangling(id))
    }

    /// Fails with every id that has no embedding for `mode`.
    pub fn check_ids<'a>(
        &self,
        mode: Mode,
        media: impl IntoIterator<Item = &'a str>,
        captions: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        let mut missing: BTreeSet<&str> = media
            .into_iter()
            .filter(|id| !self.has(mode, true, id))
            .collect();
        missing.extend(captions.into_iter().filter(|id| !self.has(mode, false, id)));
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::DanglingIds(
                missing.into_iter().map(str::to_owned).collect(),
            ))
        }
    }

    fn has(&self, mode: Mode, media: bool, id: &str) -> bool {
        match (mode, media) {
            (Mode::Image, true) => self.visual.contains_key(id),
            (Mode::Image, false) => self.text.contains_key(id),
            (Mode::Video, true) => self.frames.contains_key(id),
            (Mode::Video, false) => self.tokens.contains_key(id),
        }
    }
}

fn dangling(id: &str) -> Error {
    Error::DanglingIds(vec![id.to_owned()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Image,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Free,
    Ref,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Free => "free",
            Variant::Ref => "ref",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Variant::Free),
            "ref" => Ok(Variant::Ref),
            other => Err(Error::InvalidConfig(format!("unknown variant {other}"))),
        }
    }
}

/// Anything that scores a candidate caption for a media item, optionally
/// against reference captions.
pub trait CaptionScorer {
    fn score(&self, media: &str, candidate: &str, refs: &[String]) -> Result<f64>;

    /// Reference-based scorers are re-run per reference draw.
    fn uses_references(&self) -> bool {
        false
    }
}

impl<F> CaptionScorer for F
where
    F: Fn(&str, &str, &[String]) -> Result<f64>,
{
    fn score(&self, media: &str, candidate: &str, refs: &[String]) -> Result<f64> {
        self(media, candidate, refs)
    }
}

/// Marks a closure scorer as reference-based.
pub struct WithReferences<F>(pub F);

impl<F> CaptionScorer for WithReferences<F>
where
    F: Fn(&str, &str, &[String]) -> Result<f64>,
{
    fn score(&self, media: &str, candidate: &str, refs: &[String]) -> Result<f64> {
        (self.0)(media, candidate, refs)
    }

    fn uses_references(&self) -> bool {
        true
    }
}

/// Image-caption scorer over a projected store.
pub struct ImageScorer<'a> {
    pub store: &'a EmbeddingStore,
    pub cfg: ScoreConfig,
    pub variant: Variant,
}

impl CaptionScorer for ImageScorer<'_> {
    fn score(&self, media: &str, candidate: &str, refs: &[String]) -> Result<f64> {
        let t = self.store.text(candidate)?;
        let v = self.store.visual(media)?;
        match self.variant {
            Variant::Free => pac_score(t, v, &self.cfg),
            Variant::Ref => {
                let r = refs
                    .iter()
                    .map(|id| self.store.text(id).cloned())
                    .collect::<Result<Vec<_>>>()?;
                ref_pac_score(t, v, &r, &self.cfg)
            }
        }
    }

    fn uses_references(&self) -> bool {
        self.variant == Variant::Ref
    }
}

/// Video-caption scorer over a projected store.
pub struct VideoScorer<'a> {
    pub store: &'a EmbeddingStore,
    pub cfg: ScoreConfig,
    pub variant: Variant,
    pub idf: IdfTable,
}

impl CaptionScorer for VideoScorer<'_> {
    fn score(&self, media: &str, candidate: &str, refs: &[String]) -> Result<f64> {
        let c = self.store.tokens(candidate)?;
        let frames = self.store.frames(media)?;
        match self.variant {
            Variant::Free => video_score(c, frames, &self.idf, &self.cfg),
            Variant::Ref => {
                let r = refs
                    .iter()
                    .map(|id| {
                        self.store
                            .tokens(id)
                            .cloned()
                            .map_err(|_| Error::MissingTokens(id.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ref_video_score(c, frames, &r, &self.idf, &self.cfg)
            }
        }
    }

    fn uses_references(&self) -> bool {
        self.variant == Variant::Ref
    }
}

/// One line of a score manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub candidate: String,
    pub media: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub mode: Mode,
    pub variant: Variant,
    /// Sorted by record id.
    pub items: Vec<ScoredItem>,
    /// `None` for an empty report.
    pub mean: Option<f64>,
    /// Population standard deviation; `None` for an empty report.
    pub std: Option<f64>,
}

/// Idf table for a video manifest: built from the reference captions when
/// any record has references, otherwise from the candidates themselves.
pub fn manifest_idf(records: &[ScoreRecord], store: &EmbeddingStore) -> Result<IdfTable> {
    let ref_ids: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.refs.iter().map(String::as_str))
        .collect();
    let ids: Vec<&str> = if ref_ids.is_empty() {
        records.iter().map(|r| r.candidate.as_str()).collect()
    } else {
        ref_ids.into_iter().collect()
    };
    let corpus = ids
        .into_iter()
        .map(|id| store.tokens(id).map(TokenSequence::surface))
        .collect::<Result<Vec<_>>>()?;
    compute_idf(&corpus)
}

/// Scores every record of a manifest. All unresolved ids are collected into
/// one error before any score is computed.
pub fn batch_score(
    records: &[ScoreRecord],
    store: &EmbeddingStore,
    mode: Mode,
    variant: Variant,
    cfg: &ScoreConfig,
) -> Result<ScoreReport> {
    cfg.validate()?;
    validate_records(records, store, mode, variant)?;
    if records.is_empty() {
        return Ok(ScoreReport {
            mode,
            variant,
            items: Vec::new(),
            mean: None,
            std: None,
        });
    }
    let mut items = match mode {
        Mode::Image => {
            let scorer = ImageScorer {
                store,
                cfg: *cfg,
                variant,
            };
            score_all(records, &scorer)?
        }
        Mode::Video => {
            let scorer = VideoScorer {
                store,
                cfg: *cfg,
                variant,
                idf: manifest_idf(records, store)?,
            };
            score_all(records, &scorer)?
        }
    };
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let (mean, std) = mean_std(items.iter().map(|i| i.score));
    Ok(ScoreReport {
        mode,
        variant,
        items,
        mean,
        std,
    })
}

fn score_all(records: &[ScoreRecord], scorer: &dyn CaptionScorer) -> Result<Vec<ScoredItem>> {
    records
        .iter()
        .map(|r| {
            Ok(ScoredItem {
                id: r.id.clone(),
                score: scorer.score(&r.media, &r.candidate, &r.refs)?,
            })
        })
        .collect()
}

fn validate_records(
    records: &[ScoreRecord],
    store: &EmbeddingStore,
    mode: Mode,
    variant: Variant,
) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "duplicate record id {}",
                r.id
            )));
        }
        if variant == Variant::Ref && r.refs.is_empty() {
            return Err(Error::InsufficientReferences {
                media: r.media.clone(),
                available: 0,
                required: 1,
            });
        }
    }
    let mut missing = BTreeSet::new();
    for r in records {
        if !store.has(mode, true, &r.media) {
            missing.insert(r.media.clone());
        }
        if !store.has(mode, false, &r.candidate) {
            missing.insert(r.candidate.clone());
        }
        if variant == Variant::Ref {
            for id in &r.refs {
                if !store.has(mode, false, id) {
                    missing.insert(id.clone());
                }
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::DanglingIds(missing.into_iter().collect()))
    }
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (Option<f64>, Option<f64>) {
    let n = values.clone().count();
    if n == 0 {
        return (None, None);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (Some(mean), Some(var.sqrt()))
}
