//! Line-delimited JSON manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocols::{Category, PairwisePair, Winner};
use crate::rng::{SeedStreams, TIE_BREAK};

/// Parses one JSON object per non-blank line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_jsonl(&text, path)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Human judgment for one scored record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub id: String,
    pub human_score: f64,
}

/// One human-rated media/caption pair used to rank grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedPair {
    pub media: String,
    pub candidate: String,
    pub human_score: f64,
}

/// A pairwise manifest line: either an explicit `winner` or raw vote counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseRecord {
    pub id: String,
    pub media: String,
    pub a: String,
    pub b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<Winner>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes_a: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes_b: Option<u32>,
    #[serde(default = "unlabeled")]
    pub category: Category,
    #[serde(default)]
    pub refs: Vec<String>,
}

fn unlabeled() -> Category {
    Category::Unlabeled
}

/// Resolves winners; vote ties are broken on the tie-break stream in file
/// order.
pub fn resolve_pairwise(records: Vec<PairwiseRecord>, seed: u64) -> Result<Vec<PairwisePair>> {
    let mut rng = SeedStreams::new(seed).stream(TIE_BREAK);
    records
        .into_iter()
        .map(|r| {
            let winner = match (r.winner, r.votes_a, r.votes_b) {
                (Some(w), None, None) => w,
                (None, Some(a), Some(b)) => Winner::from_votes(a, b, &mut rng),
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "pair {} needs either winner or both vote counts",
                        r.id
                    )))
                }
            };
            Ok(PairwisePair {
                id: r.id,
                media: r.media,
                a: r.a,
                b: r.b,
                winner,
                category: r.category,
                refs: r.refs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::AugmentedTuple;

    #[test]
    fn parses_with_line_numbers() {
        let p = Path::new("m.jsonl");
        let ok: Vec<AugmentedTuple> = parse_jsonl(
            "{\"v\":\"a\",\"t\":\"b\",\"v_gen\":\"c\",\"t_gen\":\"d\"}\n\n",
            p,
        )
        .unwrap();
        assert_eq!(ok, vec![AugmentedTuple::new("a", "b", "c", "d")]);
        let err =
            parse_jsonl::<JudgmentRecord>("{\"id\":\"x\",\"human_score\":1}\n{\"id\":1}\n", p)
                .unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
    }

    #[test]
    fn pairwise_votes_and_winner() {
        let text = concat!(
            "{\"id\":\"1\",\"media\":\"m\",\"a\":\"x\",\"b\":\"y\",\"winner\":\"b\",\"category\":\"HC\"}\n",
            "{\"id\":\"2\",\"media\":\"m\",\"a\":\"x\",\"b\":\"y\",\"votes_a\":3,\"votes_b\":1}\n",
        );
        let recs: Vec<PairwiseRecord> = parse_jsonl(text, Path::new("p")).unwrap();
        let pairs = resolve_pairwise(recs, 0).unwrap();
        assert_eq!(pairs[0].winner, Winner::B);
        assert_eq!(pairs[0].category, Category::HC);
        assert_eq!(pairs[1].winner, Winner::A);
        assert_eq!(pairs[1].category, Category::Unlabeled);
    }

    #[test]
    fn pairwise_tie_break_is_seeded() {
        let recs: Vec<PairwiseRecord> = (0..32)
            .map(|i| PairwiseRecord {
                id: i.to_string(),
                media: "m".into(),
                a: "x".into(),
                b: "y".into(),
                winner: None,
                votes_a: Some(2),
                votes_b: Some(2),
                category: Category::HM,
                refs: vec![],
            })
            .collect();
        let a = resolve_pairwise(recs.clone(), 7).unwrap();
        let b = resolve_pairwise(recs.clone(), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|p| p.winner == Winner::A));
        assert!(a.iter().any(|p| p.winner == Winner::B));
    }

    #[test]
    fn pairwise_needs_a_winner() {
        let r = PairwiseRecord {
            id: "1".into(),
            media: "m".into(),
            a: "x".into(),
            b: "y".into(),
            winner: None,
            votes_a: Some(1),
            votes_b: None,
            category: Category::HC,
            refs: vec![],
        };
        assert!(resolve_pairwise(vec![r], 0).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let recs = vec![
            JudgmentRecord {
                id: "a".into(),
                human_score: 0.5,
            },
            JudgmentRecord {
                id: "b".into(),
                human_score: 3.0,
            },
        ];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl::<JudgmentRecord>(&path).unwrap(), recs);
    }
}
