//! Score report files.
//!
//! A report is JSONL: a `header` line, one `record` line per scored item in
//! id order, and a `summary` line.
//!
//! ```text
//! {"type":"header","mode":"image","variant":"free","w":2.0,"seed":0}
//! {"type":"record","id":"r1","score":0.61}
//! {"type":"summary","count":1,"mean":0.61,"std":0.0}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::{parse_jsonl, JudgmentRecord};
use crate::scoring::{Mode, ScoreReport, ScoredItem, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ReportLine {
    Header {
        mode: Mode,
        variant: Variant,
        w: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Record {
        id: String,
        score: f64,
    },
    Summary {
        count: usize,
        mean: Option<f64>,
        std: Option<f64>,
    },
}

pub fn report_lines(report: &ScoreReport, w: f64, seed: Option<u64>) -> Vec<ReportLine> {
    let mut lines = Vec::with_capacity(report.items.len() + 2);
    lines.push(ReportLine::Header {
        mode: report.mode,
        variant: report.variant,
        w,
        seed,
    });
    lines.extend(report.items.iter().map(|i| ReportLine::Record {
        id: i.id.clone(),
        score: i.score,
    }));
    lines.push(ReportLine::Summary {
        count: report.items.len(),
        mean: report.mean,
        std: report.std,
    });
    lines
}

pub fn render_report(report: &ScoreReport, w: f64, seed: Option<u64>) -> String {
    let mut out = String::new();
    for line in report_lines(report, w, seed) {
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&line).expect("report serializes")
        );
    }
    out
}

/// Scored items from a report file. Bare `{"id", "score"}` lines are accepted
/// too; header and summary lines are skipped.
pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<ScoredItem>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Line {
        Tagged(ReportLine),
        Bare(ScoredItem),
    }
    let lines: Vec<Line> = parse_jsonl(text, path)?;
    Ok(lines
        .into_iter()
        .filter_map(|l| match l {
            Line::Tagged(ReportLine::Record { id, score }) => Some(ScoredItem { id, score }),
            Line::Bare(item) => Some(item),
            Line::Tagged(_) => None,
        })
        .collect())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredItem>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text, path)
}

/// Pairs metric scores with human judgments by id, in id order. Every id
/// must appear exactly once on both sides.
pub fn join_scores(
    scores: &[ScoredItem],
    judgments: &[JudgmentRecord],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut metric = BTreeMap::new();
    for s in scores {
        if metric.insert(s.id.as_str(), s.score).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate score id {}", s.id)));
        }
    }
    let mut human = BTreeMap::new();
    for j in judgments {
        if human.insert(j.id.as_str(), j.human_score).is_some() {
            return Err(Error::InvalidConfig(format!(
                "duplicate judgment id {}",
                j.id
            )));
        }
    }
    let a: BTreeSet<&str> = metric.keys().copied().collect();
    let b: BTreeSet<&str> = human.keys().copied().collect();
    let missing: Vec<String> = a.symmetric_difference(&b).map(|s| s.to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::DanglingIds(missing));
    }
    Ok((
        metric.into_values().collect(),
        human.into_values().collect(),
    ))
}
