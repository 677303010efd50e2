//! Summary metrics and span-profile aggregation.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detect::{ContextIndex, ProfileRow};
use crate::error::{Error, Result};
use crate::types::{EmbeddingTable, TokenId, TokenSeq, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        let mut diag = 0;
        for (j, &y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L over token ids.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> Result<RougeL> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::domain("ROUGE-L needs non-empty candidate and reference"));
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(RougeL { precision, recall, f1 })
}

/// Fraction of non-special summary tokens whose nearest context token is within `phi`.
pub fn grounding_precision(
    summary: &TokenSeq,
    context: &TokenSeq,
    emb: &EmbeddingTable,
    phi: f64,
    vocab: &Vocabulary,
) -> Result<f64> {
    let content: Vec<TokenId> = summary.iter().filter(|&t| !vocab.is_special(t)).collect();
    if content.is_empty() {
        return Err(Error::domain("summary has no non-special tokens"));
    }
    let index = ContextIndex::new(context, emb)?;
    let mut memo: BTreeMap<TokenId, bool> = BTreeMap::new();
    let grounded = content
        .iter()
        .filter(|&&t| *memo.entry(t).or_insert_with(|| index.min_distance(t) <= phi))
        .count();
    Ok(grounded as f64 / content.len() as f64)
}

/// Fraction of summary positions whose incoming `n`-gram (clipped at the
/// start) never occurs contiguously in the context. 0 for an empty summary.
pub fn hallucination_rate(summary: &TokenSeq, context: &TokenSeq, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::contract("n-gram order must be >= 1"));
    }
    if summary.is_empty() {
        return Ok(0.0);
    }
    let mut attested: HashSet<&[TokenId]> = HashSet::new();
    for m in 1..=n {
        attested.extend(context.windows(m));
    }
    let missing = (0..summary.len())
        .filter(|&i| !attested.contains(&summary[(i + 1).saturating_sub(n)..=i]))
        .count();
    Ok(missing as f64 / summary.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStat {
    pub offset: i64,
    pub mean_prob: f64,
    pub std_prob: f64,
    pub mean_dist: f64,
    pub std_dist: f64,
    pub n: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-offset mean and population standard deviation, in offset order.
pub fn aggregate_profiles(profiles: &[Vec<ProfileRow>]) -> Result<Vec<ProfileStat>> {
    let mut by_offset: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in profiles.iter().flatten() {
        let slot = by_offset.entry(row.offset).or_default();
        slot.0.push(row.prob);
        slot.1.push(row.min_dist);
    }
    if by_offset.is_empty() {
        return Err(Error::domain("no profile rows to aggregate"));
    }
    Ok(by_offset
        .into_iter()
        .map(|(offset, (probs, dists))| {
            let (mean_prob, std_prob) = mean_std(&probs);
            let (mean_dist, std_dist) = mean_std(&dists);
            ProfileStat {
                offset,
                mean_prob,
                std_prob,
                mean_dist,
                std_dist,
                n: probs.len(),
            }
        })
        .collect())
}

/// One (document, method) row of `metrics.csv`. Undefined metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub doc_id: String,
    pub method: String,
    pub rouge_l_f1: Option<f64>,
    pub grounding_precision: Option<f64>,
    pub hallucination_rate: Option<f64>,
    pub length_tokens: usize,
    pub fallback: bool,
    pub steps_used: usize,
}

/// Corpus means for one method over the rows where each metric is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub docs: usize,
    pub rouge_l_f1: Option<f64>,
    pub grounding_precision: Option<f64>,
    pub hallucination_rate: Option<f64>,
    pub mean_length: f64,
    pub fallback_rate: f64,
    pub mean_steps: f64,
}

/// Per-document rows plus per-method means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub summaries: Vec<MetricSummary>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = values.flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl MetricReport {
    /// Summaries are listed in first-appearance order of the methods.
    pub fn new(rows: Vec<MetricRow>) -> Self {
        let mut methods: Vec<&str> = Vec::new();
        for r in &rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let summaries = methods
            .iter()
            .map(|&m| {
                let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.method == m).collect();
                let n = mine.len() as f64;
                MetricSummary {
                    method: m.to_string(),
                    docs: mine.len(),
                    rouge_l_f1: mean_of(mine.iter().map(|r| r.rouge_l_f1)),
                    grounding_precision: mean_of(mine.iter().map(|r| r.grounding_precision)),
                    hallucination_rate: mean_of(mine.iter().map(|r| r.hallucination_rate)),
                    mean_length: mine.iter().map(|r| r.length_tokens as f64).sum::<f64>() / n,
                    fallback_rate: mine.iter().filter(|r| r.fallback).count() as f64 / n,
                    mean_steps: mine.iter().map(|r| r.steps_used as f64).sum::<f64>() / n,
                }
            })
            .collect();
        Self { rows, summaries }
    }

    pub fn summary(&self, method: &str) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Fixed six-decimal rendering used by every CSV; `None` is an empty field.
pub fn fmt_float(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub const METRICS_HEADER: [&str; 8] = [
    "doc_id",
    "method",
    "rouge_l_f1",
    "grounding_precision",
    "hallucination_rate",
    "length_tokens",
    "fallback",
    "steps_used",
];

pub const PROFILE_HEADER: [&str; 6] = ["offset", "mean_prob", "std_prob", "mean_dist", "std_dist", "n"];

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.doc_id.clone(),
            r.method.clone(),
            fmt_float(r.rouge_l_f1),
            fmt_float(r.grounding_precision),
            fmt_float(r.hallucination_rate),
            r.length_tokens.to_string(),
            r.fallback.to_string(),
            r.steps_used.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, summaries: &[MetricSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "docs",
        "rouge_l_f1",
        "grounding_precision",
        "hallucination_rate",
        "mean_length",
        "fallback_rate",
        "mean_steps",
    ])
    .map_err(csv_err)?;
    for s in summaries {
        w.write_record([
            s.method.clone(),
            s.docs.to_string(),
            fmt_float(s.rouge_l_f1),
            fmt_float(s.grounding_precision),
            fmt_float(s.hallucination_rate),
            fmt_float(Some(s.mean_length)),
            fmt_float(Some(s.fallback_rate)),
            fmt_float(Some(s.mean_steps)),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_profile_csv<W: Write>(out: W, stats: &[ProfileStat]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROFILE_HEADER).map_err(csv_err)?;
    for s in stats {
        w.write_record([
            s.offset.to_string(),
            fmt_float(Some(s.mean_prob)),
            fmt_float(Some(s.std_prob)),
            fmt_float(Some(s.mean_dist)),
            fmt_float(Some(s.std_dist)),
            s.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(format!("{other:?}")),
    }
}
