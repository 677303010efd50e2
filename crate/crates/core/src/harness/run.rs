use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LmSpec, Method, RunConfig, Thresholds};
use super::corpus::{load_corpus, CorpusRecord};
use super::HarnessError;
use crate::decode::{baseline_decode, coba_decode, lookahead_decode, DecodeResult, GroundingScorer};
use crate::detect::span_profile;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_profiles, csv_err, fmt_float, grounding_precision, hallucination_rate, rouge_l,
    write_metrics_csv, write_profile_csv, write_summary_csv, MetricReport, MetricRow, ProfileStat,
};
use crate::lm::{LmProvider, RemoteOptions};

/// A (document, method) pair that failed to decode or score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub doc_id: String,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct CorpusResults {
    pub report: MetricReport,
    pub errors: Vec<ErrorRow>,
    /// Decode results in row order, kept only when traces are requested.
    pub traces: Vec<(String, String, DecodeResult)>,
}

/// Generator stream for a document: FNV-1a of its id, so results do not
/// depend on corpus order or worker count.
pub fn doc_stream(doc_id: &str) -> u64 {
    doc_id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn decode(lm: &dyn LmProvider, context: &crate::types::TokenSeq, method: &Method, cfg: &RunConfig, stream: u64) -> Result<DecodeResult> {
    let mut dc = method.decode_config(&cfg.decode, &cfg.thresholds, cfg.alpha);
    dc.stream = stream;
    if method.lookahead {
        let scorer = GroundingScorer { phi: cfg.thresholds.phi };
        lookahead_decode(lm, context, &dc, &cfg.lookahead, &scorer)
    } else if dc.coba.is_some() {
        coba_decode(lm, context, &dc)
    } else {
        baseline_decode(lm, context, &dc)
    }
}

/// Decodes one record with one method and scores the output.
pub fn evaluate_record(
    lm: &dyn LmProvider,
    record: &CorpusRecord,
    method: &Method,
    cfg: &RunConfig,
) -> Result<(MetricRow, DecodeResult)> {
    let vocab = lm.vocabulary();
    let context = record.context_ids(vocab, cfg.prepend_reference)?;
    let reference = record.reference_ids(vocab)?;
    let result = decode(lm, &context, method, cfg, doc_stream(&record.doc_id))?;
    let out = &result.output;
    let rouge = match reference {
        Some(r) if !r.is_empty() => Some(if out.is_empty() { 0.0 } else { rouge_l(out, &r)?.f1 }),
        _ => None,
    };
    let grounding = if context.is_empty() {
        None
    } else {
        grounding_precision(out, &context, lm.embeddings(), cfg.thresholds.phi, vocab).ok()
    };
    let row = MetricRow {
        doc_id: record.doc_id.clone(),
        method: method.to_string(),
        rouge_l_f1: rouge,
        grounding_precision: grounding,
        hallucination_rate: Some(hallucination_rate(out, &context, cfg.hallucination_n)?),
        length_tokens: out.len(),
        fallback: result.fallback,
        steps_used: result.steps_used,
    };
    Ok((row, result))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::contract(e.to_string()))?;
    Ok(pool.install(f))
}

/// Every (record, method) pair, in corpus order then method order.
pub fn evaluate_corpus(lm: &dyn LmProvider, records: &[CorpusRecord], cfg: &RunConfig) -> Result<CorpusResults> {
    cfg.validate()?;
    let pairs: Vec<(&CorpusRecord, &Method)> =
        records.iter().flat_map(|r| cfg.methods.iter().map(move |m| (r, m))).collect();
    let outcomes: Vec<Result<(MetricRow, DecodeResult)>> = with_pool(cfg.jobs, || {
        pairs
            .par_iter()
            .map(|(r, m)| evaluate_record(lm, r, m, cfg))
            .collect()
    })?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut traces = Vec::new();
    for ((record, method), outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok((row, result)) => {
                if cfg.write_traces {
                    traces.push((row.doc_id.clone(), row.method.clone(), result));
                }
                rows.push(row);
            }
            Err(e) => errors.push(ErrorRow {
                doc_id: record.doc_id.clone(),
                method: method.to_string(),
                error: e.to_string(),
            }),
        }
    }
    Ok(CorpusResults {
        report: MetricReport::new(rows),
        errors,
        traces,
    })
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, HarnessError> {
    let records = load_corpus(path).map_err(HarnessError::input)?;
    if records.is_empty() {
        return Err(HarnessError::input(Error::domain(format!("corpus {} is empty", path.display()))));
    }
    Ok(records)
}

pub fn open_lm(spec: &LmSpec, remote: &RemoteOptions) -> Result<std::sync::Arc<dyn LmProvider>, HarnessError> {
    spec.open(remote).map_err(|e| match e {
        Error::Lm(_) => HarnessError::lm(e),
        other => HarnessError::input(other),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_errors_csv(path: &Path, errors: &[ErrorRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["doc_id", "method", "error"]).map_err(csv_err)?;
    for e in errors {
        w.write_record([&e.doc_id, &e.method, &e.error]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv`, `summary.csv`, `errors.csv` and optional traces under `out`.
pub fn write_results(out: &Path, results: &CorpusResults) -> Result<()> {
    fs::create_dir_all(out)?;
    write_metrics_csv(create(&out.join("metrics.csv"))?, &results.report.rows)?;
    write_summary_csv(create(&out.join("summary.csv"))?, &results.report.summaries)?;
    write_errors_csv(&out.join("errors.csv"), &results.errors)?;
    if !results.traces.is_empty() {
        let dir = out.join("traces");
        fs::create_dir_all(&dir)?;
        for (doc, method, result) in &results.traces {
            let name = format!("{}__{}.json", sanitize(doc), method.replace('+', "_"));
            serde_json::to_writer_pretty(create(&dir.join(name))?, result)?;
        }
    }
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub results: CorpusResults,
    pub exit_code: i32,
}

/// `coba run`: decode every record with every method and write the reports.
pub fn run_corpus(corpus: &Path, lm_spec: &LmSpec, remote: &RemoteOptions, cfg: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let records = read_corpus(corpus)?;
    cfg.validate().map_err(HarnessError::input)?;
    let lm = open_lm(lm_spec, remote)?;
    let results = evaluate_corpus(lm.as_ref(), &records, cfg).map_err(HarnessError::failed)?;
    write_results(&cfg.out_dir, &results).map_err(HarnessError::failed)?;
    let exit_code = if results.report.rows.is_empty() { super::EXIT_FAILED } else { super::EXIT_OK };
    Ok(RunOutcome { results, exit_code })
}

/// Aggregated span profiles over every annotated span of the corpus.
pub fn profile_corpus(lm: &dyn LmProvider, records: &[CorpusRecord], window: usize, cfg: &RunConfig) -> Result<Vec<ProfileStat>> {
    let vocab = lm.vocabulary();
    let mut inputs = Vec::with_capacity(records.len());
    for r in records {
        let context = r.context_ids(vocab, cfg.prepend_reference)?;
        let (summary, spans) = r.annotated_summary(vocab)?;
        inputs.push((context, summary, spans));
    }
    let profiles: Vec<Result<Vec<_>>> = with_pool(cfg.jobs, || {
        inputs
            .par_iter()
            .flat_map_iter(|(ctx, summary, spans)| {
                spans.iter().map(move |&s| span_profile(ctx, summary, s, lm, window))
            })
            .collect()
    })?;
    let profiles: Vec<_> = profiles.into_iter().collect::<Result<_>>()?;
    aggregate_profiles(&profiles)
}

/// `coba profile`: writes `profile.csv`.
pub fn run_profile(corpus: &Path, lm_spec: &LmSpec, remote: &RemoteOptions, cfg: &RunConfig, window: usize) -> Result<Vec<ProfileStat>, HarnessError> {
    let records = read_corpus(corpus)?;
    if let Some(bad) = records.iter().find(|r| r.annotations.is_none() || r.summary.is_none()) {
        return Err(HarnessError::input(Error::contract(format!(
            "record {} lacks a summary or annotations",
            bad.doc_id
        ))));
    }
    let lm = open_lm(lm_spec, remote)?;
    let stats = profile_corpus(lm.as_ref(), &records, window, cfg).map_err(|e| match e {
        Error::Contract(_) | Error::Parse(_) => HarnessError::input(e),
        other => HarnessError::failed(other),
    })?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::failed(e.into()))?;
    create(&cfg.out_dir.join("profile.csv"))
        .and_then(|w| write_profile_csv(w, &stats))
        .map_err(HarnessError::failed)?;
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Delta,
    Phi,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepParam::Delta),
            "phi" => Ok(SweepParam::Phi),
            other => Err(Error::parse(format!("cannot sweep {other:?}; use delta or phi"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub method: String,
    pub docs: usize,
    pub hallucination_rate: Option<f64>,
    pub grounding_precision: Option<f64>,
    pub rouge_l_f1: Option<f64>,
    pub fallback_rate: f64,
    pub mean_steps: f64,
}

/// Per-method corpus means at each threshold value, in the given value order.
pub fn sweep_corpus(
    lm: &dyn LmProvider,
    records: &[CorpusRecord],
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &value in values {
        let mut c = cfg.clone();
        c.thresholds = match param {
            SweepParam::Delta => Thresholds { delta: value, ..cfg.thresholds },
            SweepParam::Phi => Thresholds { phi: value, ..cfg.thresholds },
        };
        c.write_traces = false;
        let results = evaluate_corpus(lm, records, &c)?;
        rows.extend(results.report.summaries.iter().map(|s| SweepRow {
            param,
            value,
            method: s.method.clone(),
            docs: s.docs,
            hallucination_rate: s.hallucination_rate,
            grounding_precision: s.grounding_precision,
            rouge_l_f1: s.rouge_l_f1,
            fallback_rate: s.fallback_rate,
            mean_steps: s.mean_steps,
        }));
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "param",
        "value",
        "method",
        "docs",
        "hallucination_rate",
        "grounding_precision",
        "rouge_l_f1",
        "fallback_rate",
        "mean_steps",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let param = match r.param {
            SweepParam::Delta => "delta",
            SweepParam::Phi => "phi",
        };
        w.write_record([
            param.to_string(),
            fmt_float(Some(r.value)),
            r.method.clone(),
            r.docs.to_string(),
            fmt_float(r.hallucination_rate),
            fmt_float(r.grounding_precision),
            fmt_float(r.rouge_l_f1),
            fmt_float(Some(r.fallback_rate)),
            fmt_float(Some(r.mean_steps)),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `coba sweep`: writes `sweep.csv`.
pub fn run_sweep(
    corpus: &Path,
    lm_spec: &LmSpec,
    remote: &RemoteOptions,
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>, HarnessError> {
    let records = read_corpus(corpus)?;
    if values.is_empty() {
        return Err(HarnessError::input(Error::contract("sweep needs at least one value")));
    }
    let lm = open_lm(lm_spec, remote)?;
    let rows = sweep_corpus(lm.as_ref(), &records, cfg, param, values).map_err(HarnessError::failed)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::failed(e.into()))?;
    write_sweep_csv(&cfg.out_dir.join("sweep.csv"), &rows).map_err(HarnessError::failed)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn stream_hash_is_fnv1a() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(doc_stream(""), 0xcbf29ce484222325);
        assert_eq!(doc_stream("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(doc_stream("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn corpus_rows_in_order() {
        let lm = fixtures::fig1_table_lm();
        let records: Vec<CorpusRecord> = (0..4)
            .map(|i| CorpusRecord::from_ids(format!("d{i}"), vec![2, 3, 6, 7]))
            .collect();
        let mut cfg = RunConfig::new(super::super::parse_methods("greedy,coba,nucleus+coba").unwrap(), "unused");
        cfg.decode.max_len = 10;
        cfg.jobs = 3;
        let res = evaluate_corpus(&lm, &records, &cfg).unwrap();
        assert_eq!(res.report.rows.len(), 12);
        assert!(res.errors.is_empty());
        let order: Vec<(String, String)> =
            res.report.rows.iter().map(|r| (r.doc_id.clone(), r.method.clone())).collect();
        assert_eq!(order[0], ("d0".to_string(), "greedy".to_string()));
        assert_eq!(order[5], ("d1".to_string(), "nucleus+coba".to_string()));
        let coba = &res.report.rows[1];
        assert!(!coba.fallback);
        assert_eq!(coba.length_tokens, 5);
    }

    #[test]
    fn bad_records_become_error_rows() {
        let lm = fixtures::fig1_table_lm();
        let records = vec![CorpusRecord::from_ids("ok", vec![2]), CorpusRecord::from_ids("bad", vec![99])];
        let cfg = RunConfig::new(vec![Method::GREEDY], "unused");
        let res = evaluate_corpus(&lm, &records, &cfg).unwrap();
        assert_eq!(res.report.rows.len(), 1);
        assert_eq!(res.errors.len(), 1);
        assert_eq!(res.errors[0].doc_id, "bad");
    }
}
