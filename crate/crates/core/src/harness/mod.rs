//! Corpus runs, span profiles, threshold sweeps and fixture generation
//! behind the `coba` command line.

mod config;
mod corpus;
mod run;
mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

pub use config::{parse_methods, Detectors, LmSpec, Method, RunConfig, Thresholds, LM_URL_ENV};
pub use corpus::{load_corpus, write_corpus, CorpusRecord, TextOrIds};
pub use run::{
    doc_stream, evaluate_corpus, evaluate_record, open_lm, profile_corpus, run_corpus, run_profile,
    run_sweep, sweep_corpus, write_errors_csv, write_results, write_sweep_csv, CorpusResults,
    ErrorRow, RunOutcome, SweepParam, SweepRow,
};
pub use synth::{profile_corpus as synthetic_profile_corpus, synthetic_corpus, ProfileCorpusSpec, SyntheticCorpusSpec};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::lm::NGramSpec;

pub const EXIT_OK: i32 = 0;
/// No row succeeded, or output could not be written.
pub const EXIT_FAILED: i32 = 1;
/// Unreadable or empty corpus, missing annotations, bad configuration.
pub const EXIT_INPUT: i32 = 2;
/// The language model could not be reached.
pub const EXIT_LM: i32 = 3;

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct HarnessError {
    pub code: i32,
    pub error: Error,
}

impl HarnessError {
    pub fn input(error: Error) -> Self {
        Self { code: EXIT_INPUT, error }
    }

    pub fn lm(error: Error) -> Self {
        Self { code: EXIT_LM, error }
    }

    pub fn failed(error: Error) -> Self {
        Self { code: EXIT_FAILED, error }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for HarnessError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    /// N-gram documents for `run` and `sweep`.
    Synthetic,
    /// Annotated spans for `profile`.
    Profile,
    /// The "I live in / with" table and a one-record corpus.
    Fig1,
    /// The same table with a three-document corpus.
    Table3,
}

impl std::str::FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(FixtureKind::Synthetic),
            "profile" => Ok(FixtureKind::Profile),
            "fig1" => Ok(FixtureKind::Fig1),
            "table3" => Ok(FixtureKind::Table3),
            other => Err(Error::parse(format!(
                "unknown fixture kind {other:?} (synthetic, profile, fig1, table3)"
            ))),
        }
    }
}

/// Files written by [`fixture_gen`]; `lm_arg` is ready for `--lm`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureFiles {
    pub corpus: PathBuf,
    pub lm_arg: String,
}

/// Writes `corpus.jsonl` plus the model file (`lm.json` or `table.json`) into `out`.
///
/// `count` overrides the number of documents or spans; `seed` the corpus seed.
pub fn fixture_gen(kind: FixtureKind, out: &Path, count: Option<usize>, seed: Option<u64>) -> Result<FixtureFiles> {
    fs::create_dir_all(out)?;
    let corpus = out.join("corpus.jsonl");
    let lm_spec = NGramSpec::default();
    let ngram_file = |spec: &NGramSpec| -> Result<String> {
        let path = out.join("lm.json");
        fs::write(&path, serde_json::to_string_pretty(spec)?)?;
        Ok(format!("ngram:{}", path.display()))
    };
    let table_file = || -> Result<String> {
        let path = out.join("table.json");
        fs::write(&path, serde_json::to_string_pretty(&fixtures::fig1_table_lm().to_file())?)?;
        Ok(format!("table:{}", path.display()))
    };
    let lm_arg = match kind {
        FixtureKind::Synthetic => {
            let mut spec = SyntheticCorpusSpec::default();
            spec.docs = count.unwrap_or(spec.docs);
            spec.seed = seed.unwrap_or(spec.seed);
            write_corpus(&corpus, &synthetic_corpus(&spec, &lm_spec)?)?;
            ngram_file(&lm_spec)?
        }
        FixtureKind::Profile => {
            let mut spec = ProfileCorpusSpec::default();
            spec.spans = count.unwrap_or(spec.spans);
            spec.seed = seed.unwrap_or(spec.seed);
            write_corpus(&corpus, &synthetic_profile_corpus(&spec, &lm_spec)?)?;
            ngram_file(&lm_spec)?
        }
        FixtureKind::Fig1 | FixtureKind::Table3 => {
            let docs = table_corpus(if kind == FixtureKind::Fig1 { 1 } else { 3 });
            write_corpus(&corpus, &docs)?;
            table_file()?
        }
    };
    Ok(FixtureFiles { corpus, lm_arg })
}

fn table_corpus(n: usize) -> Vec<CorpusRecord> {
    const DOCS: [(&str, &str, &str); 3] = [
        ("walk", "I live with my dog and we walk daily", "I live with my dog"),
        ("move", "I live in London now but my dog stays", "I live in London"),
        ("city", "Paris Rome Tokyo I live with my dog", "I live with my dog"),
    ];
    DOCS.iter()
        .take(n)
        .map(|&(id, context, reference)| CorpusRecord {
            doc_id: id.to_string(),
            context: TextOrIds::Text(keep_known(context)),
            reference: Some(TextOrIds::Text(reference.to_string())),
            summary: None,
            annotations: None,
            prepend_reference: false,
        })
        .collect()
}

/// Drops words outside the table vocabulary so the text fixtures tokenize.
fn keep_known(text: &str) -> String {
    text.split_whitespace()
        .filter(|w| fixtures::Fig1Words::WORDS.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_kinds_parse() {
        for k in ["synthetic", "profile", "fig1", "table3"] {
            assert!(k.parse::<FixtureKind>().is_ok());
        }
        assert!("x".parse::<FixtureKind>().is_err());
    }

    #[test]
    fn table3_fixture_runs_clean() {
        let dir = tempfile::tempdir().unwrap();
        let files = fixture_gen(FixtureKind::Table3, dir.path(), None, None).unwrap();
        let spec = LmSpec::parse(&files.lm_arg).unwrap();
        let mut cfg = RunConfig::new(parse_methods("greedy,coba").unwrap(), dir.path().join("out"));
        cfg.decode.max_len = 20;
        let outcome = run_corpus(&files.corpus, &spec, &Default::default(), &cfg).unwrap();
        assert_eq!(outcome.exit_code, EXIT_OK);
        let rows = &outcome.results.report.rows;
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().filter(|r| r.method == "coba").all(|r| !r.fallback));
        assert!(rows.iter().all(|r| r.rouge_l_f1.is_some()));
    }
}
