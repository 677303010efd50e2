use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decode::{CadConfig, DecodeConfig, LookaheadConfig, Strategy};
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::lm::{LmProvider, NGramLm, NGramSpec, RemoteLm, RemoteOptions, TableLm};

/// Which detectors the backtracking search uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Detectors {
    Prob,
    ProbAndDist,
}

/// A decoding method, written as `+`-joined parts such as `nucleus+coba-d+cad`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Method {
    pub strategy: Strategy,
    pub backtrack: Option<Detectors>,
    pub cad: bool,
    pub lookahead: bool,
}

impl Method {
    pub const GREEDY: Method = Method {
        strategy: Strategy::Greedy,
        backtrack: None,
        cad: false,
        lookahead: false,
    };

    /// The roster accepted by `--method all`.
    pub const ROSTER: [&'static str; 12] = [
        "greedy",
        "nucleus",
        "cad",
        "nucleus+cad",
        "coba",
        "coba-d",
        "coba+cad",
        "coba-d+cad",
        "nucleus+coba",
        "nucleus+coba-d",
        "nucleus+coba+cad",
        "lookahead",
    ];

    /// Decoder settings for this method on top of the shared `base` settings.
    pub fn decode_config(&self, base: &DecodeConfig, thresholds: &Thresholds, alpha: f64) -> DecodeConfig {
        let coba = self.backtrack.map(|d| DetectorConfig {
            delta: thresholds.delta,
            phi: match d {
                Detectors::Prob => None,
                Detectors::ProbAndDist => Some(thresholds.phi),
            },
            ..DetectorConfig::default()
        });
        DecodeConfig {
            strategy: self.strategy,
            cad: self.cad.then_some(CadConfig { alpha }),
            coba,
            ..base.clone()
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Method::GREEDY;
        let mut seen = Vec::new();
        for part in s.split('+').map(str::trim) {
            if seen.contains(&part) {
                return Err(Error::parse(format!("method {s:?} repeats {part:?}")));
            }
            seen.push(part);
            match part {
                "greedy" => {}
                "nucleus" => m.strategy = Strategy::Nucleus,
                "coba" | "coba-d" if m.backtrack.is_some() => {
                    return Err(Error::parse(format!("method {s:?} names two detector sets")));
                }
                "coba" => m.backtrack = Some(Detectors::Prob),
                "coba-d" => m.backtrack = Some(Detectors::ProbAndDist),
                "cad" => m.cad = true,
                "lookahead" => m.lookahead = true,
                other => return Err(Error::parse(format!("unknown method part {other:?} in {s:?}"))),
            }
        }
        if seen.contains(&"greedy") && m.strategy == Strategy::Nucleus {
            return Err(Error::parse(format!("method {s:?} is both greedy and nucleus")));
        }
        if m.lookahead && (m.backtrack.is_some() || m.strategy == Strategy::Nucleus) {
            return Err(Error::parse("lookahead combines only with cad"));
        }
        Ok(m)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.strategy == Strategy::Nucleus {
            parts.push("nucleus");
        }
        if self.lookahead {
            parts.push("lookahead");
        }
        match self.backtrack {
            Some(Detectors::Prob) => parts.push("coba"),
            Some(Detectors::ProbAndDist) => parts.push("coba-d"),
            None => {}
        }
        if self.cad {
            parts.push("cad");
        }
        if parts.is_empty() {
            parts.push("greedy");
        }
        f.write_str(&parts.join("+"))
    }
}

/// Parses a comma-separated method list; `all` expands to [`Method::ROSTER`].
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out: Vec<Method> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let expanded: Vec<&str> = if name == "all" { Method::ROSTER.to_vec() } else { vec![name] };
        for n in expanded {
            let m: Method = n.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::parse("no methods given"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub delta: f64,
    pub phi: f64,
}

impl Thresholds {
    pub const FLAN_T5: Thresholds = Thresholds { delta: 0.2, phi: 0.5 };
    pub const LLAMA: Thresholds = Thresholds { delta: 0.3, phi: 0.9 };

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "flan-t5" => Ok(Self::FLAN_T5),
            "llama" => Ok(Self::LLAMA),
            other => Err(Error::parse(format!("unknown threshold profile {other:?}"))),
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::FLAN_T5
    }
}

/// Where the language model comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum LmSpec {
    Table(PathBuf),
    NGram(NGramSpec),
    Remote(String),
}

pub const LM_URL_ENV: &str = "COBA_LM_URL";

impl LmSpec {
    /// `table:PATH`, `ngram:k=v,...`, `ngram:PATH.json` or `remote:URL`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::parse(format!("LM spec {s:?} needs a kind prefix")))?;
        match kind {
            "table" => Ok(LmSpec::Table(PathBuf::from(rest))),
            "ngram" if rest.ends_with(".json") => {
                let text = std::fs::read_to_string(rest)?;
                Ok(LmSpec::NGram(serde_json::from_str(&text)?))
            }
            "ngram" => Ok(LmSpec::NGram(rest.parse()?)),
            "remote" => Ok(LmSpec::Remote(rest.to_string())),
            other => Err(Error::parse(format!("unknown LM kind {other:?}"))),
        }
    }

    /// The explicit spec, or a remote model at `$COBA_LM_URL`.
    pub fn from_arg_or_env(arg: Option<&str>) -> Result<Self> {
        match arg {
            Some(s) => Self::parse(s),
            None => match std::env::var(LM_URL_ENV) {
                Ok(url) if !url.is_empty() => Ok(LmSpec::Remote(url)),
                _ => Err(Error::parse(format!("no --lm given and {LM_URL_ENV} is unset"))),
            },
        }
    }

    pub fn open(&self, remote: &RemoteOptions) -> Result<Arc<dyn LmProvider>> {
        Ok(match self {
            LmSpec::Table(path) => Arc::new(TableLm::load(path)?),
            LmSpec::NGram(spec) => Arc::new(NGramLm::synthetic(spec)?),
            LmSpec::Remote(url) => Arc::new(RemoteLm::connect(url, remote.clone())?),
        })
    }
}

/// Everything a harness run needs besides the corpus.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    /// Shared decoder settings; method-specific fields are filled per method.
    pub decode: DecodeConfig,
    pub thresholds: Thresholds,
    pub alpha: f64,
    pub lookahead: LookaheadConfig,
    pub prepend_reference: bool,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    pub write_traces: bool,
    /// n-gram order for the hallucination rate column.
    pub hallucination_n: usize,
}

impl RunConfig {
    pub fn new(methods: Vec<Method>, out_dir: impl AsRef<Path>) -> Self {
        Self {
            methods,
            decode: DecodeConfig::default(),
            thresholds: Thresholds::default(),
            alpha: CadConfig::default().alpha,
            lookahead: LookaheadConfig::default(),
            prepend_reference: false,
            out_dir: out_dir.as_ref().to_path_buf(),
            jobs: 0,
            write_traces: false,
            hallucination_n: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::contract("no methods configured"));
        }
        for m in &self.methods {
            m.decode_config(&self.decode, &self.thresholds, self.alpha).validate()?;
        }
        self.lookahead.validate()?;
        if self.hallucination_n == 0 {
            return Err(Error::contract("hallucination n-gram order must be >= 1"));
        }
        Ok(())
    }
}
