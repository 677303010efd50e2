//! Explicit lookup-table language model, used for hand-built decoding scenarios.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LmProvider;
use crate::error::{Error, Result};
use crate::types::{
    DistributionKind, EmbeddingTable, NextTokenDistribution, TokenId, TokenSeq, Vocabulary,
};

type Key = (Option<TokenSeq>, TokenSeq);

/// Maps full prefixes (optionally paired with an exact context) to distributions.
///
/// Lookup order: `(context, prefix)` entry, then context-free `prefix` entry,
/// then the default. Unconditional queries use the unconditional map when one
/// was provided and the conditional map otherwise.
#[derive(Debug, Clone)]
pub struct TableLm {
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
    conditional: HashMap<Key, NextTokenDistribution>,
    unconditional: Option<HashMap<Key, NextTokenDistribution>>,
    default: NextTokenDistribution,
}

impl TableLm {
    pub fn builder(
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        default: Vec<f64>,
    ) -> Result<TableLmBuilder> {
        embeddings.check_vocabulary(&vocab)?;
        let default = check_row(&vocab, default)?;
        Ok(TableLmBuilder {
            lm: TableLm {
                vocab,
                embeddings,
                conditional: HashMap::new(),
                unconditional: None,
                default,
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let file: TableLmFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: TableLmFile) -> Result<Self> {
        let vocab = Vocabulary::new(
            file.vocab_size,
            file.sos_id,
            file.eos_id,
            file.pad_id,
            file.special_ids.iter().copied(),
        )?
        .with_display(file.display.clone())?;
        let embeddings = match &file.embeddings {
            Some(rows) => {
                let dim = rows.first().map_or(0, Vec::len);
                EmbeddingTable::new(dim, rows.clone())?
            }
            None => one_hot(vocab.size())?,
        };
        let n = vocab.size();
        let mut builder = Self::builder(vocab, embeddings, file.default.expand(n)?)?;
        for e in file.entries {
            let probs = e.probs.expand(n)?;
            builder = match e.context {
                Some(ctx) => builder.context_entry(ctx, e.prefix, probs)?,
                None => builder.entry(e.prefix, probs)?,
            };
        }
        if let Some(entries) = file.unconditional_entries {
            builder = builder.unconditional_map();
            for e in entries {
                builder = builder.unconditional_entry(e.prefix, e.probs.expand(n)?)?;
            }
        }
        Ok(builder.build())
    }

    /// Dense serialized form; round-trips through [`TableLm::from_file`].
    pub fn to_file(&self) -> TableLmFile {
        let entry = |((ctx, prefix), d): (&Key, &NextTokenDistribution)| TableEntry {
            context: ctx.clone(),
            prefix: prefix.clone(),
            probs: ProbSpec::Dense(d.probs().to_vec()),
        };
        let mut entries: Vec<TableEntry> = self.conditional.iter().map(entry).collect();
        entries.sort_by(|a, b| (&a.context, &a.prefix).cmp(&(&b.context, &b.prefix)));
        let unconditional_entries = self.unconditional.as_ref().map(|m| {
            let mut v: Vec<TableEntry> = m.iter().map(entry).collect();
            v.sort_by(|a, b| a.prefix.cmp(&b.prefix));
            v
        });
        TableLmFile {
            vocab_size: self.vocab.size(),
            sos_id: self.vocab.sos_id(),
            eos_id: self.vocab.eos_id(),
            pad_id: self.vocab.pad_id(),
            special_ids: self.vocab.special_ids().iter().copied().collect(),
            display: self.vocab.display().clone(),
            embeddings: Some(self.embeddings.to_rows()),
            default: ProbSpec::Dense(self.default.probs().to_vec()),
            entries,
            unconditional_entries,
        }
    }

    fn lookup<'a>(
        map: &'a HashMap<Key, NextTokenDistribution>,
        context: &TokenSeq,
        prefix: &TokenSeq,
    ) -> Option<&'a NextTokenDistribution> {
        // Cloning keys is cheap next to the distributions these tables hold.
        map.get(&(Some(context.clone()), prefix.clone()))
            .or_else(|| map.get(&(None, prefix.clone())))
    }
}

impl LmProvider for TableLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    fn next_distribution(
        &self,
        context: &TokenSeq,
        prefix: &TokenSeq,
        conditioned: bool,
    ) -> Result<NextTokenDistribution> {
        let map = match (&self.unconditional, conditioned) {
            (Some(u), false) => u,
            _ => &self.conditional,
        };
        let found = Self::lookup(map, context, prefix).unwrap_or(&self.default);
        let kind = if conditioned {
            DistributionKind::Conditional
        } else {
            DistributionKind::Unconditional
        };
        Ok(found.with_kind(kind))
    }
}

pub struct TableLmBuilder {
    lm: TableLm,
}

impl TableLmBuilder {
    pub fn entry(mut self, prefix: impl Into<TokenSeq>, probs: Vec<f64>) -> Result<Self> {
        let (prefix, d) = self.checked(prefix.into(), probs)?;
        self.lm.conditional.insert((None, prefix), d);
        Ok(self)
    }

    pub fn context_entry(
        mut self,
        context: impl Into<TokenSeq>,
        prefix: impl Into<TokenSeq>,
        probs: Vec<f64>,
    ) -> Result<Self> {
        let context = context.into();
        context.validate(&self.lm.vocab)?;
        let (prefix, d) = self.checked(prefix.into(), probs)?;
        self.lm.conditional.insert((Some(context), prefix), d);
        Ok(self)
    }

    /// Switches unconditional queries to a separate (initially empty) map.
    pub fn unconditional_map(mut self) -> Self {
        self.lm.unconditional.get_or_insert_with(HashMap::new);
        self
    }

    pub fn unconditional_entry(mut self, prefix: impl Into<TokenSeq>, probs: Vec<f64>) -> Result<Self> {
        let (prefix, d) = self.checked(prefix.into(), probs)?;
        self.lm
            .unconditional
            .get_or_insert_with(HashMap::new)
            .insert((None, prefix), d);
        Ok(self)
    }

    /// Adds the same row for `prefix` under both maps.
    pub fn sparse_entry(self, prefix: impl Into<TokenSeq>, listed: &[(TokenId, f64)]) -> Result<Self> {
        let n = self.lm.vocab.size();
        let probs = ProbSpec::Sparse { sparse: listed.to_vec() }.expand(n)?;
        self.entry(prefix, probs)
    }

    fn checked(&self, prefix: TokenSeq, probs: Vec<f64>) -> Result<(TokenSeq, NextTokenDistribution)> {
        prefix.validate(&self.lm.vocab)?;
        if prefix.first() != Some(&self.lm.vocab.sos_id()) {
            return Err(Error::contract("table prefixes must start with sos_id"));
        }
        Ok((prefix, check_row(&self.lm.vocab, probs)?))
    }

    pub fn build(self) -> TableLm {
        self.lm
    }
}

fn check_row(vocab: &Vocabulary, probs: Vec<f64>) -> Result<NextTokenDistribution> {
    if probs.len() != vocab.size() {
        return Err(Error::contract(format!(
            "probability row of length {} for vocabulary of size {}",
            probs.len(),
            vocab.size()
        )));
    }
    NextTokenDistribution::new(probs, DistributionKind::Conditional)
}

fn one_hot(n: usize) -> Result<EmbeddingTable> {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    EmbeddingTable::from_flat(n, data)
}

/// JSON form of a [`TableLm`] (`--lm table:PATH`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableLmFile {
    pub vocab_size: usize,
    pub sos_id: TokenId,
    pub eos_id: TokenId,
    #[serde(default)]
    pub pad_id: Option<TokenId>,
    #[serde(default)]
    pub special_ids: Vec<TokenId>,
    #[serde(default)]
    pub display: BTreeMap<TokenId, String>,
    /// One row per token; one-hot rows when absent.
    #[serde(default)]
    pub embeddings: Option<Vec<Vec<f64>>>,
    pub default: ProbSpec,
    #[serde(default)]
    pub entries: Vec<TableEntry>,
    #[serde(default)]
    pub unconditional_entries: Option<Vec<TableEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<TokenSeq>,
    pub prefix: TokenSeq,
    pub probs: ProbSpec,
}

/// A probability row: dense, or sparse `[id, p]` pairs whose leftover mass is
/// spread evenly over the unlisted ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbSpec {
    Dense(Vec<f64>),
    Sparse { sparse: Vec<(TokenId, f64)> },
}

impl ProbSpec {
    pub fn expand(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            ProbSpec::Dense(v) => Ok(v.clone()),
            ProbSpec::Sparse { sparse } => {
                let mut probs = vec![f64::NAN; n];
                let mut listed = 0.0;
                for &(id, p) in sparse {
                    let slot = probs
                        .get_mut(id as usize)
                        .ok_or_else(|| Error::contract(format!("sparse id {id} out of range")))?;
                    if !slot.is_nan() {
                        return Err(Error::contract(format!("sparse id {id} listed twice")));
                    }
                    *slot = p;
                    listed += p;
                }
                let unlisted = n - sparse.len();
                let rest = 1.0 - listed;
                if rest < -1e-9 {
                    return Err(Error::domain(format!("sparse row lists mass {listed} > 1")));
                }
                if unlisted == 0 && rest.abs() > 1e-9 {
                    return Err(Error::domain("sparse row lists every id but does not sum to 1"));
                }
                let fill = if unlisted == 0 { 0.0 } else { rest.max(0.0) / unlisted as f64 };
                probs.iter_mut().filter(|p| p.is_nan()).for_each(|p| *p = fill);
                Ok(probs)
            }
        }
    }
}
