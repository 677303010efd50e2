//! Hallucination detectors over candidate next tokens.
//!
//! A candidate is flagged when its conditional probability is below `delta`,
//! or when its embedding is farther than `phi` (cosine distance) from every
//! token of the context. Equality on either threshold is admissible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::LmProvider;
use crate::types::{EmbeddingTable, NextTokenDistribution, TokenId, TokenSeq, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub delta: f64,
    /// `None` disables the similarity detector.
    pub phi: Option<f64>,
    pub exempt_special_from_similarity: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            phi: None,
            exempt_special_from_similarity: true,
        }
    }
}

impl DetectorConfig {
    pub fn new(delta: f64, phi: Option<f64>) -> Result<Self> {
        let cfg = Self {
            delta,
            phi,
            exempt_special_from_similarity: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::contract(format!("delta {} outside [0, 1]", self.delta)));
        }
        if let Some(phi) = self.phi {
            if !(0.0..=2.0).contains(&phi) {
                return Err(Error::contract(format!("phi {phi} outside [0, 2]")));
            }
        }
        Ok(())
    }

    /// Both detectors off: every token is admissible.
    pub fn disabled() -> Self {
        Self {
            delta: 0.0,
            phi: None,
            exempt_special_from_similarity: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenVerdict {
    pub token: TokenId,
    pub prob: f64,
    pub min_dist: Option<f64>,
    pub passes_prob: bool,
    pub passes_dist: bool,
    pub admissible: bool,
}

/// Minimum cosine distance from `token` to any token of `context`.
pub fn min_context_distance(token: TokenId, context: &TokenSeq, emb: &EmbeddingTable) -> Result<f64> {
    let index = ContextIndex::new(context, emb)?;
    Ok(index.min_distance(token))
}

/// Distinct context token ids, for repeated distance queries against one document.
#[derive(Debug, Clone)]
pub struct ContextIndex<'a> {
    emb: &'a EmbeddingTable,
    distinct: Vec<TokenId>,
}

impl<'a> ContextIndex<'a> {
    pub fn new(context: &TokenSeq, emb: &'a EmbeddingTable) -> Result<Self> {
        if context.is_empty() {
            return Err(Error::domain("distance to an empty context is undefined"));
        }
        if let Some(bad) = context.iter().find(|&id| id as usize >= emb.rows()) {
            return Err(Error::domain(format!("context token {bad} has no embedding")));
        }
        let mut distinct = context.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        Ok(Self { emb, distinct })
    }

    pub fn min_distance(&self, token: TokenId) -> f64 {
        if self.distinct.binary_search(&token).is_ok() {
            return 0.0;
        }
        self.distinct
            .iter()
            .map(|&c| self.emb.distance(token, c))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Stateful detector for one decode session; memoizes distances per token.
#[derive(Debug)]
pub struct Detector<'a> {
    cfg: DetectorConfig,
    vocab: &'a Vocabulary,
    index: Option<ContextIndex<'a>>,
    memo: Vec<f64>,
}

impl<'a> Detector<'a> {
    /// Fails when similarity detection is on and the context is empty.
    pub fn new(
        cfg: DetectorConfig,
        context: &TokenSeq,
        emb: &'a EmbeddingTable,
        vocab: &'a Vocabulary,
    ) -> Result<Self> {
        cfg.validate()?;
        let index = match (cfg.phi, context.is_empty()) {
            (Some(_), _) => Some(ContextIndex::new(context, emb)?),
            (None, false) => ContextIndex::new(context, emb).ok(),
            (None, true) => None,
        };
        Ok(Self {
            cfg,
            vocab,
            index,
            memo: vec![f64::NAN; vocab.size()],
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn passes_prob(&self, prob: f64) -> bool {
        prob >= self.cfg.delta
    }

    /// Memoized minimum context distance; `None` without a context.
    pub fn min_distance(&mut self, token: TokenId) -> Option<f64> {
        let index = self.index.as_ref()?;
        let slot = &mut self.memo[token as usize];
        if slot.is_nan() {
            *slot = index.min_distance(token);
        }
        Some(*slot)
    }

    fn exempt(&self, token: TokenId) -> bool {
        self.cfg.exempt_special_from_similarity && self.vocab.is_special(token)
    }

    pub fn passes_dist(&mut self, token: TokenId) -> bool {
        match self.cfg.phi {
            None => true,
            Some(_) if self.exempt(token) => true,
            Some(phi) => self.min_distance(token).is_some_and(|d| d <= phi),
        }
    }

    pub fn is_admissible(&mut self, token: TokenId, prob: f64) -> bool {
        self.passes_prob(prob) && self.passes_dist(token)
    }

    pub fn verdict(&mut self, token: TokenId, prob: f64) -> TokenVerdict {
        let passes_prob = self.passes_prob(prob);
        let passes_dist = self.passes_dist(token);
        let min_dist = match self.cfg.phi {
            Some(_) => self.min_distance(token),
            None => None,
        };
        TokenVerdict {
            token,
            prob,
            min_dist,
            passes_prob,
            passes_dist,
            admissible: passes_prob && passes_dist,
        }
    }
}

/// One verdict per vocabulary token.
pub fn classify_candidates(
    dist: &NextTokenDistribution,
    context: &TokenSeq,
    cfg: &DetectorConfig,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
) -> Result<Vec<TokenVerdict>> {
    if dist.len() != vocab.size() || emb.rows() != vocab.size() {
        return Err(Error::contract("distribution, embeddings and vocabulary disagree in size"));
    }
    let mut det = Detector::new(*cfg, context, emb, vocab)?;
    Ok(dist
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &p)| det.verdict(i as TokenId, p))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub offset: i64,
    pub prob: f64,
    pub min_dist: f64,
}

/// Token probability and context distance at each offset around a span start.
///
/// Offsets run from `-window` to `+window`, clipped to the summary.
pub fn span_profile(
    doc: &TokenSeq,
    summary: &TokenSeq,
    span_start: usize,
    lm: &dyn LmProvider,
    window: usize,
) -> Result<Vec<ProfileRow>> {
    if span_start >= summary.len() {
        return Err(Error::contract(format!(
            "span start {span_start} outside summary of length {}",
            summary.len()
        )));
    }
    let vocab = lm.vocabulary();
    summary.validate(vocab)?;
    let index = ContextIndex::new(doc, lm.embeddings())?;
    let lo = span_start.saturating_sub(window);
    let hi = (span_start + window).min(summary.len() - 1);
    let mut prefix = TokenSeq::from(vec![vocab.sos_id()]);
    prefix.extend_from(&summary[..lo]);
    let mut rows = Vec::with_capacity(hi - lo + 1);
    for pos in lo..=hi {
        let token = summary[pos];
        let dist = lm.next_distribution(doc, &prefix, true)?;
        rows.push(ProfileRow {
            offset: pos as i64 - span_start as i64,
            prob: dist.prob(token),
            min_dist: index.min_distance(token),
        });
        prefix.push(token);
    }
    Ok(rows)
}
