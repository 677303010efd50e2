use serde::{Deserialize, Serialize};

use super::baseline::{argmax_excluding, greedy_continue};
use super::{
    check_inputs, excluded_token, nucleus_set, step_distribution, DecodeConfig, DecodeResult,
    EventKind, Termination, Trace,
};
use crate::error::{Error, Result};
use crate::eval::grounding_precision;
use crate::lm::LmProvider;
use crate::types::{TokenId, TokenSeq};

/// Scores a complete rollout (generated tokens only) against the context.
pub trait RolloutScorer: Send + Sync {
    fn score(&self, lm: &dyn LmProvider, context: &TokenSeq, rollout: &TokenSeq) -> f64;
}

/// Grounding precision of the rollout; 0 when it is undefined (no content tokens).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingScorer {
    pub phi: f64,
}

impl Default for GroundingScorer {
    fn default() -> Self {
        Self { phi: 0.5 }
    }
}

impl RolloutScorer for GroundingScorer {
    fn score(&self, lm: &dyn LmProvider, context: &TokenSeq, rollout: &TokenSeq) -> f64 {
        grounding_precision(rollout, context, lm.embeddings(), self.phi, lm.vocabulary()).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookaheadConfig {
    /// Candidates rolled out per lookahead slot.
    pub k: usize,
    /// Lookahead runs at slots divisible by `interval`.
    pub interval: usize,
    /// Weight of the rollout score against the candidate log-probability.
    pub weight: f64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        Self {
            k: 5,
            interval: 1,
            weight: 1.0,
        }
    }
}

impl LookaheadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.interval == 0 {
            return Err(Error::contract("lookahead needs k >= 1 and interval >= 1"));
        }
        if !self.weight.is_finite() {
            return Err(Error::contract("lookahead weight must be finite"));
        }
        Ok(())
    }
}

/// Greedy decoding that, every `interval` slots, rolls out the top `k`
/// candidates greedily and keeps the one maximizing `ln p + weight * score`.
/// Ties go to the more probable candidate.
pub fn lookahead_decode(
    lm: &dyn LmProvider,
    context: &TokenSeq,
    cfg: &DecodeConfig,
    la: &LookaheadConfig,
    scorer: &dyn RolloutScorer,
) -> Result<DecodeResult> {
    check_inputs(lm, context, cfg)?;
    la.validate()?;
    let greedy_cfg = cfg.without_coba();
    let eos = lm.vocabulary().eos_id();
    let mut prefix = TokenSeq::from(vec![lm.vocabulary().sos_id()]);
    let mut trace = Trace::default();
    let mut steps = 0;
    let termination = loop {
        let slot = prefix.len() - 1;
        if slot >= cfg.max_len {
            trace.push(EventKind::MaxLenStop, slot, None, None, None);
            break Termination::MaxLen;
        }
        let dist = step_distribution(lm, context, &prefix, cfg)?;
        let excluded = excluded_token(slot, cfg, eos);
        let token = if la.k > 1 && slot % la.interval == 0 {
            let pool: Vec<(TokenId, f64)> = nucleus_set(&dist, 1.0)
                .into_iter()
                .filter(|&(id, _)| Some(id) != excluded)
                .take(la.k)
                .collect();
            let mut best: Option<(TokenId, f64)> = None;
            for (id, p) in pool {
                let rollout = if id == eos {
                    TokenSeq::from(&prefix[1..])
                } else {
                    let mut start = prefix.clone();
                    start.push(id);
                    let mut full = TokenSeq::from(&start[1..]);
                    full.extend_from(&greedy_continue(lm, context, &greedy_cfg, start)?.output);
                    full
                };
                let value = p.ln() + la.weight * scorer.score(lm, context, &rollout);
                if best.is_none_or(|(_, b)| value > b) {
                    best = Some((id, value));
                }
            }
            best.map_or_else(|| argmax_excluding(&dist, excluded), |(id, _)| id)
        } else {
            argmax_excluding(&dist, excluded)
        };
        steps += 1;
        trace.push(EventKind::Forward, slot, Some(token), Some(dist.prob(token)), None);
        if token == eos {
            trace.push(EventKind::Eos, slot, None, None, None);
            break Termination::Eos;
        }
        prefix.push(token);
    };
    Ok(DecodeResult {
        output: TokenSeq::from(&prefix[1..]),
        termination,
        fallback: false,
        steps_used: steps,
        trace: trace.into_events(),
    })
}
