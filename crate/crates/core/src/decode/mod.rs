//! Decoding strategies.
//!
//! * [`greedy_decode`] / [`nucleus_decode`]: plain baselines.
//! * [`apply_cad`]: context-aware reweighting of the conditional distribution.
//! * [`coba_decode`]: depth-first backtracking that refuses tokens flagged by
//!   the detectors, with a step budget and a greedy fallback.
//! * [`lookahead_decode`]: rollout-scored baseline.
//!
//! Every strategy shares the same per-step pipeline ([`step_distribution`]):
//! query the model, apply CAD when configured, then mask EOS while the output
//! is shorter than `min_len`. At `max_len` the output stops without another
//! model call.

mod baseline;
mod cad;
mod coba;
mod lookahead;
mod nucleus;

pub use baseline::{baseline_decode, greedy_decode, nucleus_decode};
pub use cad::{apply_cad, CAD_LOG_FLOOR};
pub use coba::{coba_decode, CobaSession, DecodeState, StepOutcome};
pub use lookahead::{lookahead_decode, GroundingScorer, LookaheadConfig, RolloutScorer};
pub use nucleus::{nucleus_restrict, nucleus_set, sample_weighted, NucleusDraw};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::lm::LmProvider;
use crate::types::{NextTokenDistribution, TokenId, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Nucleus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CadConfig {
    pub alpha: f64,
}

impl Default for CadConfig {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub top_p: f64,
    pub cad: Option<CadConfig>,
    /// Enables backtracking with these detector thresholds.
    pub coba: Option<DetectorConfig>,
    pub min_len: usize,
    pub max_len: usize,
    /// The step budget is `budget_multiplier * max_len`.
    pub budget_multiplier: usize,
    pub seed: u64,
    /// ChaCha stream id; lets independent sessions share one seed.
    pub stream: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            top_p: 0.9,
            cad: None,
            coba: None,
            min_len: 2,
            max_len: 200,
            budget_multiplier: 10,
            seed: 0,
            stream: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.max_len == 0 || self.min_len > self.max_len {
            return Err(Error::contract(format!(
                "need 1 <= min_len ({}) <= max_len ({})",
                self.min_len, self.max_len
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::contract(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.budget_multiplier == 0 {
            return Err(Error::contract("budget multiplier must be positive"));
        }
        if let Some(cad) = self.cad {
            if !(cad.alpha >= 0.0 && cad.alpha.is_finite()) {
                return Err(Error::contract(format!("CAD alpha {} must be >= 0", cad.alpha)));
            }
        }
        if let Some(det) = &self.coba {
            det.validate()?;
        }
        Ok(())
    }

    /// Total forward plus backtrack steps allowed to the backtracking search.
    pub fn budget(&self) -> usize {
        self.budget_multiplier * self.max_len
    }

    /// Seeds the session generator: ChaCha8 from `seed`, on stream `stream`.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    pub fn without_coba(&self) -> Self {
        Self {
            coba: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Forward,
    Backtrack,
    ForcedRootAccept,
    FallbackTriggered,
    Eos,
    MaxLenStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeEvent {
    pub kind: EventKind,
    /// Generation slot (0 is the first token after SOS).
    pub position: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token: Option<TokenId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_dist: Option<f64>,
    /// Ordinal of the event within the trace.
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Eos,
    MaxLen,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Generated tokens without SOS and without the final EOS.
    pub output: TokenSeq,
    pub termination: Termination,
    pub fallback: bool,
    pub steps_used: usize,
    pub trace: Vec<DecodeEvent>,
}

impl DecodeResult {
    pub fn count(&self, kind: EventKind) -> usize {
        self.trace.iter().filter(|e| e.kind == kind).count()
    }
}

/// Appends events with consecutive ordinals.
#[derive(Debug, Default, Clone)]
pub(crate) struct Trace {
    events: Vec<DecodeEvent>,
}

impl Trace {
    pub(crate) fn push(
        &mut self,
        kind: EventKind,
        position: usize,
        token: Option<TokenId>,
        prob: Option<f64>,
        min_dist: Option<f64>,
    ) {
        let step = self.events.len();
        self.events.push(DecodeEvent {
            kind,
            position,
            token,
            prob,
            min_dist,
            step,
        });
    }

    pub(crate) fn extend_renumbered(&mut self, events: Vec<DecodeEvent>) {
        for mut e in events {
            e.step = self.events.len();
            self.events.push(e);
        }
    }

    pub(crate) fn into_events(self) -> Vec<DecodeEvent> {
        self.events
    }
}

/// The distribution every strategy decodes from at one slot.
///
/// Model query, then CAD (if configured), then EOS masking before `min_len`.
pub fn step_distribution(
    lm: &dyn LmProvider,
    context: &TokenSeq,
    prefix: &TokenSeq,
    cfg: &DecodeConfig,
) -> Result<NextTokenDistribution> {
    let cond = lm.next_distribution(context, prefix, true)?;
    let adjusted = match cfg.cad {
        Some(cad) => {
            let uncond = lm.next_distribution(context, prefix, false)?;
            apply_cad(&cond, &uncond, cad.alpha)?
        }
        None => cond,
    };
    let generated = prefix.len().saturating_sub(1);
    if generated < cfg.min_len {
        mask_token(&adjusted, lm.vocabulary().eos_id())
    } else {
        Ok(adjusted)
    }
}

/// Zeroes `token` and rescales the rest; uniform over the other tokens if
/// `token` held all the mass.
pub fn mask_token(dist: &NextTokenDistribution, token: TokenId) -> Result<NextTokenDistribution> {
    let mut probs = dist.probs().to_vec();
    if probs[token as usize] == 0.0 {
        return Ok(dist.clone());
    }
    probs[token as usize] = 0.0;
    let rest: f64 = probs.iter().sum();
    if rest <= 0.0 {
        let n = probs.len();
        if n < 2 {
            return Err(Error::domain("cannot mask the only token of the vocabulary"));
        }
        probs.iter_mut().for_each(|p| *p = 1.0 / (n - 1) as f64);
        probs[token as usize] = 0.0;
    }
    NextTokenDistribution::normalized(probs, dist.kind())
}

/// Token excluded from every candidate pool at this slot (EOS before `min_len`).
pub(crate) fn excluded_token(generated: usize, cfg: &DecodeConfig, eos: TokenId) -> Option<TokenId> {
    (generated < cfg.min_len).then_some(eos)
}

pub(crate) fn check_inputs(lm: &dyn LmProvider, context: &TokenSeq, cfg: &DecodeConfig) -> Result<()> {
    cfg.validate()?;
    context.validate(lm.vocabulary())?;
    if lm.embeddings().rows() != lm.vocabulary().size() {
        return Err(Error::contract("embedding table does not match the vocabulary"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DistributionKind;

    #[test]
    fn config_defaults_and_budget() {
        let cfg = DecodeConfig::default();
        assert_eq!((cfg.min_len, cfg.max_len, cfg.top_p), (2, 200, 0.9));
        assert_eq!(cfg.budget(), 2000);
        assert!(cfg.validate().is_ok());
        let bad = DecodeConfig { min_len: 5, max_len: 4, ..DecodeConfig::default() };
        assert!(bad.validate().is_err());
        let bad = DecodeConfig { top_p: 0.0, ..DecodeConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn masking_eos() {
        let d = NextTokenDistribution::new(vec![0.0, 0.5, 0.25, 0.25], DistributionKind::Conditional).unwrap();
        let m = mask_token(&d, 1).unwrap();
        assert_eq!(m.probs(), &[0.0, 0.0, 0.5, 0.5]);
        let d = NextTokenDistribution::delta(4, 1, DistributionKind::Conditional).unwrap();
        let m = mask_token(&d, 1).unwrap();
        assert_eq!(m.prob(1), 0.0);
        assert!((m.prob(0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rng_streams_differ() {
        use rand::Rng;
        let a = DecodeConfig { seed: 5, ..DecodeConfig::default() };
        let b = DecodeConfig { stream: 1, ..a.clone() };
        let x: u64 = a.rng().gen();
        let y: u64 = b.rng().gen();
        assert_ne!(x, y);
        assert_eq!(x, a.rng().gen::<u64>());
    }
}
