//! Backtracking decoder.
//!
//! The search is depth first over the prefix tree. At each slot the decoder
//! proposes the best admissible token that has not been eliminated under the
//! current prefix. When no such token exists it pops the last token, adds it
//! to the elimination set of the slot below and retries there. The first slot
//! never backtracks: when nothing there is admissible the best non-eliminated
//! token is accepted anyway. Forward and backtrack steps share one budget;
//! when it runs out the whole output is regenerated greedily.

use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;

use super::{
    check_inputs, excluded_token, greedy_decode, nucleus_set, sample_weighted, step_distribution,
    DecodeConfig, DecodeResult, EventKind, Strategy, Termination, Trace,
};
use crate::detect::Detector;
use crate::error::{Error, Result};
use crate::lm::LmProvider;
use crate::types::{NextTokenDistribution, TokenId, TokenSeq};

/// Search state. `elim[t]` holds the tokens rejected at slot `t` under the current prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    /// Starts with SOS.
    pub prefix: TokenSeq,
    /// One set per open slot: `elim.len() == prefix.len()`.
    pub elim: Vec<HashSet<TokenId>>,
    /// Probability each generated token had when it was chosen.
    pub chosen_probs: Vec<f64>,
    pub steps_used: usize,
}

impl DecodeState {
    fn new(sos: TokenId) -> Self {
        Self {
            prefix: TokenSeq::from(vec![sos]),
            elim: vec![HashSet::new()],
            chosen_probs: Vec::new(),
            steps_used: 0,
        }
    }

    pub fn slot(&self) -> usize {
        self.prefix.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Running,
    Finished(DecodeResult),
}

/// A resumable backtracking decode, one step per [`CobaSession::step`] call.
pub struct CobaSession<'a> {
    lm: &'a dyn LmProvider,
    context: &'a TokenSeq,
    cfg: DecodeConfig,
    detector: Detector<'a>,
    state: DecodeState,
    rng: ChaCha8Rng,
    trace: Trace,
    eos: TokenId,
    finished: bool,
}

impl<'a> CobaSession<'a> {
    pub fn new(lm: &'a dyn LmProvider, context: &'a TokenSeq, cfg: &DecodeConfig) -> Result<Self> {
        check_inputs(lm, context, cfg)?;
        let det_cfg = cfg
            .coba
            .ok_or_else(|| Error::contract("backtracking decode needs detector thresholds"))?;
        let vocab = lm.vocabulary();
        Ok(Self {
            lm,
            context,
            cfg: cfg.clone(),
            detector: Detector::new(det_cfg, context, lm.embeddings(), vocab)?,
            state: DecodeState::new(vocab.sos_id()),
            rng: cfg.rng(),
            trace: Trace::default(),
            eos: vocab.eos_id(),
            finished: false,
        })
    }

    pub fn state(&self) -> &DecodeState {
        &self.state
    }

    /// Performs one forward or backtrack step, or finishes the decode.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::contract("session already finished"));
        }
        let slot = self.state.slot();
        if slot >= self.cfg.max_len {
            self.trace.push(EventKind::MaxLenStop, slot, None, None, None);
            return Ok(self.finish(Termination::MaxLen));
        }
        if self.state.steps_used >= self.cfg.budget() {
            return self.fallback();
        }

        let dist = step_distribution(self.lm, self.context, &self.state.prefix, &self.cfg)?;
        let excluded = excluded_token(slot, &self.cfg, self.eos);

        if let Some(token) = self.propose(&dist, excluded, true) {
            return Ok(self.advance(EventKind::Forward, token, dist.prob(token)));
        }
        if slot == 0 {
            return match self.propose(&dist, excluded, false) {
                Some(token) => Ok(self.advance(EventKind::ForcedRootAccept, token, dist.prob(token))),
                None => self.fallback(),
            };
        }
        self.backtrack();
        Ok(StepOutcome::Running)
    }

    /// Best candidate at the current slot, honoring eliminations and, when
    /// `detect` is set, the detectors. Zero-probability tokens are never proposed.
    fn propose(
        &mut self,
        dist: &NextTokenDistribution,
        excluded: Option<TokenId>,
        detect: bool,
    ) -> Option<TokenId> {
        let elim = self.state.elim.last().expect("one set per open slot");
        let detector = &mut self.detector;
        let mut ok = |id: TokenId, p: f64| {
            Some(id) != excluded && !elim.contains(&id) && (!detect || detector.is_admissible(id, p))
        };
        match self.cfg.strategy {
            Strategy::Greedy => {
                let delta = if detect { detector_delta(&self.cfg) } else { 0.0 };
                let mut best: Option<(TokenId, f64)> = None;
                for (i, &p) in dist.probs().iter().enumerate() {
                    // Only tokens that would improve on the current best are checked.
                    if p <= 0.0 || p < delta || best.is_some_and(|(_, bp)| p <= bp) {
                        continue;
                    }
                    if ok(i as TokenId, p) {
                        best = Some((i as TokenId, p));
                    }
                }
                best.map(|(id, _)| id)
            }
            Strategy::Nucleus => {
                let pool: Vec<(TokenId, f64)> = nucleus_set(dist, self.cfg.top_p)
                    .into_iter()
                    .filter(|&(id, p)| ok(id, p))
                    .collect();
                sample_weighted(&pool, &mut self.rng)
            }
        }
    }

    fn advance(&mut self, kind: EventKind, token: TokenId, prob: f64) -> StepOutcome {
        let slot = self.state.slot();
        let min_dist = self.detector.min_distance(token);
        self.state.steps_used += 1;
        self.trace.push(kind, slot, Some(token), Some(prob), min_dist);
        if token == self.eos {
            self.trace.push(EventKind::Eos, slot, None, None, None);
            return self.finish(Termination::Eos);
        }
        self.state.prefix.push(token);
        self.state.elim.push(HashSet::new());
        self.state.chosen_probs.push(prob);
        StepOutcome::Running
    }

    fn backtrack(&mut self) {
        let s = &mut self.state;
        s.elim.pop();
        let token = s.prefix.pop().expect("slot > 0 has a token to pop");
        let prob = s.chosen_probs.pop();
        s.elim
            .last_mut()
            .expect("the root slot is never popped")
            .insert(token);
        s.steps_used += 1;
        let slot = s.slot();
        self.trace.push(EventKind::Backtrack, slot, Some(token), prob, None);
    }

    fn fallback(&mut self) -> Result<StepOutcome> {
        let slot = self.state.slot();
        self.trace.push(EventKind::FallbackTriggered, slot, None, None, None);
        let greedy = greedy_decode(self.lm, self.context, &self.cfg.without_coba())?;
        self.finished = true;
        let mut trace = std::mem::take(&mut self.trace);
        trace.extend_renumbered(greedy.trace);
        Ok(StepOutcome::Finished(DecodeResult {
            output: greedy.output,
            termination: Termination::Fallback,
            fallback: true,
            steps_used: self.state.steps_used,
            trace: trace.into_events(),
        }))
    }

    fn finish(&mut self, termination: Termination) -> StepOutcome {
        self.finished = true;
        StepOutcome::Finished(DecodeResult {
            output: TokenSeq::from(&self.state.prefix[1..]),
            termination,
            fallback: false,
            steps_used: self.state.steps_used,
            trace: std::mem::take(&mut self.trace).into_events(),
        })
    }
}

fn detector_delta(cfg: &DecodeConfig) -> f64 {
    cfg.coba.map_or(0.0, |d| d.delta)
}

/// Runs a [`CobaSession`] to completion.
pub fn coba_decode(lm: &dyn LmProvider, context: &TokenSeq, cfg: &DecodeConfig) -> Result<DecodeResult> {
    let mut session = CobaSession::new(lm, context, cfg)?;
    loop {
        if let StepOutcome::Finished(result) = session.step()? {
            return Ok(result);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{nucleus_decode, CadConfig};
    use crate::detect::DetectorConfig;
    use crate::fixtures::{self, Fig1Words};
    use crate::lm::TableLm;
    use crate::types::Vocabulary;

    fn coba_cfg(delta: f64, phi: Option<f64>) -> DecodeConfig {
        DecodeConfig {
            max_len: 10,
            coba: Some(DetectorConfig::new(delta, phi).unwrap()),
            ..DecodeConfig::default()
        }
    }

    #[test]
    fn fig1_backtracks_once() {
        let lm = fixtures::fig1_table_lm();
        let w = Fig1Words::new();
        let r = coba_decode(&lm, &TokenSeq::new(), &coba_cfg(0.2, None)).unwrap();
        assert_eq!(r.output.to_vec(), vec![w.i, w.live, w.with, w.my, w.dog]);
        assert_eq!(r.termination, Termination::Eos);
        assert!(!r.fallback);
        let kinds: Vec<(EventKind, Option<TokenId>)> = r.trace.iter().map(|e| (e.kind, e.token)).collect();
        assert_eq!(
            kinds,
            vec![
                (EventKind::Forward, Some(w.i)),
                (EventKind::Forward, Some(w.live)),
                (EventKind::Forward, Some(w.in_)),
                (EventKind::Backtrack, Some(w.in_)),
                (EventKind::Forward, Some(w.with)),
                (EventKind::Forward, Some(w.my)),
                (EventKind::Forward, Some(w.dog)),
                (EventKind::Forward, Some(w.eos)),
                (EventKind::Eos, None),
            ]
        );
        assert_eq!(r.trace[3].position, 2);
        assert_eq!(r.steps_used, 8);
    }

    #[test]
    fn detectors_off_match_greedy() {
        let lm = fixtures::fig1_table_lm();
        let r = coba_decode(&lm, &TokenSeq::new(), &coba_cfg(0.0, None)).unwrap();
        let g = greedy_decode(&lm, &TokenSeq::new(), &coba_cfg(0.0, None)).unwrap();
        assert_eq!(r, g);
        assert_eq!(r.count(EventKind::Backtrack), 0);
    }

    #[test]
    fn adversarial_exhausts_budget() {
        let lm = fixtures::adversarial_table_lm(64);
        let cfg = DecodeConfig { max_len: 5, ..coba_cfg(0.2, None) };
        let r = coba_decode(&lm, &TokenSeq::new(), &cfg).unwrap();
        assert_eq!(r.steps_used, 50);
        assert!(r.fallback);
        assert_eq!(r.termination, Termination::Fallback);
        let g = greedy_decode(&lm, &TokenSeq::new(), &cfg.without_coba()).unwrap();
        assert_eq!(r.output, g.output);
        // Alternating forced accepts at the root and backtracks out of slot 1.
        assert_eq!(r.count(EventKind::ForcedRootAccept), 25);
        assert_eq!(r.count(EventKind::Backtrack), 25);
    }

    #[test]
    fn root_exhaustion_falls_back_early() {
        // Masking EOS lifts the other two tokens to 0.5, still below delta.
        let lm = fixtures::adversarial_table_lm(4);
        let cfg = DecodeConfig { max_len: 5, ..coba_cfg(0.6, None) };
        let r = coba_decode(&lm, &TokenSeq::new(), &cfg).unwrap();
        assert!(r.fallback);
        // Root support minus EOS is {2, 3}; both are forced in and backtracked.
        assert_eq!(r.steps_used, 4);
    }

    #[test]
    fn session_invariants_hold_every_step() {
        let lm = fixtures::adversarial_table_lm(12);
        let ctx = TokenSeq::new();
        let cfg = DecodeConfig { max_len: 4, ..coba_cfg(0.15, None) };
        let mut s = CobaSession::new(&lm, &ctx, &cfg).unwrap();
        loop {
            let st = s.state();
            assert_eq!(st.elim.len(), st.prefix.len());
            assert!(st.steps_used <= cfg.budget());
            if let StepOutcome::Finished(r) = s.step().unwrap() {
                assert!(r.steps_used <= cfg.budget());
                break;
            }
        }
        assert!(s.step().is_err());
    }

    #[test]
    fn similarity_detector_steers_away() {
        // 0=sos 1=eos 2=a 3=b 4=z. z is likelier than b after a but far from the context.
        let vocab = Vocabulary::new(5, 0, 1, None, []).unwrap();
        let emb = crate::types::EmbeddingTable::new(
            2,
            vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![1.0, 0.1], vec![1.0, 0.2], vec![0.0, 1.0]],
        )
        .unwrap();
        let lm = TableLm::builder(vocab, emb, vec![0.0, 1.0, 0.0, 0.0, 0.0])
            .unwrap()
            .entry(vec![0], vec![0.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap()
            .entry(vec![0, 2], vec![0.0, 0.0, 0.0, 0.4, 0.6])
            .unwrap()
            .build();
        let ctx = TokenSeq::from(vec![2, 3]);
        let plain = coba_decode(&lm, &ctx, &coba_cfg(0.2, None)).unwrap();
        assert_eq!(plain.output.to_vec(), vec![2, 4]);
        let with_d = coba_decode(&lm, &ctx, &coba_cfg(0.2, Some(0.5))).unwrap();
        assert_eq!(with_d.output.to_vec(), vec![2, 3]);
        let fwd = with_d.trace.iter().find(|e| e.token == Some(3)).unwrap();
        assert!(fwd.min_dist.unwrap() <= 0.5);
    }

    #[test]
    fn nucleus_coba_detectors_off_match_nucleus() {
        let lm = fixtures::adversarial_table_lm(20);
        let cfg = DecodeConfig {
            strategy: Strategy::Nucleus,
            seed: 42,
            ..coba_cfg(0.0, None)
        };
        let a = coba_decode(&lm, &TokenSeq::new(), &cfg).unwrap();
        let b = nucleus_decode(&lm, &TokenSeq::new(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn requires_detector_config() {
        let lm = fixtures::fig1_table_lm();
        let cfg = DecodeConfig::default();
        assert!(coba_decode(&lm, &TokenSeq::new(), &cfg).is_err());
    }

    #[test]
    fn cad_applies_before_detection() {
        // Conditional row after "a": b 0.3, c 0.7; unconditional: b 0.05, c 0.95.
        // CAD with alpha 1 gives b ~0.78, so the detector sees b above 0.5.
        let vocab = Vocabulary::new(5, 0, 1, None, []).unwrap();
        let lm = TableLm::builder(vocab, fixtures::one_hot(5), vec![0.0, 1.0, 0.0, 0.0, 0.0])
            .unwrap()
            .entry(vec![0], vec![0.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap()
            .entry(vec![0, 2], vec![0.0, 0.0, 0.0, 0.3, 0.7])
            .unwrap()
            .unconditional_entry(vec![0], vec![0.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap()
            .unconditional_entry(vec![0, 2], vec![0.0, 0.0, 0.0, 0.05, 0.95])
            .unwrap()
            .unconditional_entry(vec![0, 2, 3], vec![0.0, 1.0, 0.0, 0.0, 0.0])
            .unwrap()
            .unconditional_entry(vec![0, 2, 4], vec![0.0, 1.0, 0.0, 0.0, 0.0])
            .unwrap()
            .build();
        let cfg = DecodeConfig {
            cad: Some(CadConfig { alpha: 1.0 }),
            ..coba_cfg(0.5, None)
        };
        let r = coba_decode(&lm, &TokenSeq::new(), &cfg).unwrap();
        assert_eq!(r.output.to_vec(), vec![2, 3]);
        assert!((r.trace[1].prob.unwrap() - 1.8 / (1.8 + 0.49 / 0.95)).abs() < 1e-9);
    }
}
