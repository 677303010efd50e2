use super::{
    check_inputs, excluded_token, nucleus_set, sample_weighted, step_distribution, DecodeConfig,
    DecodeResult, EventKind, Strategy, Termination, Trace,
};
use crate::error::Result;
use crate::lm::LmProvider;
use crate::types::{NextTokenDistribution, TokenId, TokenSeq};

/// Argmax decoding; ties go to the smaller id. Ignores `cfg.coba` and `cfg.strategy`.
pub fn greedy_decode(lm: &dyn LmProvider, context: &TokenSeq, cfg: &DecodeConfig) -> Result<DecodeResult> {
    check_inputs(lm, context, cfg)?;
    let sos = TokenSeq::from(vec![lm.vocabulary().sos_id()]);
    run(lm, context, cfg, sos, &mut |dist, excluded| argmax_excluding(dist, excluded))
}

/// Top-p sampling with the session generator. Ignores `cfg.coba` and `cfg.strategy`.
pub fn nucleus_decode(lm: &dyn LmProvider, context: &TokenSeq, cfg: &DecodeConfig) -> Result<DecodeResult> {
    check_inputs(lm, context, cfg)?;
    let mut rng = cfg.rng();
    let sos = TokenSeq::from(vec![lm.vocabulary().sos_id()]);
    run(lm, context, cfg, sos, &mut |dist, _| {
        // Excluded tokens carry zero mass after masking, so never enter the nucleus.
        let set = nucleus_set(dist, cfg.top_p);
        sample_weighted(&set, &mut rng).expect("non-empty nucleus")
    })
}

/// Dispatches on `cfg.strategy`.
pub fn baseline_decode(lm: &dyn LmProvider, context: &TokenSeq, cfg: &DecodeConfig) -> Result<DecodeResult> {
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(lm, context, cfg),
        Strategy::Nucleus => nucleus_decode(lm, context, cfg),
    }
}

/// Greedy continuation of an existing prefix (which starts with SOS).
pub(crate) fn greedy_continue(
    lm: &dyn LmProvider,
    context: &TokenSeq,
    cfg: &DecodeConfig,
    prefix: TokenSeq,
) -> Result<DecodeResult> {
    run(lm, context, cfg, prefix, &mut |dist, excluded| argmax_excluding(dist, excluded))
}

pub(crate) fn argmax_excluding(dist: &NextTokenDistribution, excluded: Option<TokenId>) -> TokenId {
    let mut best: Option<(TokenId, f64)> = None;
    for (i, &p) in dist.probs().iter().enumerate() {
        let id = i as TokenId;
        if Some(id) == excluded {
            continue;
        }
        if best.is_none_or(|(_, bp)| p > bp) {
            best = Some((id, p));
        }
    }
    best.expect("vocabulary has a non-excluded token").0
}

fn run<F>(
    lm: &dyn LmProvider,
    context: &TokenSeq,
    cfg: &DecodeConfig,
    mut prefix: TokenSeq,
    pick: &mut F,
) -> Result<DecodeResult>
where
    F: FnMut(&NextTokenDistribution, Option<TokenId>) -> TokenId,
{
    let eos = lm.vocabulary().eos_id();
    let mut trace = Trace::default();
    let mut steps = 0;
    let termination = loop {
        let slot = prefix.len() - 1;
        if slot >= cfg.max_len {
            trace.push(EventKind::MaxLenStop, slot, None, None, None);
            break Termination::MaxLen;
        }
        let dist = step_distribution(lm, context, &prefix, cfg)?;
        let token = pick(&dist, excluded_token(slot, cfg, eos));
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, Fig1Words};
    use crate::lm::TableLm;
    use crate::types::Vocabulary;

    fn cfg() -> DecodeConfig {
        DecodeConfig {
            max_len: 10,
            ..DecodeConfig::default()
        }
    }

    #[test]
    fn fig1_greedy_takes_in_branch() {
        let lm = fixtures::fig1_table_lm();
        let w = Fig1Words::new();
        let r = greedy_decode(&lm, &TokenSeq::new(), &cfg()).unwrap();
        assert_eq!(r.output.to_vec(), vec![w.i, w.live, w.in_, w.paris]);
        assert_eq!(r.termination, Termination::Eos);
        assert_eq!(r.steps_used, 5);
        assert_eq!(lm.vocabulary().render(&r.output), "I live in Paris");
    }

    #[test]
    fn forced_path() {
        // 0=sos 1=eos 2,3,4: path 3 -> 4 -> 2 -> eos
        let vocab = Vocabulary::new(5, 0, 1, None, []).unwrap();
        let delta = |t: usize| {
            let mut v = vec![0.0; 5];
            v[t] = 1.0;
            v
        };
        let lm = TableLm::builder(vocab, fixtures::one_hot(5), delta(1))
            .unwrap()
            .entry(vec![0], delta(3))
            .unwrap()
            .entry(vec![0, 3], delta(4))
            .unwrap()
            .entry(vec![0, 3, 4], delta(2))
            .unwrap()
            .build();
        let r = greedy_decode(&lm, &TokenSeq::new(), &cfg()).unwrap();
        assert_eq!(r.output.to_vec(), vec![3, 4, 2]);
    }

    #[test]
    fn eos_suppressed_before_min_len() {
        // All mass on EOS everywhere: min_len tokens must still be produced.
        let vocab = Vocabulary::new(4, 0, 1, None, []).unwrap();
        let lm = TableLm::builder(vocab, fixtures::one_hot(4), vec![0.0, 1.0, 0.0, 0.0])
            .unwrap()
            .build();
        let r = greedy_decode(&lm, &TokenSeq::new(), &cfg()).unwrap();
        // Masked rows are uniform over {sos, 2, 3}: ties go to the smallest id.
        assert_eq!(r.output.len(), 2);
        assert_eq!(r.output.to_vec(), vec![0, 0]);
        assert_eq!(r.termination, Termination::Eos);

        // Next-best token when EOS dominates but is not alone.
        let lm = TableLm::builder(
            Vocabulary::new(4, 0, 1, None, []).unwrap(),
            fixtures::one_hot(4),
            vec![0.0, 0.7, 0.1, 0.2],
        )
        .unwrap()
        .build();
        let r = greedy_decode(&lm, &TokenSeq::new(), &cfg()).unwrap();
        assert_eq!(r.output.to_vec(), vec![3, 3]);
    }

    #[test]
    fn max_len_stop() {
        let lm = fixtures::EchoLm::new(6).unwrap();
        let c = DecodeConfig { max_len: 4, ..cfg() };
        let r = greedy_decode(&lm, &TokenSeq::new(), &c).unwrap();
        assert_eq!(r.output.len(), 4);
        assert_eq!(r.termination, Termination::MaxLen);
        assert_eq!(r.trace.last().unwrap().kind, EventKind::MaxLenStop);
    }

    #[test]
    fn nucleus_is_seed_deterministic() {
        let lm = fixtures::adversarial_table_lm(16);
        let c = DecodeConfig { max_len: 12, strategy: Strategy::Nucleus, seed: 9, ..cfg() };
        let a = nucleus_decode(&lm, &TokenSeq::new(), &c).unwrap();
        let b = nucleus_decode(&lm, &TokenSeq::new(), &c).unwrap();
        assert_eq!(a, b);
        let other = nucleus_decode(&lm, &TokenSeq::new(), &DecodeConfig { seed: 10, ..c }).unwrap();
        assert_ne!(a.output, other.output);
    }
}
