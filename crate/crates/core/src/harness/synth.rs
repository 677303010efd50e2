//! Seeded corpora for the synthetic n-gram model.
//!
//! Each document is a walk through a small per-document Markov chain over
//! word ids. Some chain states fan out to many successors, so the context
//! model is unsure there and the memory component can win the argmax.

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::lm::NGramSpec;
use crate::types::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusSpec {
    pub docs: usize,
    pub doc_len: usize,
    /// Distinct word types per document.
    pub types: usize,
    /// Probability that a chain state fans out to `hub_fanout` successors.
    pub hub_rate: f64,
    pub hub_fanout: usize,
    /// Successors of every other state.
    pub calm_fanout: usize,
    /// Leading document tokens used as the reference summary.
    pub reference_len: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            docs: 200,
            doc_len: 1500,
            types: 12,
            hub_rate: 0.2,
            hub_fanout: 8,
            calm_fanout: 2,
            reference_len: 12,
            seed: 11,
        }
    }
}

/// A Markov chain over word ids: `next[i]` lists the successor indices of state `i`.
struct Chain {
    words: Vec<TokenId>,
    next: Vec<Vec<usize>>,
    hub: Vec<bool>,
}

impl Chain {
    fn random<R: Rng>(rng: &mut R, lm: &NGramSpec, types: usize, hub_rate: f64, fanout: (usize, usize)) -> Self {
        let (hub_fanout, calm_fanout) = fanout;
        let words: Vec<TokenId> = lm.word_ids().choose_multiple(rng, types);
        let hub: Vec<bool> = (0..types).map(|i| i > 0 && rng.gen_bool(hub_rate)).collect();
        let next = hub
            .iter()
            .map(|&h| (0..types).choose_multiple(rng, if h { hub_fanout } else { calm_fanout }.min(types)))
            .collect();
        Self { words, next, hub }
    }

    /// Starts from a state that is not a hub. Each step leaves by one of the
    /// least used edges of the current state, so a state's successor counts
    /// differ by at most one.
    fn walk<R: Rng>(&self, rng: &mut R, len: usize) -> Vec<TokenId> {
        let calm: Vec<usize> = (0..self.words.len()).filter(|&i| !self.hub[i]).collect();
        let mut state = *calm.choose(rng).expect("state 0 is never a hub");
        let mut used: Vec<Vec<usize>> = self.next.iter().map(|n| vec![0; n.len()]).collect();
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(self.words[state]);
            let counts = &mut used[state];
            let least = *counts.iter().min().expect("every state has a successor");
            let edge = (0..counts.len())
                .filter(|&e| counts[e] == least)
                .choose(rng)
                .expect("some edge is least used");
            counts[edge] += 1;
            state = self.next[state][edge];
        }
        out
    }
}

fn check_lm(lm: &NGramSpec, types: usize) -> Result<()> {
    lm.validate()?;
    if lm.word_ids().count() < types {
        return Err(Error::contract(format!("vocabulary has fewer than {types} word ids")));
    }
    Ok(())
}

/// Documents with a lead reference, for `coba run`.
pub fn synthetic_corpus(spec: &SyntheticCorpusSpec, lm: &NGramSpec) -> Result<Vec<CorpusRecord>> {
    check_lm(lm, spec.types)?;
    if spec.types == 0 || spec.doc_len == 0 || !(0.0..=1.0).contains(&spec.hub_rate) || spec.hub_fanout == 0 || spec.calm_fanout == 0 {
        return Err(Error::contract("invalid synthetic corpus spec"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.docs)
        .map(|i| {
            let chain = Chain::random(&mut rng, lm, spec.types, spec.hub_rate, (spec.hub_fanout, spec.calm_fanout));
            let doc = chain.walk(&mut rng, spec.doc_len);
            let mut rec = CorpusRecord::from_ids(format!("syn-{i:05}"), doc.clone());
            rec.reference = Some(doc[..spec.reference_len.min(doc.len())].to_vec().into());
            rec
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileCorpusSpec {
    pub spans: usize,
    pub doc_len: usize,
    pub types: usize,
    pub window: usize,
    pub seed: u64,
}

impl Default for ProfileCorpusSpec {
    fn default() -> Self {
        Self {
            spans: 5000,
            doc_len: 60,
            types: 16,
            window: 5,
            seed: 23,
        }
    }
}

/// Records whose summary copies the document and then inserts one
/// memory-only token; the insertion point is the annotated span start.
pub fn profile_corpus(spec: &ProfileCorpusSpec, lm: &NGramSpec) -> Result<Vec<CorpusRecord>> {
    check_lm(lm, spec.types)?;
    if spec.doc_len < 2 * spec.window + 2 || lm.memory_tokens == 0 {
        return Err(Error::contract("documents too short for the window, or no memory tokens"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let memory: Vec<TokenId> = lm.memory_ids().collect();
    Ok((0..spec.spans)
        .map(|i| {
            let chain = Chain::random(&mut rng, lm, spec.types, 0.0, (1, 2));
            let doc = chain.walk(&mut rng, spec.doc_len);
            // The summary follows the document from its start, so every
            // copied token is predicted from its true history.
            let start = rng.gen_range(spec.window..=spec.doc_len - spec.window - 1);
            let mut summary = doc[..start].to_vec();
            summary.push(*memory.choose(&mut rng).expect("memory ids"));
            summary.extend_from_slice(&doc[start..start + spec.window]);
            let mut rec = CorpusRecord::from_ids(format!("span-{i:05}"), doc);
            rec.summary = Some(summary.into());
            rec.annotations = Some(vec![start]);
            rec
        })
        .collect())
}
