//! Context n-gram model mixed with a fixed "parametric memory" distribution.
//!
//! The context component is rebuilt from the document on every query, so a
//! token can only receive context mass if it occurs in the document. The
//! memory component ignores the document entirely; mixing it in with weight
//! `lambda` produces ungrounded tokens with a known origin, which is what the
//! synthetic hallucination benchmarks measure.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LmProvider;
use crate::error::{Error, Result};
use crate::types::{
    DistributionKind, EmbeddingTable, NextTokenDistribution, TokenId, TokenSeq, Vocabulary,
};

#[derive(Debug, Clone)]
pub struct NGramLm {
    vocab: Vocabulary,
    order: usize,
    lambda: f64,
    epsilon: f64,
    memory: NextTokenDistribution,
    embeddings: EmbeddingTable,
}

impl NGramLm {
    pub fn new(
        vocab: Vocabulary,
        order: usize,
        memory: NextTokenDistribution,
        lambda: f64,
        epsilon: f64,
        embeddings: EmbeddingTable,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::contract("n-gram order must be at least 1"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::contract(format!("mixing weight {lambda} outside [0, 1]")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::contract(format!("smoothing {epsilon} must be finite and >= 0")));
        }
        if memory.len() != vocab.size() {
            return Err(Error::contract("memory distribution does not match the vocabulary"));
        }
        embeddings.check_vocabulary(&vocab)?;
        Ok(Self {
            vocab,
            order,
            lambda,
            epsilon,
            memory,
            embeddings,
        })
    }

    /// Builds the seeded synthetic model described by `spec`.
    pub fn synthetic(spec: &NGramSpec) -> Result<Self> {
        spec.validate()?;
        let vocab = Vocabulary::new(spec.vocab_size, SYN_SOS, SYN_EOS, Some(SYN_PAD), [])?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let mut memory_ids: Vec<TokenId> = spec.memory_ids().collect();
        memory_ids.shuffle(&mut rng);
        let mut weights = vec![0.0; spec.vocab_size];
        let mut tail = 1.0;
        for (rank, &id) in memory_ids.iter().enumerate() {
            weights[id as usize] = if rank == 0 { spec.memory_peak } else { tail };
            if rank > 0 {
                tail *= 0.5;
            }
        }
        // Rescale the tail so the peak keeps exactly its configured mass.
        let tail_total: f64 = memory_ids.iter().skip(1).map(|&id| weights[id as usize]).sum();
        for &id in memory_ids.iter().skip(1) {
            weights[id as usize] *= (1.0 - spec.memory_peak) / tail_total;
        }
        if memory_ids.len() == 1 {
            weights[memory_ids[0] as usize] = 1.0;
        }
        let memory = NextTokenDistribution::normalized(weights, DistributionKind::Unconditional)?;

        let dim = spec.embedding_dim;
        let noise = Normal::new(0.0, spec.cluster_noise).map_err(|e| Error::contract(e.to_string()))?;
        let gauss = Normal::new(0.0, 1.0).expect("unit normal");
        let mut data = Vec::with_capacity(spec.vocab_size * dim);
        for id in 0..spec.vocab_size as TokenId {
            if spec.is_memory_only(id) {
                // Orthogonal to the context cluster axis.
                data.push(0.0);
                data.extend((1..dim).map(|_| gauss.sample(&mut rng)));
            } else if vocab.is_special(id) {
                data.extend((0..dim).map(|_| gauss.sample(&mut rng)));
            } else {
                data.push(1.0);
                data.extend((1..dim).map(|_| noise.sample(&mut rng)));
            }
        }
        let embeddings = EmbeddingTable::from_flat(dim, data)?;
        Self::new(vocab, spec.order, memory, spec.lambda, spec.epsilon, embeddings)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn memory(&self) -> &NextTokenDistribution {
        &self.memory
    }

    /// Context n-gram distribution before mixing, as unnormalized counts plus the support mask.
    fn context_counts(&self, context: &TokenSeq, prefix: &TokenSeq) -> (Vec<f64>, Vec<bool>) {
        let n = self.vocab.size();
        // The document is framed as SOS c_1 .. c_m EOS.
        let mut framed = Vec::with_capacity(context.len() + 2);
        framed.push(self.vocab.sos_id());
        framed.extend(context.iter());
        framed.push(self.vocab.eos_id());

        let mut attested = vec![false; n];
        framed.iter().for_each(|&id| attested[id as usize] = true);
        let mut support = vec![false; n];
        framed[1..].iter().for_each(|&id| support[id as usize] = true);

        // Tokens the document never contains are skipped when forming the history.
        let history: Vec<TokenId> = {
            let mut h: Vec<TokenId> = prefix
                .ids()
                .iter()
                .rev()
                .copied()
                .filter(|&id| attested[id as usize])
                .take(self.order - 1)
                .collect();
            h.reverse();
            h
        };

        let mut counts = vec![0.0; n];
        for k in (0..=history.len()).rev() {
            let h = &history[history.len() - k..];
            let mut total = 0.0;
            for i in k.max(1)..framed.len() {
                if &framed[i - k..i] == h {
                    counts[framed[i] as usize] += 1.0;
                    total += 1.0;
                }
            }
            if total > 0.0 {
                break;
            }
        }
        (counts, support)
    }
}

impl LmProvider for NGramLm {
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
        context.validate(&self.vocab)?;
        prefix.validate(&self.vocab)?;
        let n = self.vocab.size();
        let memory = self.memory.probs();
        let lambda = self.lambda;

        let mixed: Vec<f64> = if conditioned {
            let (mut counts, support) = self.context_counts(context, prefix);
            if self.epsilon > 0.0 {
                counts
                    .iter_mut()
                    .zip(&support)
                    .filter(|(_, &s)| s)
                    .for_each(|(c, _)| *c += self.epsilon);
            }
            let total: f64 = counts.iter().sum();
            counts
                .iter()
                .zip(memory)
                .map(|(c, m)| (1.0 - lambda) * c / total + lambda * m)
                .collect()
        } else {
            let u = 1.0 / n as f64;
            memory.iter().map(|m| (1.0 - lambda) * u + lambda * m).collect()
        };
        let kind = if conditioned {
            DistributionKind::Conditional
        } else {
            DistributionKind::Unconditional
        };
        NextTokenDistribution::normalized(mixed, kind)
    }
}

pub const SYN_PAD: TokenId = 0;
pub const SYN_SOS: TokenId = 1;
pub const SYN_EOS: TokenId = 2;
/// First id of the ordinary (document) vocabulary in synthetic models.
pub const SYN_FIRST_WORD: TokenId = 3;

/// Parameters of a seeded synthetic [`NGramLm`].
///
/// Ids `0..3` are pad/sos/eos, the last `memory_tokens` ids are memory-only,
/// everything in between is document vocabulary. Parses from `key=value`
/// pairs separated by commas, e.g. `vocab=256,lambda=0.3,seed=7`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NGramSpec {
    pub vocab_size: usize,
    pub order: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub memory_tokens: usize,
    /// Mass of the single most likely memory token.
    pub memory_peak: f64,
    pub embedding_dim: usize,
    pub cluster_noise: f64,
    pub seed: u64,
}

impl Default for NGramSpec {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            order: 2,
            lambda: 0.3,
            epsilon: 0.0,
            memory_tokens: 64,
            memory_peak: 0.66,
            embedding_dim: 16,
            cluster_noise: 0.1,
            seed: 7,
        }
    }
}

impl NGramSpec {
    pub fn validate(&self) -> Result<()> {
        if self.memory_tokens == 0 || self.vocab_size < SYN_FIRST_WORD as usize + self.memory_tokens + 1 {
            return Err(Error::contract(
                "synthetic vocabulary needs specials, at least one word and one memory token",
            ));
        }
        if !(0.0..=1.0).contains(&self.memory_peak) || self.embedding_dim < 2 {
            return Err(Error::contract("memory_peak must be in [0, 1] and embedding_dim >= 2"));
        }
        if !(self.cluster_noise > 0.0) {
            return Err(Error::contract("cluster_noise must be positive"));
        }
        Ok(())
    }

    pub fn first_memory_id(&self) -> TokenId {
        (self.vocab_size - self.memory_tokens) as TokenId
    }

    pub fn memory_ids(&self) -> impl Iterator<Item = TokenId> {
        self.first_memory_id()..self.vocab_size as TokenId
    }

    pub fn word_ids(&self) -> impl Iterator<Item = TokenId> {
        SYN_FIRST_WORD..self.first_memory_id()
    }

    pub fn is_memory_only(&self, id: TokenId) -> bool {
        id >= self.first_memory_id() && (id as usize) < self.vocab_size
    }
}

impl FromStr for NGramSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = NGramSpec::default();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("expected key=value, got {pair:?}")))?;
            fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
                value
                    .parse()
                    .map_err(|_| Error::parse(format!("invalid value for {key}: {value:?}")))
            }
            match key {
                "vocab" | "vocab_size" => spec.vocab_size = num(key, value)?,
                "order" | "n" => spec.order = num(key, value)?,
                "lambda" => spec.lambda = num(key, value)?,
                "epsilon" | "eps" => spec.epsilon = num(key, value)?,
                "memory_tokens" => spec.memory_tokens = num(key, value)?,
                "memory_peak" => spec.memory_peak = num(key, value)?,
                "dim" | "embedding_dim" => spec.embedding_dim = num(key, value)?,
                "cluster_noise" => spec.cluster_noise = num(key, value)?,
                "seed" => spec.seed = num(key, value)?,
                other => return Err(Error::parse(format!("unknown n-gram parameter {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::cosine_distance;

    /// Vocabulary 0=sos 1=eos 2=a 3=b 4=c, one-hot embeddings.
    fn abc(lambda: f64, memory: Vec<f64>, order: usize) -> NGramLm {
        let vocab = Vocabulary::new(5, 0, 1, None, []).unwrap();
        let mut rows = vec![vec![0.0; 5]; 5];
        (0..5).for_each(|i| rows[i][i] = 1.0);
        let memory = NextTokenDistribution::new(memory, DistributionKind::Unconditional).unwrap();
        NGramLm::new(vocab, order, memory, lambda, 0.0, EmbeddingTable::new(5, rows).unwrap())
            .unwrap()
    }

    #[test]
    fn bigram_counts_by_hand() {
        let lm = abc(0.0, vec![0.2; 5], 2);
        let ctx = TokenSeq::from(vec![2, 3, 2, 4]); // a b a c
        let d = lm.next_distribution(&ctx, &TokenSeq::from(vec![0, 2]), true).unwrap();
        assert_eq!(d.prob(3), 0.5);
        assert_eq!(d.prob(4), 0.5);
        assert_eq!(d.prob(2), 0.0);
    }

    #[test]
    fn lambda_one_is_memory() {
        let mem = vec![0.1, 0.2, 0.3, 0.15, 0.25];
        let lm = abc(1.0, mem.clone(), 2);
        for ctx in [vec![2, 3], vec![4, 4, 4], vec![]] {
            let d = lm
                .next_distribution(&TokenSeq::from(ctx), &TokenSeq::from(vec![0, 2]), true)
                .unwrap();
            for (a, b) in d.probs().iter().zip(&mem) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mixture_arithmetic() {
        // Four-token vocabulary: sos, eos, a, b. Context "a b" so b always follows a.
        let vocab = Vocabulary::new(4, 0, 1, None, []).unwrap();
        let rows = (0..4).map(|i| (0..4).map(|j| (i == j) as u8 as f64).collect()).collect();
        let memory = NextTokenDistribution::uniform(4, DistributionKind::Unconditional).unwrap();
        let lm = NGramLm::new(vocab, 2, memory, 0.5, 0.0, EmbeddingTable::new(4, rows).unwrap())
            .unwrap();
        let d = lm
            .next_distribution(&TokenSeq::from(vec![2, 3]), &TokenSeq::from(vec![0, 2]), true)
            .unwrap();
        assert!((d.prob(3) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn unconditional_drops_context() {
        let lm = abc(0.5, vec![0.0, 0.0, 1.0, 0.0, 0.0], 2);
        let a = lm.next_distribution(&TokenSeq::from(vec![3, 4]), &TokenSeq::from(vec![0]), false).unwrap();
        let b = lm.next_distribution(&TokenSeq::from(vec![2]), &TokenSeq::from(vec![0]), false).unwrap();
        assert_eq!(a.probs(), b.probs());
        assert!((a.prob(2) - 0.6).abs() < 1e-12);
        assert_eq!(a.kind(), DistributionKind::Unconditional);
    }

    #[test]
    fn document_start_and_backoff() {
        let lm = abc(0.0, vec![0.2; 5], 2);
        let ctx = TokenSeq::from(vec![3, 2, 4]);
        // Root continues with the first document token.
        let d = lm.next_distribution(&ctx, &TokenSeq::from(vec![0]), true).unwrap();
        assert_eq!(d.prob(3), 1.0);
        // The last token never occurs in the document: history skips it.
        let ctx = TokenSeq::from(vec![3, 2]);
        let d = lm.next_distribution(&ctx, &TokenSeq::from(vec![0, 3, 4]), true).unwrap();
        assert_eq!(d.prob(2), 1.0);
        // Unigram fallback when the bigram history is never followed.
        let lm1 = abc(0.0, vec![0.2; 5], 1);
        let d = lm1.next_distribution(&ctx, &TokenSeq::from(vec![0, 3]), true).unwrap();
        assert!((d.prob(3) - 1.0 / 3.0).abs() < 1e-12);
        assert!((d.prob(1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_embeddings_separate_memory_tokens() {
        let spec = NGramSpec::default();
        let lm = NGramLm::synthetic(&spec).unwrap();
        let emb = lm.embeddings();
        let w0 = SYN_FIRST_WORD;
        let m0 = spec.first_memory_id();
        assert!(cosine_distance(emb.row(w0), emb.row(w0 + 1)).unwrap() < 0.3);
        assert!(cosine_distance(emb.row(w0), emb.row(m0)).unwrap() > 0.6);
        let mem = lm.memory().probs();
        let top = mem.iter().cloned().fold(0.0, f64::max);
        assert!((top - spec.memory_peak).abs() < 1e-12);
        assert!(spec.word_ids().all(|id| mem[id as usize] == 0.0));
    }

    #[test]
    fn spec_parsing() {
        let s: NGramSpec = "vocab=128,lambda=0.25,seed=3,order=3".parse().unwrap();
        assert_eq!((s.vocab_size, s.order, s.seed), (128, 3, 3));
        assert_eq!(s.lambda, 0.25);
        assert!("vocab=abc".parse::<NGramSpec>().is_err());
        assert!("colour=3".parse::<NGramSpec>().is_err());
        assert!("vocab=10,memory_tokens=64".parse::<NGramSpec>().is_err());
    }

    #[test]
    fn synthetic_is_seed_deterministic() {
        let spec = NGramSpec::default();
        let a = NGramLm::synthetic(&spec).unwrap();
        let b = NGramLm::synthetic(&spec).unwrap();
        assert_eq!(a.embeddings(), b.embeddings());
        assert_eq!(a.memory(), b.memory());
    }
}
