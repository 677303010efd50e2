//! Deterministic models used by tests, the acceptance suite and `coba fixture-gen`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::Result;
use crate::lm::{LmProvider, TableLm};
use crate::types::{
    DistributionKind, EmbeddingTable, NextTokenDistribution, TokenId, TokenSeq, Vocabulary,
};

/// Token ids of the "I live in / I live with" table.
#[derive(Debug, Clone, Copy)]
pub struct Fig1Words {
    pub sos: TokenId,
    pub eos: TokenId,
    pub i: TokenId,
    pub live: TokenId,
    pub in_: TokenId,
    pub with: TokenId,
    pub my: TokenId,
    pub dog: TokenId,
    pub paris: TokenId,
    pub london: TokenId,
    pub rome: TokenId,
    pub tokyo: TokenId,
}

impl Fig1Words {
    pub const WORDS: [&'static str; 12] = [
        "<s>", "</s>", "I", "live", "in", "with", "my", "dog", "Paris", "London", "Rome", "Tokyo",
    ];

    pub fn new() -> Self {
        Self {
            sos: 0,
            eos: 1,
            i: 2,
            live: 3,
            in_: 4,
            with: 5,
            my: 6,
            dog: 7,
            paris: 8,
            london: 9,
            rome: 10,
            tokyo: 11,
        }
    }
}

impl Default for Fig1Words {
    fn default() -> Self {
        Self::new()
    }
}

/// "I live" continues with "in" (0.4) ahead of "with" (0.3), but every token
/// after "I live in" is below 0.15, while "I live with" leads to "my dog".
pub fn fig1_table_lm() -> TableLm {
    let w = Fig1Words::new();
    let n = Fig1Words::WORDS.len();
    let display: BTreeMap<TokenId, String> = Fig1Words::WORDS
        .iter()
        .enumerate()
        .map(|(i, s)| (i as TokenId, s.to_string()))
        .collect();
    let vocab = Vocabulary::new(n, w.sos, w.eos, None, [])
        .and_then(|v| v.with_display(display))
        .expect("static vocabulary");
    let emb = one_hot(n);
    let sparse = |listed: &[(TokenId, f64)]| {
        crate::lm::table::ProbSpec::Sparse { sparse: listed.to_vec() }
            .expand(n)
            .expect("static row")
    };
    let p = |ids: &[TokenId]| TokenSeq::from(ids);
    TableLm::builder(vocab, emb, sparse(&[(w.eos, 0.9)]))
        .and_then(|b| b.entry(p(&[w.sos]), sparse(&[(w.i, 0.9)])))
        .and_then(|b| b.entry(p(&[w.sos, w.i]), sparse(&[(w.live, 0.9)])))
        .and_then(|b| b.entry(p(&[w.sos, w.i, w.live]), sparse(&[(w.in_, 0.4), (w.with, 0.3)])))
        .and_then(|b| {
            b.entry(
                p(&[w.sos, w.i, w.live, w.in_]),
                sparse(&[(w.paris, 0.15), (w.london, 0.14), (w.rome, 0.13), (w.tokyo, 0.12)]),
            )
        })
        .and_then(|b| b.entry(p(&[w.sos, w.i, w.live, w.in_, w.paris]), sparse(&[(w.eos, 0.9)])))
        .and_then(|b| b.entry(p(&[w.sos, w.i, w.live, w.with]), sparse(&[(w.my, 0.6)])))
        .and_then(|b| b.entry(p(&[w.sos, w.i, w.live, w.with, w.my]), sparse(&[(w.dog, 0.7)])))
        .and_then(|b| {
            b.entry(p(&[w.sos, w.i, w.live, w.with, w.my, w.dog]), sparse(&[(w.eos, 0.9)]))
        })
        .expect("static table")
        .build()
}

/// Every row is uniform over the non-SOS tokens, so nothing clears `delta > 1/(size-1)`.
pub fn adversarial_table_lm(size: usize) -> TableLm {
    let vocab = Vocabulary::new(size, 0, 1, None, []).expect("size >= 2");
    let mut row = vec![1.0 / (size - 1) as f64; size];
    row[0] = 0.0;
    TableLm::builder(vocab, one_hot(size), row)
        .expect("uniform row")
        .build()
}

/// Random table over a small vocabulary (`sos = 0`, `eos = 1`).
///
/// Weights are drawn from a coarse grid so rows contain ties and zeros.
/// Every prefix up to depth 2 gets its own row, plus random deeper prefixes.
pub fn random_table_lm<R: Rng>(rng: &mut R, size: usize, max_depth: usize) -> TableLm {
    assert!(size >= 3);
    let vocab = Vocabulary::new(size, 0, 1, None, []).expect("size >= 3");
    let row = |rng: &mut R| -> Vec<f64> {
        const GRID: [f64; 7] = [0.0, 0.0, 1.0, 1.0, 2.0, 3.0, 6.0];
        loop {
            let w: Vec<f64> = (0..size).map(|_| GRID[rng.gen_range(0..GRID.len())]).collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                return w.into_iter().map(|x| x / total).collect();
            }
        }
    };
    let default = row(rng);
    let mut builder = TableLm::builder(vocab, one_hot(size), default).expect("valid row");

    let words: Vec<TokenId> = (0..size as TokenId).filter(|&t| t != 0).collect();
    let mut frontier = vec![vec![0 as TokenId]];
    let mut prefixes = frontier.clone();
    for _ in 0..2.min(max_depth) {
        frontier = frontier
            .iter()
            .flat_map(|p| {
                words.iter().filter(|&&t| t != 1).map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
        prefixes.extend(frontier.iter().cloned());
    }
    for _ in 0..(4 * size) {
        let depth = rng.gen_range(1..=max_depth.max(1));
        let mut p = vec![0 as TokenId];
        for _ in 0..depth {
            p.push(words[rng.gen_range(0..words.len())]);
        }
        prefixes.push(p);
    }
    for p in prefixes {
        let r = row(rng);
        builder = builder.entry(p, r).expect("valid row");
    }
    builder.build()
}

/// Puts all mass on the last prefix token.
#[derive(Debug, Clone)]
pub struct EchoLm {
    vocab: Vocabulary,
    emb: EmbeddingTable,
}

impl EchoLm {
    pub fn new(size: usize) -> Result<Self> {
        Ok(Self {
            vocab: Vocabulary::new(size, 0, 1, None, [])?,
            emb: one_hot(size),
        })
    }
}

impl LmProvider for EchoLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn embeddings(&self) -> &EmbeddingTable {
        &self.emb
    }

    fn next_distribution(
        &self,
        _context: &TokenSeq,
        prefix: &TokenSeq,
        conditioned: bool,
    ) -> Result<NextTokenDistribution> {
        let last = prefix.last().unwrap_or(self.vocab.sos_id());
        let kind = if conditioned {
            DistributionKind::Conditional
        } else {
            DistributionKind::Unconditional
        };
        NextTokenDistribution::delta(self.vocab.size(), last, kind)
    }
}

pub fn one_hot(n: usize) -> EmbeddingTable {
    let mut data = vec![0.0; n * n];
    (0..n).for_each(|i| data[i * n + i] = 1.0);
    EmbeddingTable::from_flat(n, data).expect("one-hot rows are non-zero")
}
