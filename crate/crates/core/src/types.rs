//! Vocabulary, token sequences, next-token distributions and embedding tables.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Tolerance on the total mass of a [`NextTokenDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    sos_id: TokenId,
    eos_id: TokenId,
    pad_id: Option<TokenId>,
    special_ids: BTreeSet<TokenId>,
    #[serde(default)]
    display: BTreeMap<TokenId, String>,
}

impl Vocabulary {
    /// `extra_special` may repeat the sos/eos/pad ids; they are always marked special.
    pub fn new(
        size: usize,
        sos_id: TokenId,
        eos_id: TokenId,
        pad_id: Option<TokenId>,
        extra_special: impl IntoIterator<Item = TokenId>,
    ) -> Result<Self> {
        if size == 0 {
            return Err(Error::contract("vocabulary size must be positive"));
        }
        if sos_id == eos_id {
            return Err(Error::contract("sos_id and eos_id must differ"));
        }
        let mut special_ids: BTreeSet<TokenId> = extra_special.into_iter().collect();
        special_ids.insert(sos_id);
        special_ids.insert(eos_id);
        special_ids.extend(pad_id);
        if let Some(&bad) = special_ids.iter().find(|&&id| id as usize >= size) {
            return Err(Error::contract(format!(
                "special token id {bad} outside vocabulary of size {size}"
            )));
        }
        Ok(Self {
            size,
            sos_id,
            eos_id,
            pad_id,
            special_ids,
            display: BTreeMap::new(),
        })
    }

    pub fn with_display(mut self, display: BTreeMap<TokenId, String>) -> Result<Self> {
        if let Some(&bad) = display.keys().find(|&&id| id as usize >= self.size) {
            return Err(Error::contract(format!("display entry for out-of-range id {bad}")));
        }
        self.display = display;
        Ok(self)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sos_id(&self) -> TokenId {
        self.sos_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn pad_id(&self) -> Option<TokenId> {
        self.pad_id
    }

    pub fn special_ids(&self) -> &BTreeSet<TokenId> {
        &self.special_ids
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.size
    }

    pub fn display(&self) -> &BTreeMap<TokenId, String> {
        &self.display
    }

    /// Looks up a surface string in the display map. Linear in the map size.
    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.display
            .iter()
            .find_map(|(&id, w)| (w == word).then_some(id))
    }

    /// Display-only rendering; unknown ids render as `<id>`.
    pub fn render(&self, seq: &TokenSeq) -> String {
        seq.iter()
            .map(|id| match self.display.get(&id) {
                Some(word) => word.clone(),
                None => format!("<{id}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Whitespace tokenization against the display map.
    pub fn encode_words(&self, text: &str) -> Result<TokenSeq> {
        let ids = text
            .split_whitespace()
            .map(|w| {
                self.id_of(w)
                    .ok_or_else(|| Error::domain(format!("word {w:?} is not in the vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenSeq::from(ids))
    }
}

/// Ordered token ids. Range checks happen against a [`Vocabulary`] via [`TokenSeq::validate`].
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(Vec<TokenId>);

impl TokenSeq {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn checked(ids: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        let seq = Self(ids);
        seq.validate(vocab)?;
        Ok(seq)
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        match self.0.iter().find(|&&id| !vocab.contains(id)) {
            Some(bad) => Err(Error::domain(format!(
                "token id {bad} outside vocabulary of size {}",
                vocab.size()
            ))),
            None => Ok(()),
        }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn pop(&mut self) -> Option<TokenId> {
        self.0.pop()
    }

    pub fn extend_from(&mut self, ids: &[TokenId]) {
        self.0.extend_from_slice(ids);
    }

    pub fn truncate(&mut self, len: usize) {
        self.0.truncate(len);
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.0.iter().copied()
    }

    pub fn into_vec(self) -> Vec<TokenId> {
        self.0
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

impl From<&[TokenId]> for TokenSeq {
    fn from(ids: &[TokenId]) -> Self {
        Self(ids.to_vec())
    }
}

impl FromIterator<TokenId> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    Conditional,
    Unconditional,
}

/// A probability vector over the vocabulary for one decoding step.
///
/// The backing storage is shared, so cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    probs: Arc<[f64]>,
    kind: DistributionKind,
}

impl NextTokenDistribution {
    /// Rejects negative, non-finite or un-normalized vectors. Never renormalizes.
    pub fn new(probs: impl Into<Arc<[f64]>>, kind: DistributionKind) -> Result<Self> {
        let probs = probs.into();
        Self::check(&probs)?;
        Ok(Self { probs, kind })
    }

    /// Scales a non-negative weight vector to unit mass.
    pub fn normalized(mut weights: Vec<f64>, kind: DistributionKind) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::domain("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::domain("weights have zero total mass"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights, kind)
    }

    pub fn uniform(size: usize, kind: DistributionKind) -> Result<Self> {
        if size == 0 {
            return Err(Error::contract("uniform distribution over an empty vocabulary"));
        }
        Self::new(vec![1.0 / size as f64; size], kind)
    }

    pub fn delta(size: usize, token: TokenId, kind: DistributionKind) -> Result<Self> {
        if token as usize >= size {
            return Err(Error::contract(format!("delta on out-of-range token {token}")));
        }
        let mut probs = vec![0.0; size];
        probs[token as usize] = 1.0;
        Self::new(probs, kind)
    }

    fn check(probs: &[f64]) -> Result<()> {
        if probs.is_empty() {
            return Err(Error::domain("empty probability vector"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::domain(format!("invalid probability {p} at index {i}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::domain(format!(
                "probabilities sum to {total}, expected 1 within {NORMALIZATION_TOLERANCE}"
            )));
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs[id as usize]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    /// Highest-probability token; ties go to the smallest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0usize;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// The same probabilities under another kind, without re-validating.
    pub(crate) fn with_kind(&self, kind: DistributionKind) -> Self {
        Self {
            probs: Arc::clone(&self.probs),
            kind,
        }
    }
}

/// Sum of per-step log-probabilities of `seq`. Returns `-inf` if any step has probability zero.
pub fn sequence_logprob(dists: &[NextTokenDistribution], seq: &TokenSeq) -> Result<f64> {
    if dists.len() != seq.len() {
        return Err(Error::contract(format!(
            "{} distributions for a sequence of length {}",
            dists.len(),
            seq.len()
        )));
    }
    dists
        .iter()
        .zip(seq.iter())
        .map(|(d, id)| {
            if id as usize >= d.len() {
                Err(Error::contract(format!("token {id} outside distribution support")))
            } else {
                Ok(d.prob(id).ln())
            }
        })
        .sum()
}

/// `1 - cos(u, v)`, in `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::contract("cosine distance of empty vectors"));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::domain("cosine distance is undefined for a zero vector"));
    }
    Ok(unit_cosine_distance(dot(u, v) / (nu * nv)))
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

// Rounding can push |cos| marginally past 1.
pub(crate) fn unit_cosine_distance(cos: f64) -> f64 {
    (1.0 - cos.clamp(-1.0, 1.0)).clamp(0.0, 2.0)
}

/// One embedding row per vocabulary entry. Rows are stored together with their norms.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::contract("embedding dimension must be positive"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::contract(format!(
                    "embedding row {i} has length {}, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, data)
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::contract("flat embedding data is not a whole number of rows"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("embedding contains a non-finite value"));
        }
        let norms: Vec<f64> = data.chunks_exact(dim).map(norm).collect();
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::domain(format!("embedding row {i} is the zero vector")));
        }
        Ok(Self { dim, data, norms })
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if self.rows() != vocab.size() {
            return Err(Error::contract(format!(
                "embedding table has {} rows, vocabulary has {} entries",
                self.rows(),
                vocab.size()
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.norms.len()
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn norm_of(&self, id: TokenId) -> f64 {
        self.norms[id as usize]
    }

    /// Cosine distance between two rows, using the cached norms.
    pub fn distance(&self, a: TokenId, b: TokenId) -> f64 {
        let cos = dot(self.row(a), self.row(b)) / (self.norm_of(a) * self.norm_of(b));
        unit_cosine_distance(cos)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cond(p: Vec<f64>) -> NextTokenDistribution {
        NextTokenDistribution::new(p, DistributionKind::Conditional).unwrap()
    }

    #[test]
    fn vocabulary_rejects_bad_specials() {
        assert!(Vocabulary::new(4, 1, 1, None, []).is_err());
        assert!(Vocabulary::new(4, 0, 4, None, []).is_err());
        assert!(Vocabulary::new(4, 0, 1, Some(7), []).is_err());
        assert!(Vocabulary::new(4, 0, 1, None, [9]).is_err());
        let v = Vocabulary::new(4, 0, 1, Some(2), []).unwrap();
        assert!(v.is_special(2) && v.is_special(0) && !v.is_special(3));
    }

    #[test]
    fn token_seq_range_check() {
        let v = Vocabulary::new(4, 0, 1, None, []).unwrap();
        assert!(TokenSeq::checked(vec![], &v).is_ok());
        assert!(TokenSeq::checked(vec![0, 3], &v).is_ok());
        assert!(TokenSeq::checked(vec![0, 4], &v).is_err());
    }

    #[test]
    fn distribution_is_validated_not_renormalized() {
        assert!(NextTokenDistribution::new(vec![0.5, 0.3], DistributionKind::Conditional).is_err());
        assert!(NextTokenDistribution::new(vec![1.2, -0.2], DistributionKind::Conditional).is_err());
        assert!(NextTokenDistribution::new(vec![f64::NAN, 1.0], DistributionKind::Conditional).is_err());
        let d = cond(vec![0.5, 0.3, 0.2]);
        assert_eq!(d.probs(), &[0.5, 0.3, 0.2]);
    }

    #[test]
    fn logprob_uniform_two_steps() {
        let u = NextTokenDistribution::uniform(4, DistributionKind::Conditional).unwrap();
        let lp = sequence_logprob(&[u.clone(), u], &TokenSeq::from(vec![0, 3])).unwrap();
        assert_relative_eq!(lp, -2.7725887, epsilon = 1e-7);
    }

    #[test]
    fn logprob_certainty_and_arithmetic() {
        let d = NextTokenDistribution::delta(3, 2, DistributionKind::Conditional).unwrap();
        assert_eq!(sequence_logprob(&[d], &TokenSeq::from(vec![2])).unwrap(), 0.0);
        let d = cond(vec![0.5, 0.3, 0.2]);
        let lp = sequence_logprob(&[d], &TokenSeq::from(vec![1])).unwrap();
        assert_relative_eq!(lp, -1.2039728, epsilon = 1e-7);
    }

    #[test]
    fn logprob_zero_probability_is_neg_inf() {
        let d = NextTokenDistribution::delta(3, 2, DistributionKind::Conditional).unwrap();
        let lp = sequence_logprob(&[d], &TokenSeq::from(vec![0])).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn logprob_length_mismatch() {
        let d = NextTokenDistribution::delta(3, 2, DistributionKind::Conditional).unwrap();
        let err = sequence_logprob(&[d], &TokenSeq::from(vec![0, 1])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_distance(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_relative_eq!(
            cosine_distance(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.2928932,
            epsilon = 1e-7
        );
        assert_relative_eq!(cosine_distance(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_distance(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            cosine_distance(&[1.0], &[1.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn embedding_table_rejects_zero_rows() {
        let err = EmbeddingTable::new(2, vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(EmbeddingTable::new(2, vec![vec![1.0]]).is_err());
        let t = EmbeddingTable::new(2, vec![vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_relative_eq!(t.distance(0, 1), 0.2928932, epsilon = 1e-7);
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, dim).prop_filter("non-zero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            (u, v) in (1usize..8).prop_flat_map(|d| (nonzero_vec(d), nonzero_vec(d))),
            a in 0.01f64..100.0,
        ) {
            let d = cosine_distance(&u, &v).unwrap();
            prop_assert!((0.0..=2.0).contains(&d));
            prop_assert!((d - cosine_distance(&v, &u).unwrap()).abs() <= 1e-9);
            let scaled: Vec<f64> = u.iter().map(|x| x * a).collect();
            prop_assert!((d - cosine_distance(&scaled, &v).unwrap()).abs() <= 1e-9);
        }
    }
}
