//! Language-model providers.
//!
//! Every decoder talks to a model through [`LmProvider`]. Two deterministic
//! in-process models ship with the crate ([`TableLm`], [`NGramLm`]) and
//! [`RemoteLm`] speaks the HTTP wire protocol in [`protocol`].

pub mod ngram;
pub mod protocol;
pub mod remote;
pub mod server;
pub mod table;

use std::sync::Arc;

pub use ngram::{NGramLm, NGramSpec};
pub use remote::{RemoteLm, RemoteOptions};
pub use table::{TableLm, TableLmFile};

use crate::error::Result;
use crate::types::{EmbeddingTable, NextTokenDistribution, TokenSeq, Vocabulary};

/// An autoregressive model exposing next-token probabilities.
///
/// `prefix` always starts with the vocabulary's `sos_id`. With
/// `conditioned == false` the provider must drop the context and return its
/// unconditional next-token distribution.
pub trait LmProvider: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn embeddings(&self) -> &EmbeddingTable;

    fn next_distribution(
        &self,
        context: &TokenSeq,
        prefix: &TokenSeq,
        conditioned: bool,
    ) -> Result<NextTokenDistribution>;

    fn max_length_hint(&self) -> Option<usize> {
        None
    }
}

impl<T: LmProvider + ?Sized> LmProvider for Arc<T> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn embeddings(&self) -> &EmbeddingTable {
        (**self).embeddings()
    }

    fn next_distribution(
        &self,
        context: &TokenSeq,
        prefix: &TokenSeq,
        conditioned: bool,
    ) -> Result<NextTokenDistribution> {
        (**self).next_distribution(context, prefix, conditioned)
    }

    fn max_length_hint(&self) -> Option<usize> {
        (**self).max_length_hint()
    }
}

impl<T: LmProvider + ?Sized> LmProvider for &T {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn embeddings(&self) -> &EmbeddingTable {
        (**self).embeddings()
    }

    fn next_distribution(
        &self,
        context: &TokenSeq,
        prefix: &TokenSeq,
        conditioned: bool,
    ) -> Result<NextTokenDistribution> {
        (**self).next_distribution(context, prefix, conditioned)
    }

    fn max_length_hint(&self) -> Option<usize> {
        (**self).max_length_hint()
    }
}
