//! JSON wire protocol between the decoder and an out-of-process model.
//!
//! ```text
//! GET  /v1/meta        -> MetaResponse
//! POST /v1/logprobs    LogprobsRequest   -> LogprobsResponse
//! POST /v1/embeddings  EmbeddingsRequest -> EmbeddingsResponse
//! ```
//!
//! Malformed bodies get HTTP 400, out-of-range ids 422.

use serde::{Deserialize, Serialize};

use crate::error::LmError;
use crate::types::{DistributionKind, NextTokenDistribution, TokenId};

pub const META_PATH: &str = "/v1/meta";
pub const LOGPROBS_PATH: &str = "/v1/logprobs";
pub const EMBEDDINGS_PATH: &str = "/v1/embeddings";

/// Allowed deviation of `sum(exp(logprobs))` from 1.
pub const PROTOCOL_TOLERANCE: f64 = 1e-4;

/// Log-probability sent for tokens with probability zero (JSON has no -inf).
pub const LOGPROB_FLOOR: f64 = -1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub vocab_size: usize,
    pub sos_id: TokenId,
    pub eos_id: TokenId,
    pub special_ids: Vec<TokenId>,
    pub embedding_dim: usize,
    /// Extension: free-form description of the server's prompt template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobsRequest {
    pub context: Vec<TokenId>,
    pub prefix: Vec<TokenId>,
    pub conditioned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobsResponse {
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsRequest {
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingsResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub fn encode_logprobs(dist: &NextTokenDistribution) -> LogprobsResponse {
    LogprobsResponse {
        logprobs: dist
            .probs()
            .iter()
            .map(|&p| if p > 0.0 { p.ln().max(LOGPROB_FLOOR) } else { LOGPROB_FLOOR })
            .collect(),
    }
}

/// Checks a logprob vector against the protocol and converts it to a distribution.
///
/// Vectors within [`PROTOCOL_TOLERANCE`] of unit mass are rescaled to exact
/// unit mass; anything further off is a protocol error.
pub fn decode_logprobs(
    logprobs: &[f64],
    vocab_size: usize,
    conditioned: bool,
) -> Result<NextTokenDistribution, LmError> {
    if logprobs.len() != vocab_size {
        return Err(LmError::Protocol(format!(
            "expected {vocab_size} logprobs, got {}",
            logprobs.len()
        )));
    }
    if let Some(bad) = logprobs.iter().find(|x| !x.is_finite() || **x > 1e-9) {
        return Err(LmError::Protocol(format!("invalid logprob {bad}")));
    }
    let probs: Vec<f64> = logprobs.iter().map(|x| x.exp()).collect();
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROTOCOL_TOLERANCE {
        return Err(LmError::Protocol(format!(
            "probabilities sum to {total}, outside 1 +/- {PROTOCOL_TOLERANCE}"
        )));
    }
    let kind = if conditioned {
        DistributionKind::Conditional
    } else {
        DistributionKind::Unconditional
    };
    NextTokenDistribution::normalized(probs, kind).map_err(|e| LmError::Protocol(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_accepted() {
        let lp = vec![(0.25f64).ln(); 4];
        let d = decode_logprobs(&lp, 4, true).unwrap();
        assert!(d.probs().iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn mass_080_rejected() {
        let lp = vec![(0.2f64).ln(); 4];
        assert!(matches!(decode_logprobs(&lp, 4, true), Err(LmError::Protocol(_))));
    }

    #[test]
    fn wrong_length_and_positive_logprob_rejected() {
        assert!(decode_logprobs(&[0.0], 2, true).is_err());
        assert!(decode_logprobs(&[0.5, -10.0], 2, true).is_err());
    }

    #[test]
    fn zero_probability_round_trips_through_floor() {
        let d = NextTokenDistribution::delta(3, 1, DistributionKind::Conditional).unwrap();
        let enc = encode_logprobs(&d);
        assert_eq!(enc.logprobs, vec![LOGPROB_FLOOR, 0.0, LOGPROB_FLOOR]);
        assert_eq!(decode_logprobs(&enc.logprobs, 3, true).unwrap().probs(), d.probs());
    }
}
