//! Hallucination-aware backtracking decoding.
//!
//! The decoder proposes tokens from a language model, rejects those flagged
//! by a low-probability detector or an embedding-distance detector, and
//! backtracks when a prefix has no acceptable continuation.
//!
//! ```
//! use coba::decode::{coba_decode, greedy_decode, DecodeConfig};
//! use coba::detect::DetectorConfig;
//! use coba::fixtures::fig1_table_lm;
//! use coba::types::TokenSeq;
//!
//! let lm = fig1_table_lm();
//! let cfg = DecodeConfig {
//!     coba: Some(DetectorConfig::new(0.2, None).unwrap()),
//!     ..DecodeConfig::default()
//! };
//! let vocab = coba::lm::LmProvider::vocabulary(&lm);
//! let plain = greedy_decode(&lm, &TokenSeq::new(), &cfg).unwrap();
//! let careful = coba_decode(&lm, &TokenSeq::new(), &cfg).unwrap();
//! assert_eq!(vocab.render(&plain.output), "I live in Paris");
//! assert_eq!(vocab.render(&careful.output), "I live with my dog");
//! ```

pub mod decode;
pub mod detect;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod harness;
pub mod lm;
pub mod types;

pub use error::{Error, LmError, Result};
