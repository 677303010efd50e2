//! Client for a model served over the wire protocol.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use super::protocol::{
    decode_logprobs, EmbeddingsRequest, EmbeddingsResponse, LogprobsRequest, LogprobsResponse,
    MetaResponse, EMBEDDINGS_PATH, LOGPROBS_PATH, META_PATH,
};
use super::LmProvider;
use crate::error::{LmError, Result};
use crate::types::{EmbeddingTable, NextTokenDistribution, TokenId, TokenSeq, Vocabulary};

const EMBEDDING_CHUNK: usize = 4096;
const SESSION_HEADER: &str = "X-Coba-Session";

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub timeout: Duration,
    pub max_in_flight: usize,
    /// Sent with every request; generated per process when `None`.
    pub session_id: Option<String>,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            max_in_flight: 8,
            session_id: None,
        }
    }
}

/// A remote model. Vocabulary and embeddings are fetched once in [`RemoteLm::connect`].
pub struct RemoteLm {
    base: String,
    session_id: String,
    agent: Agent,
    vocab: Vocabulary,
    embeddings: EmbeddingTable,
    meta: MetaResponse,
    slots: Slots,
}

impl std::fmt::Debug for RemoteLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLm")
            .field("base", &self.base)
            .field("session_id", &self.session_id)
            .field("vocab_size", &self.vocab.size())
            .finish()
    }
}

impl RemoteLm {
    pub fn connect(url: &str, opts: RemoteOptions) -> Result<Self> {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(opts.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = url.trim_end_matches('/').to_owned();
        let session_id = opts.session_id.clone().unwrap_or_else(|| {
            format!(
                "{}-{}",
                std::process::id(),
                NEXT_SESSION.fetch_add(1, Ordering::Relaxed)
            )
        });
        let mut lm = Self {
            base,
            session_id,
            agent,
            vocab: Vocabulary::new(2, 0, 1, None, [])?,
            embeddings: EmbeddingTable::from_flat(1, vec![1.0, 1.0])?,
            meta: MetaResponse {
                vocab_size: 0,
                sos_id: 0,
                eos_id: 0,
                special_ids: vec![],
                embedding_dim: 0,
                template: None,
            },
            slots: Slots::new(opts.max_in_flight.max(1)),
        };

        let meta: MetaResponse = lm.request(META_PATH, None::<&()>)?;
        let vocab = Vocabulary::new(
            meta.vocab_size,
            meta.sos_id,
            meta.eos_id,
            None,
            meta.special_ids.iter().copied(),
        )
        .map_err(|e| LmError::Protocol(format!("bad metadata: {e}")))?;

        let ids: Vec<TokenId> = (0..meta.vocab_size as TokenId).collect();
        let mut data = Vec::with_capacity(meta.vocab_size * meta.embedding_dim);
        for chunk in ids.chunks(EMBEDDING_CHUNK) {
            let resp: EmbeddingsResponse = lm.request(
                EMBEDDINGS_PATH,
                Some(&EmbeddingsRequest { ids: chunk.to_vec() }),
            )?;
            if resp.vectors.len() != chunk.len() {
                return Err(LmError::Protocol("embedding count mismatch".into()).into());
            }
            for v in resp.vectors {
                if v.len() != meta.embedding_dim {
                    return Err(LmError::Protocol("embedding dimension mismatch".into()).into());
                }
                data.extend(v);
            }
        }
        let embeddings = EmbeddingTable::from_flat(meta.embedding_dim, data)
            .map_err(|e| LmError::Protocol(format!("bad embeddings: {e}")))?;

        lm.vocab = vocab;
        lm.embeddings = embeddings;
        lm.meta = meta;
        Ok(lm)
    }

    pub fn meta(&self) -> &MetaResponse {
        &self.meta
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    fn request<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&B>,
    ) -> Result<T, LmError> {
        let _slot = self.slots.acquire();
        let url = format!("{}{}", self.base, path);
        let sent = match body {
            Some(b) => self
                .agent
                .post(&url)
                .header(SESSION_HEADER, &self.session_id)
                .send_json(b),
            None => self.agent.get(&url).header(SESSION_HEADER, &self.session_id).call(),
        };
        let mut resp = sent.map_err(classify)?;
        let status = resp.status().as_u16();
        match status {
            200 => resp
                .body_mut()
                .read_json::<T>()
                .map_err(|e| match classify(e) {
                    LmError::Transport(m) => LmError::Protocol(m),
                    other => other,
                }),
            500..=599 => Err(LmError::Transport(format!("{url}: HTTP {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                Err(LmError::Protocol(format!("{url}: HTTP {status} {text}")))
            }
        }
    }
}

fn classify(e: ureq::Error) -> LmError {
    match e {
        ureq::Error::Timeout(t) => LmError::Timeout(t.to_string()),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => {
            LmError::Timeout(io.to_string())
        }
        ureq::Error::Json(j) => LmError::Protocol(j.to_string()),
        other => LmError::Transport(other.to_string()),
    }
}

impl LmProvider for RemoteLm {
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
        let req = LogprobsRequest {
            context: context.to_vec(),
            prefix: prefix.to_vec(),
            conditioned,
        };
        let resp: LogprobsResponse = self.request(LOGPROBS_PATH, Some(&req))?;
        Ok(decode_logprobs(&resp.logprobs, self.vocab.size(), conditioned)?)
    }
}

/// Counting semaphore bounding in-flight requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|p| p.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}
