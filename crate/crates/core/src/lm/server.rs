//! In-process HTTP server exposing any [`LmProvider`] over the wire protocol.
//!
//! Used as the fixture for [`RemoteLm`](super::RemoteLm) tests and by the
//! `coba serve` subcommand.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::Serialize;
use tiny_http::{Header, Method, Response, Server};

use super::protocol::{
    encode_logprobs, EmbeddingsRequest, EmbeddingsResponse, ErrorResponse, LogprobsRequest,
    MetaResponse, EMBEDDINGS_PATH, LOGPROBS_PATH, META_PATH,
};
use super::LmProvider;
use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq};

/// A routed reply: HTTP status plus JSON body.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        Self {
            status,
            body: serde_json::to_string(value).expect("serializable reply"),
        }
    }

    fn error(status: u16, msg: impl Into<String>) -> Self {
        Self::json(status, &ErrorResponse { error: msg.into() })
    }
}

/// Routes one request. Pure apart from the model call.
pub fn route(lm: &dyn LmProvider, method: &str, path: &str, body: &[u8]) -> Reply {
    let vocab = lm.vocabulary();
    let in_range = |ids: &[TokenId]| ids.iter().all(|&id| vocab.contains(id));
    match (method, path) {
        ("GET", META_PATH) => Reply::json(
            200,
            &MetaResponse {
                vocab_size: vocab.size(),
                sos_id: vocab.sos_id(),
                eos_id: vocab.eos_id(),
                special_ids: vocab.special_ids().iter().copied().collect(),
                embedding_dim: lm.embeddings().dim(),
                template: None,
            },
        ),
        ("POST", LOGPROBS_PATH) => {
            let req: LogprobsRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => return Reply::error(400, e.to_string()),
            };
            if !in_range(&req.context) || !in_range(&req.prefix) {
                return Reply::error(422, "token id out of range");
            }
            let context = TokenSeq::from(req.context);
            let prefix = TokenSeq::from(req.prefix);
            match lm.next_distribution(&context, &prefix, req.conditioned) {
                Ok(d) => Reply::json(200, &encode_logprobs(&d)),
                Err(Error::Lm(e)) => Reply::error(503, e.to_string()),
                Err(e) => Reply::error(422, e.to_string()),
            }
        }
        ("POST", EMBEDDINGS_PATH) => {
            let req: EmbeddingsRequest = match serde_json::from_slice(body) {
                Ok(r) => r,
                Err(e) => return Reply::error(400, e.to_string()),
            };
            if !in_range(&req.ids) {
                return Reply::error(422, "token id out of range");
            }
            let emb = lm.embeddings();
            let vectors = req.ids.iter().map(|&id| emb.row(id).to_vec()).collect();
            Reply::json(200, &EmbeddingsResponse { vectors })
        }
        (_, META_PATH | LOGPROBS_PATH | EMBEDDINGS_PATH) => Reply::error(405, "method not allowed"),
        _ => Reply::error(404, "not found"),
    }
}

/// Background HTTP server; stops when dropped.
pub struct FixtureServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl FixtureServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves with `threads` workers.
    pub fn start(lm: Arc<dyn LmProvider>, addr: &str, threads: usize) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::contract("fixture server must bind an IP address"))?;
        let server = Arc::new(server);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let lm = Arc::clone(&lm);
                std::thread::spawn(move || serve_loop(&server, lm.as_ref()))
            })
            .collect();
        Ok(Self { server, addr, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the workers exit (they only exit on drop or I/O failure).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn serve_loop(server: &Server, lm: &dyn LmProvider) {
    let content_type =
        Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    while let Ok(mut request) = server.recv() {
        let mut body = Vec::new();
        let reply = match request.as_reader().read_to_end(&mut body) {
            Ok(_) => {
                let method = match request.method() {
                    Method::Get => "GET",
                    Method::Post => "POST",
                    _ => "OTHER",
                };
                let path = request.url().split('?').next().unwrap_or("").to_owned();
                route(lm, method, &path, &body)
            }
            Err(e) => Reply::error(400, e.to_string()),
        };
        let response = Response::from_string(reply.body)
            .with_status_code(reply.status)
            .with_header(content_type.clone());
        let _ = request.respond(response);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lm::protocol::LogprobsResponse;

    #[test]
    fn routes_meta_and_errors() {
        let lm = fixtures::fig1_table_lm();
        let r = route(&lm, "GET", META_PATH, b"");
        assert_eq!(r.status, 200);
        let meta: MetaResponse = serde_json::from_str(&r.body).unwrap();
        assert_eq!(meta.vocab_size, lm.vocabulary().size());

        assert_eq!(route(&lm, "POST", LOGPROBS_PATH, b"{not json").status, 400);
        let oob = br#"{"context":[],"prefix":[0,999],"conditioned":true}"#;
        assert_eq!(route(&lm, "POST", LOGPROBS_PATH, oob).status, 422);
        assert_eq!(route(&lm, "POST", EMBEDDINGS_PATH, br#"{"ids":[9999]}"#).status, 422);
        assert_eq!(route(&lm, "GET", "/nope", b"").status, 404);
        assert_eq!(route(&lm, "GET", LOGPROBS_PATH, b"").status, 405);
    }

    #[test]
    fn logprobs_are_finite() {
        let lm = fixtures::EchoLm::new(5).unwrap();
        let body = br#"{"context":[2],"prefix":[0,3],"conditioned":true}"#;
        let r = route(&lm, "POST", LOGPROBS_PATH, body);
        assert_eq!(r.status, 200);
        let lp: LogprobsResponse = serde_json::from_str(&r.body).unwrap();
        assert!(lp.logprobs.iter().all(|x| x.is_finite()));
        assert_eq!(lp.logprobs[3], 0.0);
    }
}
