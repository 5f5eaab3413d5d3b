//! HTTP client for an external reranker service.
//!
//! Protocol: POST a JSON body `{"instruction": ..., "pairs": [{"query": ...,
//! "candidate": ...}]}`; the service answers `{"judgments": [{"z_yes": ...,
//! "z_no": ...}]}` with one judgment per pair, in order. Judgment logits are
//! converted to scores with the same softmax as the local reranker math.
//!
//! Transient failures (connect errors, timeouts, 5xx) are retried with
//! exponential backoff; anything structurally wrong with an answer is a
//! protocol error carrying the offending payload. Results always come back
//! in input order, and an error anywhere yields no partial results.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemrlError};
use crate::scorers::{reranker_score, RerankJudgment, SemanticScorer};

/// Connection and batching limits for the remote reranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Instruction text sent with every batch (the judge prompt).
    pub instruction: String,
    pub timeout_secs: f64,
    /// Maximum concurrent in-flight requests.
    pub max_in_flight: usize,
    /// Retries after the first attempt for transient failures.
    pub retries: u32,
    /// Initial backoff, doubled per retry.
    pub backoff_ms: u64,
    /// Pairs per request.
    pub batch_size: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            instruction: "Does the candidate faithfully cover the source?".into(),
            timeout_secs: 10.0,
            max_in_flight: 4,
            retries: 3,
            backoff_ms: 200,
            batch_size: 32,
        }
    }
}

#[derive(Serialize)]
struct WirePair<'a> {
    query: &'a str,
    candidate: &'a str,
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    instruction: &'a str,
    pairs: Vec<WirePair<'a>>,
}

#[derive(Deserialize)]
struct RerankResponse {
    judgments: Vec<RerankJudgment>,
}

/// Blocking client for the wire protocol above.
pub struct RemoteReranker {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteReranker {
    pub fn new(cfg: RemoteConfig) -> Result<RemoteReranker> {
        if cfg.endpoint.is_empty() {
            return Err(SemrlError::Config("remote endpoint not set".into()));
        }
        if cfg.batch_size == 0 {
            return Err(SemrlError::Config("remote batch_size must be >= 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| SemrlError::Transport(e.to_string()))?;
        Ok(RemoteReranker { cfg, client })
    }

    /// Scores all pairs, chunked into batches of `batch_size`, up to
    /// `max_in_flight` requests at a time. Order is preserved; any failure
    /// aborts the whole call.
    pub fn rerank_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(SemrlError::InvalidArgument(
                "remote rerank needs at least one pair".into(),
            ));
        }
        let chunks: Vec<&[(String, String)]> = pairs.chunks(self.cfg.batch_size).collect();
        let workers = self.cfg.max_in_flight.max(1).min(chunks.len());

        let results: Vec<Option<Result<Vec<f64>>>> =
            if workers <= 1 {
                chunks
                    .iter()
                    .map(|chunk| Some(self.send_chunk(chunk)))
                    .collect()
            } else {
                let next = Mutex::new(0usize);
                let slots: Mutex<Vec<Option<Result<Vec<f64>>>>> =
                    Mutex::new((0..chunks.len()).map(|_| None).collect());
                std::thread::scope(|scope| {
                    for _ in 0..workers {
                        scope.spawn(|| loop {
                            let i = {
                                let mut n = next.lock().unwrap();
                                let i = *n;
                                if i >= chunks.len() {
                                    return;
                                }
                                *n += 1;
                                i
                            };
                            let r = self.send_chunk(chunks[i]);
                            slots.lock().unwrap()[i] = Some(r);
                        });
                    }
                });
                slots.into_inner().unwrap()
            };

        let mut scores = Vec::with_capacity(pairs.len());
        for slot in results {
            let chunk_scores =
                slot.expect("every chunk slot is filled before the workers exit")?;
            scores.extend(chunk_scores);
        }
        Ok(scores)
    }

    fn send_chunk(&self, chunk: &[(String, String)]) -> Result<Vec<f64>> {
        let req = RerankRequest {
            instruction: &self.cfg.instruction,
            pairs: chunk
                .iter()
                .map(|(q, c)| WirePair {
                    query: q,
                    candidate: c,
                })
                .collect(),
        };
        let mut last_transport = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                let backoff = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let resp = match self.client.post(&self.cfg.endpoint).json(&req).send() {
                Ok(r) => r,
                Err(e) => {
                    last_transport = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let body = match resp.text() {
                Ok(t) => t,
                Err(e) => {
                    last_transport = format!("failed reading body: {e}");
                    continue;
                }
            };
            if status.is_server_error() {
                last_transport = format!("server error {status}: {body}");
                continue;
            }
            if !status.is_success() {
                return Err(SemrlError::Protocol {
                    reason: format!("unexpected status {status}"),
                    payload: body,
                });
            }
            let parsed: RerankResponse =
                serde_json::from_str(&body).map_err(|e| SemrlError::Protocol {
                    reason: format!("unparseable response: {e}"),
                    payload: body.clone(),
                })?;
            if parsed.judgments.len() != chunk.len() {
                return Err(SemrlError::Protocol {
                    reason: format!(
                        "{} pairs sent but {} judgments returned",
                        chunk.len(),
                        parsed.judgments.len()
                    ),
                    payload: body,
                });
            }
            let mut scores = Vec::with_capacity(chunk.len());
            for j in &parsed.judgments {
                let s = reranker_score(j).map_err(|_| SemrlError::Protocol {
                    reason: format!("non-finite judgment logits ({}, {})", j.z_yes, j.z_no),
                    payload: body.clone(),
                })?;
                scores.push(s);
            }
            return Ok(scores);
        }
        Err(SemrlError::Transport(format!(
            "giving up after {} attempts: {last_transport}",
            self.cfg.retries + 1
        )))
    }
}

/// One-shot convenience over [`RemoteReranker`].
pub fn remote_rerank_batch(cfg: &RemoteConfig, pairs: &[(String, String)]) -> Result<Vec<f64>> {
    RemoteReranker::new(cfg.clone())?.rerank_batch(pairs)
}

impl SemanticScorer for RemoteReranker {
    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        self.rerank_batch(pairs)
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_new_requires_endpoint() {
        assert!(matches!(
            RemoteReranker::new(RemoteConfig::default()),
            Err(SemrlError::Config(_))
        ));
    }

    #[test]
    fn test_empty_pairs_rejected() {
        let cfg = RemoteConfig {
            endpoint: "http://127.0.0.1:9".into(),
            retries: 0,
            ..RemoteConfig::default()
        };
        let client = RemoteReranker::new(cfg).unwrap();
        assert!(matches!(
            client.rerank_batch(&[]),
            Err(SemrlError::InvalidArgument(_))
        ));
    }

    #[test]
    fn test_unreachable_endpoint_is_transport_error() {
        // port 9 (discard) is closed in the sandbox: immediate connect failure
        let cfg = RemoteConfig {
            endpoint: "http://127.0.0.1:9".into(),
            retries: 1,
            backoff_ms: 1,
            timeout_secs: 2.0,
            ..RemoteConfig::default()
        };
        let client = RemoteReranker::new(cfg).unwrap();
        let err = client
            .rerank_batch(&[("q".into(), "c".into())])
            .unwrap_err();
        assert!(matches!(err, SemrlError::Transport(_)), "{err}");
    }
}
