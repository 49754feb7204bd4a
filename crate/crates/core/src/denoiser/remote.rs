//! Client for the denoiser wire protocol (JSON over HTTP).
//!
//! * `POST /v1/denoise` with `{"tokens": [..], "masked": [..], "top_k": k}`
//!   answers `{"predictions": [{"position": p, "candidates": [{"token": t, "logprob": l}]}]}`.
//! * `GET /v1/health` answers `{"backend": .., "vocab_digest": .., "vocab_size": ..}`.
//!
//! Responses are validated, never repaired: an unsorted candidate list is a
//! schema violation.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    check_predict_args, is_sorted_candidates, Candidate, Denoiser, DenoiserOutput,
    PositionPrediction,
};
use crate::error::{Error, Result};
use crate::state::SeqState;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub tokens: Vec<TokenId>,
    pub masked: Vec<bool>,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub token: i64,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePrediction {
    pub position: i64,
    pub candidates: Vec<WireCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub predictions: Vec<WirePrediction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub backend: String,
    pub vocab_digest: String,
    pub vocab_size: usize,
}

impl DenoiseRequest {
    pub fn from_state(state: &SeqState, top_k: usize) -> Self {
        Self {
            tokens: state.tokens.clone(),
            masked: state.masked.clone(),
            top_k,
        }
    }

    /// Request-side checks shared with the server.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.len() != self.masked.len() {
            return Err(format!(
                "masked: length {} differs from tokens length {}",
                self.masked.len(),
                self.tokens.len()
            ));
        }
        if !self.masked.iter().any(|m| *m) {
            return Err("masked: at least one position must be masked".into());
        }
        if self.top_k == 0 {
            return Err("top_k: must be at least 1".into());
        }
        Ok(())
    }
}

impl From<&DenoiserOutput> for DenoiseResponse {
    fn from(out: &DenoiserOutput) -> Self {
        Self {
            predictions: out
                .predictions
                .iter()
                .map(|p| WirePrediction {
                    position: p.position as i64,
                    candidates: p
                        .candidates
                        .iter()
                        .map(|c| WireCandidate {
                            token: c.token as i64,
                            logprob: c.logprob,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Checks a response against its request and converts it.
pub fn validate_response(
    req: &DenoiseRequest,
    resp: &DenoiseResponse,
    vocab_size: usize,
) -> Result<DenoiserOutput> {
    let bad = |m: String| Error::WireSchema(m);
    let expected: Vec<usize> = req
        .masked
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| i)
        .collect();
    if resp.predictions.len() != expected.len() {
        return Err(bad(format!(
            "predictions: expected {} entries, got {}",
            expected.len(),
            resp.predictions.len()
        )));
    }
    let mut predictions = Vec::with_capacity(expected.len());
    for (i, p) in resp.predictions.iter().enumerate() {
        let pos = usize::try_from(p.position)
            .map_err(|_| bad(format!("predictions[{i}].position: negative")))?;
        if expected.binary_search(&pos).is_err() {
            return Err(bad(format!(
                "predictions[{i}].position: {pos} is not a masked position"
            )));
        }
        if p.candidates.len() != req.top_k.min(vocab_size) {
            return Err(bad(format!(
                "predictions[{i}].candidates: expected {} entries, got {}",
                req.top_k.min(vocab_size),
                p.candidates.len()
            )));
        }
        let mut cands = Vec::with_capacity(p.candidates.len());
        for (j, c) in p.candidates.iter().enumerate() {
            let token = TokenId::try_from(c.token)
                .ok()
                .filter(|t| (*t as usize) < vocab_size)
                .ok_or_else(|| {
                    bad(format!(
                        "predictions[{i}].candidates[{j}].token: {} out of vocabulary",
                        c.token
                    ))
                })?;
            if !c.logprob.is_finite() || c.logprob > 1e-9 {
                return Err(bad(format!(
                    "predictions[{i}].candidates[{j}].logprob: {} is not a finite log-probability",
                    c.logprob
                )));
            }
            cands.push(Candidate {
                token,
                logprob: c.logprob,
            });
        }
        if !is_sorted_candidates(&cands) {
            return Err(bad(format!(
                "predictions[{i}].candidates: not sorted by descending logprob, ascending token"
            )));
        }
        predictions.push(PositionPrediction {
            position: pos,
            candidates: cands,
        });
    }
    predictions.sort_by_key(|p| p.position);
    if predictions
        .windows(2)
        .any(|w| w[0].position == w[1].position)
    {
        return Err(bad("predictions: duplicate position".into()));
    }
    Ok(DenoiserOutput { predictions })
}

/// Parses raw response bytes then validates them.
pub fn decode_response(
    req: &DenoiseRequest,
    body: &[u8],
    vocab_size: usize,
) -> Result<DenoiserOutput> {
    let resp: DenoiseResponse =
        serde_json::from_slice(body).map_err(|e| Error::WireSchema(e.to_string()))?;
    validate_response(req, &resp, vocab_size)
}

#[derive(Debug)]
pub struct RemoteDenoiser {
    endpoint: String,
    agent: ureq::Agent,
    vocab_size: usize,
    backend: String,
}

impl RemoteDenoiser {
    /// Connects and checks that the server serves the same vocabulary.
    pub fn connect(endpoint: &str, vocab: &Vocabulary) -> Result<Self> {
        let endpoint = endpoint.trim_end_matches('/').to_owned();
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(30))
            .build();
        let health: HealthResponse = agent
            .get(&format!("{endpoint}/v1/health"))
            .call()
            .map_err(|e| Error::Transport(e.to_string()))?
            .into_json()
            .map_err(|e| Error::WireSchema(format!("health: {e}")))?;
        if health.vocab_digest != vocab.digest() || health.vocab_size != vocab.len() {
            return Err(Error::WireSchema(format!(
                "vocab_digest: server {} ({} tokens) does not match local {} ({} tokens)",
                health.vocab_digest,
                health.vocab_size,
                vocab.digest(),
                vocab.len()
            )));
        }
        Ok(Self {
            endpoint,
            agent,
            vocab_size: vocab.len(),
            backend: health.backend,
        })
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }
}

impl Denoiser for RemoteDenoiser {
    fn predict(&self, state: &SeqState, top_k: usize) -> Result<DenoiserOutput> {
        check_predict_args(state, top_k)?;
        let req = DenoiseRequest::from_state(state, top_k);
        let body = serde_json::to_vec(&req)?;
        let resp = self
            .agent
            .post(&format!("{}/v1/denoise", self.endpoint))
            .set("content-type", "application/json")
            .send_bytes(&body);
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let msg = r.into_string().unwrap_or_default();
                return Err(Error::Transport(format!("status {code}: {msg}")));
            }
            Err(e) => return Err(Error::Transport(e.to_string())),
        };
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes)
            .map_err(|e| Error::Transport(e.to_string()))?;
        decode_response(&req, &bytes, self.vocab_size)
    }

    fn describe(&self) -> String {
        format!("remote({}, backend={})", self.endpoint, self.backend)
    }
}
