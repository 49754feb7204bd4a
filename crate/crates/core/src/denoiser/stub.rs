//! Deterministic hash-driven denoiser for conformance testing.
//!
//! For masked position `p` the logit of token `t` is
//! `((mix(seed ^ ctx ^ mix(p) ^ mix(t << 32)) >> 11) as f64 / 2^53) * 8 - 4`,
//! where `mix` is the SplitMix64 finalizer and `ctx` folds every unmasked
//! `(position, token)` pair in ascending position order through `mix`.
//! The bridge server's stub backend implements the same function.

use super::{check_predict_args, log_softmax, top_k, Denoiser, DenoiserOutput, PositionPrediction};
use crate::error::Result;
use crate::state::SeqState;

pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubDenoiser {
    pub seed: u64,
    pub vocab_size: usize,
}

impl StubDenoiser {
    pub fn new(seed: u64, vocab_size: usize) -> Self {
        Self { seed, vocab_size }
    }

    fn context(tokens: &[u32], masked: &[bool]) -> u64 {
        tokens
            .iter()
            .zip(masked)
            .enumerate()
            .filter(|(_, (_, m))| !**m)
            .fold(0u64, |h, (p, (&t, _))| {
                mix(h ^ ((p as u64) << 32 | t as u64))
            })
    }

    pub fn logprobs(&self, tokens: &[u32], masked: &[bool], position: usize) -> Vec<f64> {
        let ctx = Self::context(tokens, masked);
        let base = self.seed ^ ctx ^ mix(position as u64);
        let logits: Vec<f64> = (0..self.vocab_size as u64)
            .map(|t| ((mix(base ^ mix(t << 32)) >> 11) as f64 / (1u64 << 53) as f64) * 8.0 - 4.0)
            .collect();
        log_softmax(&logits)
    }

    /// Raw wire-level prediction, shared by the in-process backend and test servers.
    pub fn predict_raw(&self, tokens: &[u32], masked: &[bool], k: usize) -> DenoiserOutput {
        let predictions = masked
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(p, _)| PositionPrediction {
                position: p,
                candidates: top_k(&self.logprobs(tokens, masked, p), k),
            })
            .collect();
        DenoiserOutput { predictions }
    }
}

impl Denoiser for StubDenoiser {
    fn predict(&self, state: &SeqState, k: usize) -> Result<DenoiserOutput> {
        check_predict_args(state, k)?;
        Ok(self.predict_raw(&state.tokens, &state.masked, k))
    }

    fn describe(&self) -> String {
        format!("stub(seed={}, vocab={})", self.seed, self.vocab_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_context_sensitive() {
        let stub = StubDenoiser::new(3, 50);
        let a = stub.predict_raw(&[1, 2, 0, 0], &[false, false, true, true], 4);
        assert_eq!(
            a,
            stub.predict_raw(&[1, 2, 0, 0], &[false, false, true, true], 4)
        );
        assert_eq!(a.predictions.len(), 2);
        assert!(a
            .predictions
            .iter()
            .all(|p| p.candidates.len() == 4 && super::super::is_sorted_candidates(&p.candidates)));
        let b = stub.predict_raw(&[1, 3, 0, 0], &[false, false, true, true], 4);
        assert_ne!(a, b);
        // masked tokens do not leak into the context
        assert_eq!(
            a,
            stub.predict_raw(&[1, 2, 9, 9], &[false, false, true, true], 4)
        );
    }
}
