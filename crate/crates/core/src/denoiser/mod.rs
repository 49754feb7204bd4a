//! Denoiser backends: the trainable toy transformer, the rule-based oracle,
//! a deterministic hash stub, and a client for remotely served models.

pub mod oracle;
pub mod remote;
pub mod stub;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::corpus::ClaimInstance;
use crate::error::{Error, Result};
use crate::layout::SequenceLayout;
use crate::state::SeqState;
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: TokenId,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionPrediction {
    pub position: usize,
    /// Descending log-probability, lower token id first on ties.
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DenoiserOutput {
    /// One entry per masked position, ascending by position.
    pub predictions: Vec<PositionPrediction>,
}

impl DenoiserOutput {
    pub fn get(&self, position: usize) -> Option<&PositionPrediction> {
        self.predictions
            .binary_search_by_key(&position, |p| p.position)
            .ok()
            .map(|i| &self.predictions[i])
    }
}

/// Candidate ordering: higher log-probability first, then lower token id.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.logprob.total_cmp(&a.logprob).then(a.token.cmp(&b.token))
}

/// True when a candidate list obeys [`candidate_order`] strictly.
pub fn is_sorted_candidates(cands: &[Candidate]) -> bool {
    cands
        .windows(2)
        .all(|w| candidate_order(&w[0], &w[1]) == std::cmp::Ordering::Less)
}

/// Top-k candidates of a full-vocabulary log-probability vector.
pub fn top_k(logprobs: &[f64], k: usize) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = logprobs
        .iter()
        .enumerate()
        .map(|(i, &lp)| Candidate {
            token: i as TokenId,
            logprob: lp,
        })
        .collect();
    let k = k.min(all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k, candidate_order);
        all.truncate(k);
    }
    all.sort_by(candidate_order);
    all
}

/// Normalized log-probabilities of a logit vector.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub(crate) fn check_predict_args(state: &SeqState, top_k: usize) -> Result<()> {
    if top_k == 0 {
        return Err(Error::ZeroTopK);
    }
    if state.masked_count() == 0 {
        return Err(Error::NothingMasked);
    }
    Ok(())
}

pub trait Denoiser: Send + Sync {
    /// Candidates for every masked position of `state`.
    fn predict(&self, state: &SeqState, top_k: usize) -> Result<DenoiserOutput>;

    /// Short backend identity recorded in run manifests.
    fn describe(&self) -> String;
}

/// Hands out a denoiser bound to one instance. Backends that do not look at
/// the instance return themselves.
pub trait DenoiserProvider: Sync {
    fn for_instance<'a>(
        &'a self,
        instance: &'a ClaimInstance,
        layout: &'a SequenceLayout,
    ) -> Result<Box<dyn Denoiser + 'a>>;

    fn describe(&self) -> String;
}

impl<T: Denoiser> Denoiser for &T {
    fn predict(&self, state: &SeqState, top_k: usize) -> Result<DenoiserOutput> {
        (**self).predict(state, top_k)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Provider for backends that ignore the instance.
#[derive(Debug, Clone)]
pub struct Shared<D>(pub D);

impl<D: Denoiser> DenoiserProvider for Shared<D> {
    fn for_instance<'a>(
        &'a self,
        _: &'a ClaimInstance,
        _: &'a SequenceLayout,
    ) -> Result<Box<dyn Denoiser + 'a>> {
        Ok(Box::new(&self.0))
    }

    fn describe(&self) -> String {
        self.0.describe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn top_k_breaks_ties_by_token() {
        let lp = log_softmax(&[1.0, 2.0, 2.0, 0.5]);
        let c = top_k(&lp, 3);
        assert_eq!(c.iter().map(|c| c.token).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert!(is_sorted_candidates(&c));
        assert_eq!(top_k(&lp, 10).len(), 4);
    }

    proptest! {
        #[test]
        fn log_softmax_normalizes(logits in proptest::collection::vec(-30.0f64..30.0, 1..300)) {
            let lp = log_softmax(&logits);
            let total: f64 = lp.iter().map(|l| l.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(lp.iter().all(|l| l.is_finite()));
        }

        #[test]
        fn top_k_is_prefix_of_full_sort(logits in proptest::collection::vec(-3i32..3, 1..40), k in 1usize..10) {
            let lp: Vec<f64> = logits.iter().map(|&l| l as f64).collect();
            let mut full = top_k(&lp, lp.len());
            full.truncate(k);
            prop_assert_eq!(top_k(&lp, k), full);
        }
    }
}
