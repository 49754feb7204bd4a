//! The partially unmasked sequence the reverse process mutates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::SequenceLayout;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqState {
    pub tokens: Vec<TokenId>,
    pub masked: Vec<bool>,
    pub frozen: Vec<bool>,
    pub step: usize,
}

/// Prompt positions frozen, every output position masked.
pub fn init_state(
    layout: &SequenceLayout,
    prompt: &[TokenId],
    vocab: &Vocabulary,
) -> Result<SeqState> {
    if prompt.len() != layout.prompt_len {
        return Err(Error::PromptLength {
            expected: layout.prompt_len,
            got: prompt.len(),
        });
    }
    let total = layout.total_len();
    let mut tokens = Vec::with_capacity(total);
    tokens.extend_from_slice(prompt);
    tokens.resize(total, vocab.mask_id);
    let mut masked = vec![false; layout.prompt_len];
    masked.resize(total, true);
    let mut frozen = vec![true; layout.prompt_len];
    frozen.resize(total, false);
    Ok(SeqState {
        tokens,
        masked,
        frozen,
        step: 0,
    })
}

impl SeqState {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }

    pub fn masked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.masked
            .iter()
            .enumerate()
            .filter(|(_, m)| **m)
            .map(|(i, _)| i)
    }

    /// Hard-codes tokens at masked positions; they are never decoded or changed afterwards.
    pub fn freeze(&mut self, assignments: &[(usize, TokenId)]) -> Result<()> {
        for &(pos, _) in assignments {
            if pos >= self.len() {
                return Err(Error::PositionOutOfRange {
                    pos,
                    len: self.len(),
                });
            }
            if !self.masked[pos] || self.frozen[pos] {
                return Err(Error::AlreadyUnmasked(pos));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(&(pos, _)) = assignments.iter().find(|(p, _)| !seen.insert(*p)) {
            return Err(Error::AlreadyUnmasked(pos));
        }
        for &(pos, tok) in assignments {
            self.tokens[pos] = tok;
            self.masked[pos] = false;
            self.frozen[pos] = true;
        }
        Ok(())
    }

    /// Reveals one masked position as a decoding step.
    pub(crate) fn unmask(&mut self, pos: usize, tok: TokenId) {
        debug_assert!(self.masked[pos] && !self.frozen[pos]);
        self.tokens[pos] = tok;
        self.masked[pos] = false;
        self.step += 1;
    }
}
