//! Withholding label-indicative phrases from frozen justification context.

use crate::vocab::{TokenId, Vocabulary};

/// Flags every run of tokens matching a leak phrase.
///
/// Matching is exact per surface form, scanning left to right with the
/// longest phrase winning at each start position. Tokens are returned
/// unchanged; callers withhold the flagged positions by not freezing them.
pub fn apply_leak_mask(
    justification_tokens: &[TokenId],
    vocab: &Vocabulary,
) -> (Vec<TokenId>, Vec<bool>) {
    let phrases: Vec<Vec<TokenId>> = vocab
        .leak_phrases()
        .iter()
        .filter_map(|p| p.iter().map(|s| vocab.id(s)).collect::<Option<Vec<_>>>())
        .collect();
    let mut kept = vec![true; justification_tokens.len()];
    let mut i = 0;
    while i < justification_tokens.len() {
        let longest = phrases
            .iter()
            .filter(|p| justification_tokens[i..].starts_with(p))
            .map(Vec::len)
            .max();
        match longest {
            Some(n) => {
                kept[i..i + n].iter_mut().for_each(|k| *k = false);
                i += n;
            }
            None => i += 1,
        }
    }
    (justification_tokens.to_vec(), kept)
}
