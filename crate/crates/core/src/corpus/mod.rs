//! Synthetic fact-verification corpus.

mod corrupt;
mod generate;
mod io;
pub mod lexicon;
pub mod rules;

use serde::{Deserialize, Serialize};

pub use corrupt::{
    corrupt_justification, verify_corruption, CorruptedJustification, CorruptionKind,
};
pub use generate::{generate_corpus, CorpusSpec};
pub use io::{load_external, parse_external, save_corpus};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Supported,
    Refuted,
}

impl Verdict {
    pub fn flipped(self) -> Self {
        match self {
            Verdict::Supported => Verdict::Refuted,
            Verdict::Refuted => Verdict::Supported,
        }
    }

    pub fn proxy(self, vocab: &Vocabulary) -> TokenId {
        match self {
            Verdict::Supported => vocab.label_proxy_supported,
            Verdict::Refuted => vocab.label_proxy_refuted,
        }
    }

    pub fn from_proxy(token: TokenId, vocab: &Vocabulary) -> Option<Self> {
        if token == vocab.label_proxy_supported {
            Some(Verdict::Supported)
        } else if token == vocab.label_proxy_refuted {
            Some(Verdict::Refuted)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Supported => "Supported",
            Verdict::Refuted => "Refuted",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimInstance {
    pub id: String,
    pub claim: String,
    pub evidence: Vec<EvidencePair>,
    #[serde(rename = "verdict")]
    pub gold_verdict: Verdict,
    #[serde(rename = "justification")]
    pub gold_justification: String,
}

impl ClaimInstance {
    /// Prompt text: the claim followed by its evidence as question-answer pairs.
    pub fn prompt_text(&self) -> String {
        let mut out = format!("claim : {} . evidence :", self.claim);
        for pair in &self.evidence {
            out.push_str(&format!(" Q : {} A : {}", pair.question, pair.answer));
        }
        out
    }

    /// Prompt tokens right-padded to `prompt_len`.
    pub fn prompt_tokens(&self, vocab: &Vocabulary, prompt_len: usize) -> Result<Vec<TokenId>> {
        let mut tokens = vocab.tokenize(&self.prompt_text());
        if tokens.len() > prompt_len {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: prompt_len,
            });
        }
        tokens.resize(prompt_len, vocab.pad_id);
        Ok(tokens)
    }

    pub fn justification_tokens(&self, vocab: &Vocabulary) -> Vec<TokenId> {
        vocab.tokenize(&self.gold_justification)
    }
}
