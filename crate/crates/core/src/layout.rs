//! Role layouts over the fixed-length output span.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

pub const JSON_TEMPLATE: &str = "json_verdict_justification";
pub const DEFAULT_OUTPUT_LEN: usize = 64;
pub const DEFAULT_PROMPT_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Structure,
    Verdict,
    Justification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    VerdictFirst,
    JustificationFirst,
}

#[derive(Debug, Clone, Copy)]
enum Piece {
    Lit(&'static str),
    Verdict,
    Justification,
}

use Piece::{Justification as J, Lit, Verdict as V};

const VERDICT_FIRST: &[Piece] = &[
    Lit("{"),
    Lit("\""),
    Lit("verdict"),
    Lit("\""),
    Lit(":"),
    Lit("\""),
    V,
    Lit("\""),
    Lit(","),
    Lit("\""),
    Lit("justification"),
    Lit("\""),
    Lit(":"),
    Lit("\""),
    J,
    Lit("\""),
    Lit("}"),
];

const JUSTIFICATION_FIRST: &[Piece] = &[
    Lit("{"),
    Lit("\""),
    Lit("justification"),
    Lit("\""),
    Lit(":"),
    Lit("\""),
    J,
    Lit("\""),
    Lit(","),
    Lit("\""),
    Lit("verdict"),
    Lit("\""),
    Lit(":"),
    Lit("\""),
    V,
    Lit("\""),
    Lit("}"),
];

/// Number of structure tokens in the JSON template.
pub const SCAFFOLD_LEN: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    pub template: String,
    pub prompt_len: usize,
    pub output_len: usize,
    pub order_mode: OrderMode,
    /// One role per output position.
    pub roles: Vec<Role>,
    /// Scaffold surface for each Structure output position, `None` elsewhere.
    pub structure: Vec<Option<String>>,
}

/// Builds the role layout for a named template.
pub fn build_layout(
    template_name: &str,
    order_mode: OrderMode,
    output_len: usize,
) -> Result<SequenceLayout> {
    if template_name != JSON_TEMPLATE {
        return Err(Error::UnknownTemplate(template_name.to_owned()));
    }
    if output_len < SCAFFOLD_LEN + 2 {
        return Err(Error::OutputTooSmall {
            output_len,
            scaffold: SCAFFOLD_LEN,
        });
    }
    let pieces = match order_mode {
        OrderMode::VerdictFirst => VERDICT_FIRST,
        OrderMode::JustificationFirst => JUSTIFICATION_FIRST,
    };
    let justification_len = output_len - SCAFFOLD_LEN - 1;
    let mut roles = Vec::with_capacity(output_len);
    let mut structure = Vec::with_capacity(output_len);
    for piece in pieces {
        match piece {
            Lit(s) => {
                roles.push(Role::Structure);
                structure.push(Some((*s).to_owned()));
            }
            V => {
                roles.push(Role::Verdict);
                structure.push(None);
            }
            J => {
                roles.extend(std::iter::repeat_n(Role::Justification, justification_len));
                structure.extend(std::iter::repeat_n(None, justification_len));
            }
        }
    }
    debug_assert_eq!(roles.len(), output_len);
    Ok(SequenceLayout {
        template: template_name.to_owned(),
        prompt_len: DEFAULT_PROMPT_LEN,
        output_len,
        order_mode,
        roles,
        structure,
    })
}

impl SequenceLayout {
    pub fn with_prompt_len(mut self, prompt_len: usize) -> Self {
        self.prompt_len = prompt_len;
        self
    }

    pub fn total_len(&self) -> usize {
        self.prompt_len + self.output_len
    }

    pub fn output_positions(&self) -> std::ops::Range<usize> {
        self.prompt_len..self.total_len()
    }

    /// Role of a global position; `None` inside the prompt or out of range.
    pub fn role_at(&self, pos: usize) -> Option<Role> {
        pos.checked_sub(self.prompt_len)
            .and_then(|i| self.roles.get(i).copied())
    }

    pub fn verdict_pos(&self) -> usize {
        self.prompt_len
            + self
                .roles
                .iter()
                .position(|r| *r == Role::Verdict)
                .expect("layout has a verdict slot")
    }

    pub fn positions_with(&self, role: Role) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == role)
            .map(|(i, _)| self.prompt_len + i)
            .collect()
    }

    pub fn justification_positions(&self) -> Vec<usize> {
        self.positions_with(Role::Justification)
    }

    pub fn justification_len(&self) -> usize {
        self.roles
            .iter()
            .filter(|r| **r == Role::Justification)
            .count()
    }

    /// Scaffold token for a Structure position.
    pub fn structure_token(&self, pos: usize, vocab: &Vocabulary) -> Option<TokenId> {
        let i = pos.checked_sub(self.prompt_len)?;
        self.structure.get(i)?.as_deref().and_then(|s| vocab.id(s))
    }

    /// Output-span tokens for a complete answer: scaffold, verdict proxy, and the
    /// justification padded to the justification span.
    pub fn render_output(
        &self,
        vocab: &Vocabulary,
        verdict: TokenId,
        justification: &[TokenId],
    ) -> Result<Vec<TokenId>> {
        let slots = self.justification_len();
        if justification.len() > slots {
            return Err(Error::JustificationTooLong {
                len: justification.len(),
                slots,
            });
        }
        let mut just = justification
            .iter()
            .copied()
            .chain(std::iter::repeat(vocab.pad_id));
        Ok(self
            .roles
            .iter()
            .zip(&self.structure)
            .map(|(role, s)| match role {
                Role::Structure => s
                    .as_deref()
                    .and_then(|s| vocab.id(s))
                    .unwrap_or(vocab.unk_id),
                Role::Verdict => verdict,
                Role::Justification => just.next().unwrap_or(vocab.pad_id),
            })
            .collect())
    }
}
