//! Deliberation gate: which masked positions may be unmasked next.
//!
//! Gated-role positions become eligible once `revealed ≥ ceil(p/100 · basis_size)`,
//! where `revealed` counts decoded (unmasked, non-frozen) basis positions. When
//! only gated positions remain masked the gate opens, so a well-formed
//! constraint set can never deadlock the decoder.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{Role, SequenceLayout};
use crate::state::SeqState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateBasis {
    /// Denominator is the whole output span.
    OutputSpan,
    /// Denominator is the number of justification slots.
    JustificationSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub deliberation_pct: u8,
    pub basis: GateBasis,
    pub gated_roles: BTreeSet<Role>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        Self::new(0, GateBasis::OutputSpan)
    }
}

impl ConstraintSet {
    /// Gate on the verdict slot only.
    pub fn new(deliberation_pct: u8, basis: GateBasis) -> Self {
        Self {
            deliberation_pct,
            basis,
            gated_roles: BTreeSet::from([Role::Verdict]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.deliberation_pct > 100 {
            return Err(Error::Config(format!(
                "deliberation_pct {} exceeds 100",
                self.deliberation_pct
            )));
        }
        Ok(())
    }

    fn in_basis(&self, role: Role) -> bool {
        match self.basis {
            GateBasis::OutputSpan => true,
            GateBasis::JustificationSpan => role == Role::Justification,
        }
    }

    pub fn basis_size(&self, layout: &SequenceLayout) -> usize {
        layout.roles.iter().filter(|r| self.in_basis(**r)).count()
    }

    /// Revealed basis tokens required before gated roles open.
    pub fn gate_threshold(&self, layout: &SequenceLayout) -> usize {
        (self.deliberation_pct as usize * self.basis_size(layout)).div_ceil(100)
    }

    /// Decoded (not frozen) basis positions.
    pub fn revealed_count(&self, state: &SeqState, layout: &SequenceLayout) -> usize {
        layout
            .output_positions()
            .filter(|&p| !state.masked[p] && !state.frozen[p])
            .filter(|&p| layout.role_at(p).is_some_and(|r| self.in_basis(r)))
            .count()
    }

    pub fn gate_open(&self, state: &SeqState, layout: &SequenceLayout) -> bool {
        self.revealed_count(state, layout) >= self.gate_threshold(layout)
    }

    /// Masked, non-frozen positions allowed to be unmasked now, ascending.
    pub fn eligible_positions(&self, state: &SeqState, layout: &SequenceLayout) -> Vec<usize> {
        let mut free = Vec::new();
        let mut gated = Vec::new();
        for p in state.masked_positions().filter(|&p| !state.frozen[p]) {
            match layout.role_at(p) {
                Some(role) if self.gated_roles.contains(&role) => gated.push(p),
                _ => free.push(p),
            }
        }
        if free.is_empty() || self.gate_open(state, layout) {
            free.extend(gated);
            free.sort_unstable();
        }
        free
    }
}

pub fn eligible_positions(
    state: &SeqState,
    cset: &ConstraintSet,
    layout: &SequenceLayout,
) -> Vec<usize> {
    cset.eligible_positions(state, layout)
}

pub fn gate_threshold(cset: &ConstraintSet, layout: &SequenceLayout) -> usize {
    cset.gate_threshold(layout)
}
