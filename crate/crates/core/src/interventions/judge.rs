//! Rule-based judge over the synthetic language.

use serde::{Deserialize, Serialize};

use crate::corpus::rules::{cited_fact, implied_verdict, resolve};
use crate::corpus::{ClaimInstance, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JudgeVerdictCategory {
    /// The justification argues for the evidence-backed verdict.
    LogicalIntegrity,
    /// Correct fact, wrong conclusion.
    LogicalError,
    /// Argues from an evidence value that does not decide the claim.
    Cherrypicking,
    /// Argues against the verdict it accompanies while that verdict is correct.
    VerdictJustificationMismatch,
    /// Cites a value that appears nowhere in the evidence.
    FactualHallucination,
    Other(String),
}

impl JudgeVerdictCategory {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LogicalIntegrity => "LogicalIntegrity",
            Self::LogicalError => "LogicalError",
            Self::Cherrypicking => "Cherrypicking",
            Self::VerdictJustificationMismatch => "VerdictJustificationMismatch",
            Self::FactualHallucination => "FactualHallucination",
            Self::Other(_) => "Other",
        }
    }
}

/// Categorizes a justification produced next to `verdict`.
pub fn judge(
    instance: &ClaimInstance,
    verdict: Verdict,
    justification: &str,
) -> JudgeVerdictCategory {
    let Some(implied) = implied_verdict(instance, justification) else {
        return JudgeVerdictCategory::Other("no stance words and no cited fact".into());
    };
    let gold = instance.gold_verdict;
    if implied != verdict {
        return if implied == gold {
            JudgeVerdictCategory::LogicalIntegrity
        } else {
            JudgeVerdictCategory::VerdictJustificationMismatch
        };
    }
    if verdict == gold {
        return JudgeVerdictCategory::LogicalIntegrity;
    }
    // the justification rationalizes a wrong verdict; classify by what it cites
    let Some(fact) = cited_fact(justification) else {
        return JudgeVerdictCategory::LogicalError;
    };
    let deciding = resolve(instance);
    if deciding.as_ref().is_some_and(|r| {
        r.subject == fact.entity
            && r.form.attribute() == fact.attribute
            && r.deciding_value == fact.value
    }) {
        return JudgeVerdictCategory::LogicalError;
    }
    if instance
        .evidence
        .iter()
        .any(|p| p.answer.trim() == fact.value)
    {
        JudgeVerdictCategory::Cherrypicking
    } else {
        JudgeVerdictCategory::FactualHallucination
    }
}
