//! Rule engine over the synthetic language: claim parsing, evidence
//! resolution, stance reading and cited-fact extraction.
//!
//! Works on surface text only, so it re-derives verdicts independently of
//! the generator's internal representation.

use std::collections::HashMap;

use super::lexicon::{self, RELATION};
use super::{ClaimInstance, Verdict};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClaimForm {
    /// `E 's A is V`
    Direct {
        entity: String,
        attribute: String,
        value: String,
    },
    /// `E 's rival 's A is V`
    TwoHop {
        entity: String,
        attribute: String,
        value: String,
    },
}

impl ClaimForm {
    pub fn claimed_value(&self) -> &str {
        match self {
            ClaimForm::Direct { value, .. } | ClaimForm::TwoHop { value, .. } => value,
        }
    }

    pub fn attribute(&self) -> &str {
        match self {
            ClaimForm::Direct { attribute, .. } | ClaimForm::TwoHop { attribute, .. } => attribute,
        }
    }
}

/// The chain of evidence facts that decides a claim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub form: ClaimForm,
    /// For two-hop claims, the intermediate entity named by the relation pair.
    pub intermediate: Option<String>,
    /// Entity whose attribute decides the claim.
    pub subject: String,
    pub deciding_value: String,
    pub verdict: Verdict,
}

pub fn is_entity(w: &str) -> bool {
    lexicon::ENTITIES.contains(&w)
}

pub fn is_attribute(w: &str) -> bool {
    lexicon::COUNT_ATTRIBUTES.contains(&w) || lexicon::YEAR_ATTRIBUTES.contains(&w)
}

pub fn is_value(w: &str) -> bool {
    w.parse::<u32>()
        .map(|v| lexicon::COUNT_RANGE.contains(&v) || lexicon::YEAR_RANGE.contains(&v))
        .unwrap_or(false)
}

pub fn parse_claim(claim: &str) -> Option<ClaimForm> {
    let w: Vec<&str> = claim.split_whitespace().collect();
    match w.as_slice() {
        [e, "'s", a, "is", v] if is_entity(e) && is_attribute(a) && is_value(v) => {
            Some(ClaimForm::Direct {
                entity: (*e).into(),
                attribute: (*a).into(),
                value: (*v).into(),
            })
        }
        [e, "'s", r, "'s", a, "is", v]
            if *r == RELATION && is_entity(e) && is_attribute(a) && is_value(v) =>
        {
            Some(ClaimForm::TwoHop {
                entity: (*e).into(),
                attribute: (*a).into(),
                value: (*v).into(),
            })
        }
        _ => None,
    }
}

/// Parses a question of the form `E 's X ?` into `(E, X)`.
pub fn parse_question(question: &str) -> Option<(String, String)> {
    let w: Vec<&str> = question.split_whitespace().collect();
    match w.as_slice() {
        [e, "'s", x, "?"] if is_entity(e) => Some(((*e).into(), (*x).into())),
        _ => None,
    }
}

/// (entity, attribute-or-relation) → answer, over parseable evidence pairs.
pub fn evidence_table(instance: &ClaimInstance) -> HashMap<(String, String), String> {
    instance
        .evidence
        .iter()
        .filter_map(|p| parse_question(&p.question).map(|k| (k, p.answer.trim().to_owned())))
        .collect()
}

pub fn resolve(instance: &ClaimInstance) -> Option<Resolution> {
    let form = parse_claim(&instance.claim)?;
    let table = evidence_table(instance);
    let (subject, intermediate) = match &form {
        ClaimForm::Direct { entity, .. } => (entity.clone(), None),
        ClaimForm::TwoHop { entity, .. } => {
            let f = table.get(&(entity.clone(), RELATION.to_owned()))?;
            if !is_entity(f) {
                return None;
            }
            (f.clone(), Some(f.clone()))
        }
    };
    let deciding_value = table
        .get(&(subject.clone(), form.attribute().to_owned()))?
        .clone();
    let verdict = if deciding_value == form.claimed_value() {
        Verdict::Supported
    } else {
        Verdict::Refuted
    };
    Some(Resolution {
        form,
        intermediate,
        subject,
        deciding_value,
        verdict,
    })
}

/// Gold verdict recomputed from the claim and evidence alone.
pub fn derive_verdict(instance: &ClaimInstance) -> Option<Verdict> {
    resolve(instance).map(|r| r.verdict)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StanceCounts {
    pub support: usize,
    pub refute: usize,
}

impl StanceCounts {
    pub fn total(&self) -> usize {
        self.support + self.refute
    }

    pub fn majority(&self) -> Option<Verdict> {
        match self.support.cmp(&self.refute) {
            std::cmp::Ordering::Greater => Some(Verdict::Supported),
            std::cmp::Ordering::Less => Some(Verdict::Refuted),
            std::cmp::Ordering::Equal => None,
        }
    }
}

pub fn word_stance(w: &str) -> Option<Verdict> {
    if lexicon::SUPPORT_STANCE.contains(&w) {
        Some(Verdict::Supported)
    } else if lexicon::REFUTE_STANCE.contains(&w) {
        Some(Verdict::Refuted)
    } else {
        None
    }
}

pub fn stance_counts<'a>(words: impl IntoIterator<Item = &'a str>) -> StanceCounts {
    let mut c = StanceCounts::default();
    for w in words {
        match word_stance(w) {
            Some(Verdict::Supported) => c.support += 1,
            Some(Verdict::Refuted) => c.refute += 1,
            None => {}
        }
    }
    c
}

/// A fact a justification asserts about the evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CitedFact {
    pub entity: String,
    pub attribute: String,
    pub value: String,
    /// `(E, F)` when the justification also asserts `E 's rival is F`.
    pub relation: Option<(String, String)>,
}

/// Extracts the last `E 's A is V` statement (and any preceding relation statement).
pub fn cited_fact(justification: &str) -> Option<CitedFact> {
    let w: Vec<&str> = justification.split_whitespace().collect();
    let mut fact: Option<CitedFact> = None;
    let mut relation = None;
    for win in w.windows(5) {
        if let [e, "'s", x, "is", v] = win {
            if !is_entity(e) {
                continue;
            }
            if *x == RELATION && is_entity(v) {
                relation = Some(((*e).to_owned(), (*v).to_owned()));
            } else if is_attribute(x) && is_value(v) {
                fact = Some(CitedFact {
                    entity: (*e).into(),
                    attribute: (*x).into(),
                    value: (*v).into(),
                    relation: None,
                });
            }
        }
    }
    fact.map(|mut f| {
        f.relation = relation;
        f
    })
}

/// Verdict a justification argues for: stance-word majority, falling back to
/// comparing the cited value with the claimed value.
pub fn implied_verdict(instance: &ClaimInstance, justification: &str) -> Option<Verdict> {
    if let Some(v) = stance_counts(justification.split_whitespace()).majority() {
        return Some(v);
    }
    let claimed = parse_claim(&instance.claim)?;
    let fact = cited_fact(justification)?;
    Some(if fact.value == claimed.claimed_value() {
        Verdict::Supported
    } else {
        Verdict::Refuted
    })
}
