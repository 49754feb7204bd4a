use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::{render_fact, render_justification, template_of, value_pool};
use super::rules::{self, Resolution};
use super::{ClaimInstance, Verdict};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorruptionKind {
    /// Cites a different value for the deciding fact and argues from it.
    ValueSwap,
    /// Cites the correct fact but argues the opposite verdict.
    StanceFlip,
    /// Cites a value that appears nowhere in the evidence.
    HallucinatedFact,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 3] =
        [Self::ValueSwap, Self::StanceFlip, Self::HallucinatedFact];
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::ValueSwap => "ValueSwap",
            Self::StanceFlip => "StanceFlip",
            Self::HallucinatedFact => "HallucinatedFact",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptedJustification {
    pub instance_id: String,
    pub text: String,
    pub corruption_kind: CorruptionKind,
}

fn seed_for(instance_id: &str, seed: u64) -> u64 {
    use sha2::{Digest, Sha256};
    let d = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(instance_id.as_bytes())
        .finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn fact_for(res: &Resolution, value: &str) -> String {
    let relation = match (&res.form, &res.intermediate) {
        (rules::ClaimForm::TwoHop { entity, .. }, Some(f)) => Some((entity.as_str(), f.as_str())),
        _ => None,
    };
    render_fact(&res.subject, res.form.attribute(), value, relation)
}

pub fn corrupt_justification(
    instance: &ClaimInstance,
    kind: CorruptionKind,
    seed: u64,
) -> Result<CorruptedJustification> {
    let incompatible = |reason: &str| Error::IncompatibleCorruption {
        instance: instance.id.clone(),
        kind: kind.to_string(),
        reason: reason.to_owned(),
    };
    let res = rules::resolve(instance)
        .ok_or_else(|| incompatible("claim or evidence outside the rule grammar"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(&instance.id, seed));
    let template = template_of(&instance.gold_justification).unwrap_or_else(|| rng.gen_range(0..3));
    let claimed = res.form.claimed_value().to_owned();
    let pool = value_pool(res.form.attribute());
    let evidence_values: Vec<&str> = instance.evidence.iter().map(|p| p.answer.trim()).collect();

    let (value, stance) = match kind {
        CorruptionKind::StanceFlip => (res.deciding_value.clone(), res.verdict.flipped()),
        CorruptionKind::ValueSwap => {
            let v = match res.verdict {
                Verdict::Supported => {
                    let others: Vec<&String> =
                        pool.iter().filter(|v| **v != res.deciding_value).collect();
                    others[rng.gen_range(0..others.len())].clone()
                }
                Verdict::Refuted => claimed.clone(),
            };
            let stance = if v == claimed {
                Verdict::Supported
            } else {
                Verdict::Refuted
            };
            (v, stance)
        }
        CorruptionKind::HallucinatedFact => {
            if res.verdict == Verdict::Refuted && !evidence_values.contains(&claimed.as_str()) {
                (claimed.clone(), Verdict::Supported)
            } else {
                let absent: Vec<&String> = pool
                    .iter()
                    .filter(|v| !evidence_values.contains(&v.as_str()) && **v != claimed)
                    .collect();
                if absent.is_empty() {
                    return Err(incompatible("no value absent from the evidence"));
                }
                (
                    absent[rng.gen_range(0..absent.len())].clone(),
                    Verdict::Refuted,
                )
            }
        }
    };
    let text = render_justification(stance, template, &fact_for(&res, &value), &claimed);
    Ok(CorruptedJustification {
        instance_id: instance.id.clone(),
        text,
        corruption_kind: kind,
    })
}

/// Mechanical check that a corrupted justification is what its kind says.
pub fn verify_corruption(instance: &ClaimInstance, corrupted: &CorruptedJustification) -> bool {
    let (Some(res), Some(fact)) = (rules::resolve(instance), rules::cited_fact(&corrupted.text))
    else {
        return false;
    };
    let implied = rules::implied_verdict(instance, &corrupted.text);
    match corrupted.corruption_kind {
        CorruptionKind::ValueSwap => {
            fact.value != res.deciding_value && implied == Some(res.verdict.flipped())
        }
        CorruptionKind::StanceFlip => {
            fact.value == res.deciding_value
                && rules::stance_counts(corrupted.text.split_whitespace()).majority()
                    == Some(res.verdict.flipped())
        }
        CorruptionKind::HallucinatedFact => instance
            .evidence
            .iter()
            .all(|p| p.answer.trim() != fact.value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, EvidencePair};

    fn supported_seven() -> ClaimInstance {
        ClaimInstance {
            id: "fx-1".into(),
            claim: "Kelo 's rank is 7".into(),
            evidence: vec![EvidencePair { question: "Kelo 's rank ?".into(), answer: "7".into() }],
            gold_verdict: Verdict::Supported,
            gold_justification: "the evidence says Kelo 's rank is 7 , which matches the claim , so the claim is supported ."
                .into(),
        }
    }

    #[test]
    fn value_swap_implies_refuted() {
        let inst = supported_seven();
        let c = corrupt_justification(&inst, CorruptionKind::ValueSwap, 1).unwrap();
        let fact = rules::cited_fact(&c.text).unwrap();
        assert_ne!(fact.value, "7");
        assert_eq!(
            rules::implied_verdict(&inst, &c.text),
            Some(Verdict::Refuted)
        );
        assert!(verify_corruption(&inst, &c));
    }

    #[test]
    fn stance_flip_on_refuted_claims_match() {
        let inst = generate_corpus(40, 1.0, 2).into_iter().next().unwrap();
        assert_eq!(inst.gold_verdict, Verdict::Refuted);
        let c = corrupt_justification(&inst, CorruptionKind::StanceFlip, 1).unwrap();
        assert_eq!(
            rules::implied_verdict(&inst, &c.text),
            Some(Verdict::Supported)
        );
        assert!(verify_corruption(&inst, &c));
    }

    #[test]
    fn hallucinated_year_is_absent() {
        let inst = ClaimInstance {
            id: "fx-2".into(),
            claim: "Mira 's elected is 2004".into(),
            evidence: vec![EvidencePair {
                question: "Mira 's elected ?".into(),
                answer: "2004".into(),
            }],
            gold_verdict: Verdict::Supported,
            gold_justification: String::new(),
        };
        let c = corrupt_justification(&inst, CorruptionKind::HallucinatedFact, 3).unwrap();
        let fact = rules::cited_fact(&c.text).unwrap();
        assert!(fact.value.parse::<u32>().unwrap() >= 1990);
        assert_ne!(fact.value, "2004");
        assert!(verify_corruption(&inst, &c));
    }

    #[test]
    fn every_kind_verifies_over_corpus() {
        for inst in generate_corpus(300, 0.5, 4) {
            for kind in CorruptionKind::ALL {
                let c = corrupt_justification(&inst, kind, 9).unwrap();
                assert!(
                    verify_corruption(&inst, &c),
                    "{kind} {inst:?} -> {}",
                    c.text
                );
                if kind != CorruptionKind::HallucinatedFact {
                    assert_ne!(
                        rules::implied_verdict(&inst, &c.text),
                        Some(inst.gold_verdict)
                    );
                }
            }
        }
    }

    #[test]
    fn incompatible_shape() {
        let mut inst = supported_seven();
        inst.claim = "something else entirely".into();
        assert!(matches!(
            corrupt_justification(&inst, CorruptionKind::StanceFlip, 0),
            Err(Error::IncompatibleCorruption { .. })
        ));
    }
}
