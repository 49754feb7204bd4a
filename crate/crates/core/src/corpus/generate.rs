use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{self, RELATION};
use super::{ClaimInstance, EvidencePair, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n: usize,
    pub refuted_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_two_hop")]
    pub two_hop_fraction: f64,
}

fn default_two_hop() -> f64 {
    0.25
}

impl CorpusSpec {
    pub fn new(n: usize, refuted_fraction: f64, seed: u64) -> Self {
        Self {
            n,
            refuted_fraction,
            seed,
            two_hop_fraction: default_two_hop(),
        }
    }

    pub fn generate(&self) -> Vec<ClaimInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_refuted = ((self.n as f64) * self.refuted_fraction.clamp(0.0, 1.0)).round() as usize;
        let mut labels: Vec<Verdict> = (0..self.n)
            .map(|i| {
                if i < n_refuted {
                    Verdict::Refuted
                } else {
                    Verdict::Supported
                }
            })
            .collect();
        labels.shuffle(&mut rng);
        labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let two_hop = rng.gen_bool(self.two_hop_fraction.clamp(0.0, 1.0));
                generate_instance(
                    &mut rng,
                    format!("syn-{}-{i:05}", self.seed),
                    label,
                    two_hop,
                )
            })
            .collect()
    }
}

/// Claims `E 's A is V` (or two-hop `E 's rival 's A is V`) with 1–3 QA evidence
/// pairs; Supported iff the deciding evidence value equals the claimed value.
pub fn generate_corpus(n: usize, refuted_fraction: f64, seed: u64) -> Vec<ClaimInstance> {
    CorpusSpec::new(n, refuted_fraction, seed).generate()
}

pub(crate) fn value_pool(attribute: &str) -> Vec<String> {
    if lexicon::is_year_attribute(attribute) {
        lexicon::year_values().collect()
    } else {
        lexicon::count_values().collect()
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn all_attributes() -> Vec<&'static str> {
    lexicon::COUNT_ATTRIBUTES
        .iter()
        .chain(lexicon::YEAR_ATTRIBUTES.iter())
        .copied()
        .collect()
}

fn question(entity: &str, key: &str) -> String {
    format!("{entity} 's {key} ?")
}

fn generate_instance<R: Rng>(
    rng: &mut R,
    id: String,
    label: Verdict,
    two_hop: bool,
) -> ClaimInstance {
    let attrs = all_attributes();
    let attribute = pick(rng, &attrs);
    let pool = value_pool(attribute);
    let entity = pick(rng, &lexicon::ENTITIES);
    let deciding = pool[rng.gen_range(0..pool.len())].clone();
    let claimed = match label {
        Verdict::Supported => deciding.clone(),
        Verdict::Refuted => loop {
            let v = &pool[rng.gen_range(0..pool.len())];
            if *v != deciding {
                break v.clone();
            }
        },
    };
    let random_value = |rng: &mut R| pool[rng.gen_range(0..pool.len())].clone();

    let mut evidence = Vec::new();
    let (claim, fact) = if two_hop {
        let rival = loop {
            let f = pick(rng, &lexicon::ENTITIES);
            if f != entity {
                break f;
            }
        };
        evidence.push(EvidencePair {
            question: question(entity, RELATION),
            answer: rival.into(),
        });
        evidence.push(EvidencePair {
            question: question(rival, attribute),
            answer: deciding.clone(),
        });
        if rng.gen_bool(0.6) {
            // the claim's own entity carries a decoy value for the same attribute
            evidence.push(EvidencePair {
                question: question(entity, attribute),
                answer: random_value(rng),
            });
        }
        (
            format!("{entity} 's {RELATION} 's {attribute} is {claimed}"),
            render_fact(rival, attribute, &deciding, Some((entity, rival))),
        )
    } else {
        evidence.push(EvidencePair {
            question: question(entity, attribute),
            answer: deciding.clone(),
        });
        let distractors = rng.gen_range(0..=2);
        for _ in 0..distractors {
            let pair = if rng.gen_bool(0.5) {
                let other_attr = loop {
                    let a = pick(rng, &attrs);
                    if a != attribute {
                        break a;
                    }
                };
                let other_pool = value_pool(other_attr);
                let v = other_pool[rng.gen_range(0..other_pool.len())].clone();
                EvidencePair {
                    question: question(entity, other_attr),
                    answer: v,
                }
            } else {
                let other = loop {
                    let e = pick(rng, &lexicon::ENTITIES);
                    if e != entity {
                        break e;
                    }
                };
                EvidencePair {
                    question: question(other, attribute),
                    answer: random_value(rng),
                }
            };
            if evidence.iter().all(|p| p.question != pair.question) {
                evidence.push(pair);
            }
        }
        (
            format!("{entity} 's {attribute} is {claimed}"),
            render_fact(entity, attribute, &deciding, None),
        )
    };
    evidence.shuffle(rng);
    let template = rng.gen_range(0..TEMPLATE_VARIANTS);
    let gold_justification = render_justification(label, template, &fact, &claimed);
    ClaimInstance {
        id,
        claim,
        evidence,
        gold_verdict: label,
        gold_justification,
    }
}

pub(crate) const TEMPLATE_VARIANTS: usize = 3;

pub(crate) fn render_fact(
    subject: &str,
    attribute: &str,
    value: &str,
    relation: Option<(&str, &str)>,
) -> String {
    match relation {
        Some((e, f)) => format!("{e} 's {RELATION} is {f} and {subject} 's {attribute} is {value}"),
        None => format!("{subject} 's {attribute} is {value}"),
    }
}

pub(crate) fn render_justification(
    stance: Verdict,
    template: usize,
    fact: &str,
    claimed: &str,
) -> String {
    match (stance, template % TEMPLATE_VARIANTS) {
        (Verdict::Supported, 0) => format!(
            "the evidence says {fact} , which matches the claim , so the claim is supported ."
        ),
        (Verdict::Supported, 1) => {
            format!("the evidence says {fact} , which confirms the claim , so the claim is true .")
        }
        (Verdict::Supported, _) => {
            format!("the evidence says {fact} , which is consistent with the claim , so it is correctly stated .")
        }
        (Verdict::Refuted, 0) => {
            format!("the evidence says {fact} , not {claimed} , which contradicts the claim , so the claim is false .")
        }
        (Verdict::Refuted, 1) => {
            format!("the evidence says {fact} , so there is no evidence for {claimed} and the claim is refuted .")
        }
        (Verdict::Refuted, _) => {
            format!("the evidence says {fact} , which is inconsistent with {claimed} , so the claim is a hoax .")
        }
    }
}

/// Which template variant produced a gold justification, if any.
pub(crate) fn template_of(justification: &str) -> Option<usize> {
    let markers = [
        ("matches", 0),
        ("confirms", 1),
        ("consistent", 2),
        ("contradicts", 0),
        ("refuted", 1),
        ("inconsistent", 2),
    ];
    let words: Vec<&str> = justification.split_whitespace().collect();
    // "inconsistent" must win over "consistent"
    markers
        .iter()
        .rev()
        .find(|(m, _)| words.contains(m))
        .map(|(_, t)| *t)
}
