//! Rule-based oracle denoiser with a controllable justification→verdict dependence.
//!
//! Every masked position receives `P = (1 - ε)·target + ε/|V|` with
//! `ε = UNIFORM_MASS`. Targets:
//!
//! * Structure slots: the scaffold token with mass 1.
//! * Justification slot `j`: the gold justification token (padded to the span)
//!   with mass `q_j ∈ [0.55, 0.95)`; with probability `η` the slot is corrupted
//!   and a distractor takes mass `q_j` instead. Corruption, `q_j` and the
//!   distractor are fixed per `(seed, instance, j)`.
//! * Verdict slot: with `n_s`/`n_r` supporting/refuting stance words among the
//!   revealed justification tokens and `n = n_s + n_r`,
//!   `λ = w·n / (1 + w·n)`, `p_S = (1 - λ)·prior_S + λ·(n_s + ½)/(n + 1)`,
//!   where `prior_S` is `VERDICT_PRIOR` for a Supported gold verdict and
//!   `1 - VERDICT_PRIOR` otherwise.

use serde::{Deserialize, Serialize};

use super::stub::mix;
use super::{
    check_predict_args, top_k, Denoiser, DenoiserOutput, DenoiserProvider, PositionPrediction,
};
use crate::corpus::{lexicon, rules, ClaimInstance, Verdict};
use crate::error::{Error, Result};
use crate::layout::{Role, SequenceLayout};
use crate::state::SeqState;
use crate::vocab::{TokenId, Vocabulary};

pub const UNIFORM_MASS: f64 = 1e-3;
pub const VERDICT_PRIOR: f64 = 0.97;

const SUPPORT_DISTRACTORS: [&str; 4] = ["matches", "confirms", "shows", "true"];
const REFUTE_DISTRACTORS: [&str; 4] = ["contradicts", "not", "hoax", "differs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Probability η that a justification slot predicts a distractor.
    pub justification_noise_rate: f64,
    /// How strongly the verdict follows revealed stance words.
    pub conditioning_weight: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            justification_noise_rate: 0.0,
            conditioning_weight: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.justification_noise_rate) {
            return Err(Error::Config(
                "justification_noise_rate must lie in [0, 1]".into(),
            ));
        }
        if !(self.conditioning_weight >= 0.0 && self.conditioning_weight.is_finite()) {
            return Err(Error::Config(
                "conditioning_weight must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

#[derive(Debug, Clone)]
enum Target {
    Fixed(TokenId),
    Pair {
        top: TokenId,
        top_mass: f64,
        alt: TokenId,
    },
    Verdict,
}

/// Oracle bound to one instance and layout.
#[derive(Debug, Clone)]
pub struct BoundOracle<'a> {
    vocab: &'a Vocabulary,
    layout: &'a SequenceLayout,
    instance: &'a ClaimInstance,
    cfg: OracleConfig,
    prompt: Vec<TokenId>,
    targets: Vec<Target>,
}

impl<'a> BoundOracle<'a> {
    pub fn new(
        vocab: &'a Vocabulary,
        layout: &'a SequenceLayout,
        instance: &'a ClaimInstance,
        cfg: OracleConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let prompt = instance.prompt_tokens(vocab, layout.prompt_len)?;
        let gold = instance.gold_verdict;
        let just = instance.justification_tokens(vocab);
        let slots = layout.justification_len();
        if just.len() > slots {
            return Err(Error::JustificationTooLong {
                len: just.len(),
                slots,
            });
        }
        let words = |list: &[&str]| list.iter().filter_map(|w| vocab.id(w)).collect::<Vec<_>>();
        let opposing = match gold {
            Verdict::Supported => words(&REFUTE_DISTRACTORS),
            Verdict::Refuted => words(&SUPPORT_DISTRACTORS),
        };
        let fillers = words(&lexicon::FILLER_WORDS);
        let base = cfg.seed ^ mix(id_hash(&instance.id));
        let mut j = 0usize;
        let targets = (0..layout.output_len)
            .map(|i| match layout.roles[i] {
                Role::Structure => Target::Fixed(
                    layout
                        .structure_token(layout.prompt_len + i, vocab)
                        .unwrap_or(vocab.unk_id),
                ),
                Role::Verdict => Target::Verdict,
                Role::Justification => {
                    let g = just.get(j).copied().unwrap_or(vocab.pad_id);
                    let h = mix(base ^ mix(j as u64 + 1));
                    let corrupted = unit(mix(h ^ 1)) < cfg.justification_noise_rate;
                    let top_mass = 0.55 + 0.4 * unit(mix(h ^ 2));
                    let pick = mix(h ^ 3);
                    j += 1;
                    if corrupted {
                        let pool = if unit(mix(h ^ 4)) < 0.5 {
                            &opposing
                        } else {
                            &fillers
                        };
                        let mut d = pool[(pick % pool.len() as u64) as usize];
                        if d == g {
                            d = pool[((pick + 1) % pool.len() as u64) as usize];
                        }
                        Target::Pair {
                            top: d,
                            top_mass,
                            alt: g,
                        }
                    } else {
                        let mut alt = fillers[(pick % fillers.len() as u64) as usize];
                        if alt == g {
                            alt = vocab.pad_id;
                        }
                        Target::Pair {
                            top: g,
                            top_mass,
                            alt,
                        }
                    }
                }
            })
            .collect();
        Ok(Self {
            vocab,
            layout,
            instance,
            cfg,
            prompt,
            targets,
        })
    }

    /// Probability of Supported at the verdict slot given the revealed context.
    pub fn verdict_support_probability(&self, state: &SeqState) -> f64 {
        let revealed = self
            .layout
            .justification_positions()
            .into_iter()
            .filter(|&p| !state.masked[p])
            .map(|p| self.vocab.surface_or_unk(state.tokens[p]));
        let c = rules::stance_counts(revealed);
        let n = c.total() as f64;
        let w = self.cfg.conditioning_weight;
        let lambda = w * n / (1.0 + w * n);
        let prior = match self.instance.gold_verdict {
            Verdict::Supported => VERDICT_PRIOR,
            Verdict::Refuted => 1.0 - VERDICT_PRIOR,
        };
        let stance = (c.support as f64 + 0.5) / (n + 1.0);
        (1.0 - lambda) * prior + lambda * stance
    }

    /// Full-vocabulary log-probabilities at one output position.
    pub fn logprobs(&self, state: &SeqState, pos: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let mut probs = vec![UNIFORM_MASS / v as f64; v];
        let mut add = |t: TokenId, m: f64| probs[t as usize] += (1.0 - UNIFORM_MASS) * m;
        match &self.targets[pos - self.layout.prompt_len] {
            Target::Fixed(t) => add(*t, 1.0),
            Target::Pair { top, top_mass, alt } => {
                add(*top, *top_mass);
                add(*alt, 1.0 - top_mass);
            }
            Target::Verdict => {
                let p = self.verdict_support_probability(state);
                add(self.vocab.label_proxy_supported, p);
                add(self.vocab.label_proxy_refuted, 1.0 - p);
            }
        }
        probs.into_iter().map(f64::ln).collect()
    }

    pub fn instance(&self) -> &ClaimInstance {
        self.instance
    }
}

impl Denoiser for BoundOracle<'_> {
    fn predict(&self, state: &SeqState, k: usize) -> Result<DenoiserOutput> {
        check_predict_args(state, k)?;
        if state.len() != self.layout.total_len()
            || state.tokens[..self.layout.prompt_len] != self.prompt[..]
        {
            return Err(Error::InstanceMismatch {
                instance: self.instance.id.clone(),
            });
        }
        let predictions = state
            .masked_positions()
            .map(|p| {
                if p < self.layout.prompt_len {
                    return Err(Error::InstanceMismatch {
                        instance: self.instance.id.clone(),
                    });
                }
                Ok(PositionPrediction {
                    position: p,
                    candidates: top_k(&self.logprobs(state, p), k),
                })
            })
            .collect::<Result<_>>()?;
        Ok(DenoiserOutput { predictions })
    }

    fn describe(&self) -> String {
        format!(
            "oracle(eta={}, weight={}, seed={})",
            self.cfg.justification_noise_rate, self.cfg.conditioning_weight, self.cfg.seed
        )
    }
}

/// Binds a [`BoundOracle`] per instance.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    pub vocab: Vocabulary,
    pub cfg: OracleConfig,
}

impl OracleProvider {
    pub fn new(vocab: Vocabulary, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { vocab, cfg })
    }
}

impl DenoiserProvider for OracleProvider {
    fn for_instance<'a>(
        &'a self,
        instance: &'a ClaimInstance,
        layout: &'a SequenceLayout,
    ) -> Result<Box<dyn Denoiser + 'a>> {
        Ok(Box::new(BoundOracle::new(
            &self.vocab,
            layout,
            instance,
            self.cfg.clone(),
        )?))
    }

    fn describe(&self) -> String {
        format!(
            "oracle(eta={}, weight={}, seed={})",
            self.cfg.justification_noise_rate, self.cfg.conditioning_weight, self.cfg.seed
        )
    }
}

/// Convenience over [`BoundOracle::predict`].
pub fn oracle_predict(
    state: &SeqState,
    instance: &ClaimInstance,
    layout: &SequenceLayout,
    vocab: &Vocabulary,
    cfg: &OracleConfig,
    k: usize,
) -> Result<DenoiserOutput> {
    BoundOracle::new(vocab, layout, instance, cfg.clone())?.predict(state, k)
}
