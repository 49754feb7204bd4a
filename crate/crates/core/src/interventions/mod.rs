//! Experimental protocols: ordering comparison, deliberation sweep, the
//! Integrity Test (forced wrong verdict) and the Reliance Test (forced
//! justification context).
//!
//! Every protocol decodes instances independently, collects per-instance
//! failures without aborting, and returns results sorted by instance id.

mod judge;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use judge::{judge, JudgeVerdictCategory};

use crate::constraints::{ConstraintSet, GateBasis};
use crate::corpus::rules::implied_verdict;
use crate::corpus::{corrupt_justification, ClaimInstance, CorruptionKind, Verdict};
use crate::decoder::{decode, DecodeOptions, Trajectory};
use crate::denoiser::DenoiserProvider;
use crate::error::{Error, Result};
use crate::layout::{Role, SequenceLayout};
use crate::leak::apply_leak_mask;
use crate::state::{init_state, SeqState};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Ordering,
    Deliberation,
    Integrity,
    Reliance,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Ordering => "ordering",
            Protocol::Deliberation => "deliberation",
            Protocol::Integrity => "integrity",
            Protocol::Reliance => "reliance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionResult {
    pub instance_id: String,
    pub protocol: Protocol,
    /// What was hard-coded before decoding.
    pub forced_inputs: String,
    /// sha256 over the frozen (position, token) pairs.
    pub forced_digest: String,
    /// Trajectory log path relative to the protocol's run directory.
    pub trajectory_ref: String,
    /// `None` when the verdict slot decoded to a non-label token.
    pub predicted_verdict: Option<Verdict>,
    pub gold_verdict: Verdict,
    pub category: Option<JudgeVerdictCategory>,
    /// Verdict the frozen justification context argues for (Reliance Test).
    pub context_verdict: Option<Verdict>,
}

impl InterventionResult {
    pub fn correct(&self) -> bool {
        self.predicted_verdict == Some(self.gold_verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub protocol: Protocol,
    pub results: Vec<InterventionResult>,
    /// Parallel to `results`.
    pub trajectories: Vec<Trajectory>,
    pub failures: Vec<InstanceFailure>,
}

impl ProtocolRun {
    pub fn accuracy(&self) -> f64 {
        if self.results.is_empty() {
            return 0.0;
        }
        self.results.iter().filter(|r| r.correct()).count() as f64 / self.results.len() as f64
    }

    /// Judge categories by name, including zero counts.
    pub fn category_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out: BTreeMap<&'static str, usize> = [
            "LogicalIntegrity",
            "LogicalError",
            "Cherrypicking",
            "VerdictJustificationMismatch",
            "FactualHallucination",
            "Other",
        ]
        .into_iter()
        .map(|n| (n, 0))
        .collect();
        for c in self.results.iter().filter_map(|r| r.category.as_ref()) {
            *out.entry(c.name()).or_default() += 1;
        }
        out
    }
}

/// Shared knobs for every protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub decode: DecodeOptions,
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            decode: DecodeOptions::default(),
            workers: 1,
        }
    }
}

/// Where Reliance-Test justification context comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JustificationSource {
    GroundTruth,
    /// Instance id → justification text.
    Corrupted(BTreeMap<String, String>),
}

impl JustificationSource {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GroundTruth => "ground_truth",
            Self::Corrupted(_) => "corrupted",
        }
    }
}

/// Justifications decoded by an Integrity-Test run, keyed by instance id.
pub fn integrity_justifications(run: &ProtocolRun, vocab: &Vocabulary) -> BTreeMap<String, String> {
    run.trajectories
        .iter()
        .map(|t| (t.instance_id.clone(), t.justification_text(vocab)))
        .collect()
}

/// Mechanically corrupted justifications for every compatible instance.
pub fn generated_corruptions(
    corpus: &[ClaimInstance],
    kind: CorruptionKind,
    seed: u64,
) -> BTreeMap<String, String> {
    corpus
        .iter()
        .filter_map(|i| corrupt_justification(i, kind, seed).ok())
        .map(|c| (c.instance_id, c.text))
        .collect()
}

pub fn trajectory_ref(instance_id: &str) -> String {
    let safe: String = instance_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("trajectories/{safe}.jsonl")
}

fn forced_digest(state: &SeqState, layout: &SequenceLayout) -> String {
    let mut h = Sha256::new();
    for p in layout.output_positions().filter(|&p| state.frozen[p]) {
        h.update((p as u64).to_le_bytes());
        h.update(state.tokens[p].to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Maps `f` over `items` on `workers` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

struct Prepared {
    state: SeqState,
    forced_inputs: String,
    context_verdict: Option<Verdict>,
}

#[allow(clippy::too_many_arguments)]
fn run_protocol(
    protocol: Protocol,
    corpus: &[ClaimInstance],
    provider: &dyn DenoiserProvider,
    vocab: &Vocabulary,
    layout: &SequenceLayout,
    cset: &ConstraintSet,
    opts: RunOptions,
    prepare: impl Fn(&ClaimInstance, SeqState) -> Result<Prepared> + Sync,
    categorize: impl Fn(&ClaimInstance, &Trajectory) -> Option<JudgeVerdictCategory> + Sync,
) -> Result<ProtocolRun> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cset.validate()?;
    let outcomes = par_map(
        corpus,
        opts.workers,
        |inst| -> Result<(InterventionResult, Trajectory)> {
            let prompt = inst.prompt_tokens(vocab, layout.prompt_len)?;
            let prepared = prepare(inst, init_state(layout, &prompt, vocab)?)?;
            let digest = forced_digest(&prepared.state, layout);
            let denoiser = provider.for_instance(inst, layout)?;
            let traj = decode(
                &inst.id,
                prepared.state,
                denoiser.as_ref(),
                cset,
                layout,
                vocab,
                opts.decode,
            )?;
            let result = InterventionResult {
                instance_id: inst.id.clone(),
                protocol,
                forced_inputs: prepared.forced_inputs,
                forced_digest: digest,
                trajectory_ref: trajectory_ref(&inst.id),
                predicted_verdict: traj.final_verdict,
                gold_verdict: inst.gold_verdict,
                category: categorize(inst, &traj),
                context_verdict: prepared.context_verdict,
            };
            Ok((result, traj))
        },
    );
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (inst, outcome) in corpus.iter().zip(outcomes) {
        match outcome {
            Ok(pair) => ok.push(pair),
            Err(e) => failures.push(InstanceFailure {
                instance_id: inst.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    ok.sort_by(|a, b| a.0.instance_id.cmp(&b.0.instance_id));
    failures.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    let (results, trajectories) = ok.into_iter().unzip();
    Ok(ProtocolRun {
        protocol,
        results,
        trajectories,
        failures,
    })
}

fn unforced(_: &ClaimInstance, state: SeqState) -> Result<Prepared> {
    Ok(Prepared {
        state,
        forced_inputs: "none".into(),
        context_verdict: None,
    })
}

/// Decodes every instance at p=0 under the layout's order mode.
pub fn run_ordering(
    corpus: &[ClaimInstance],
    provider: &dyn DenoiserProvider,
    vocab: &Vocabulary,
    layout: &SequenceLayout,
    opts: RunOptions,
) -> Result<ProtocolRun> {
    let cset = ConstraintSet::new(0, GateBasis::OutputSpan);
    run_protocol(
        Protocol::Ordering,
        corpus,
        provider,
        vocab,
        layout,
        &cset,
        opts,
        unforced,
        |_, _| None,
    )
}

/// Decodes every instance under an arbitrary constraint set.
pub fn run_decode(
    corpus: &[ClaimInstance],
    provider: &dyn DenoiserProvider,
    vocab: &Vocabulary,
    layout: &SequenceLayout,
    cset: &ConstraintSet,
    opts: RunOptions,
) -> Result<ProtocolRun> {
    let protocol = if cset.deliberation_pct == 0 {
        Protocol::Ordering
    } else {
        Protocol::Deliberation
    };
    run_protocol(
        protocol,
        corpus,
        provider,
        vocab,
        layout,
        cset,
        opts,
        unforced,
        |_, _| None,
    )
}

/// One run per deliberation percentage, in `p_list` order. `base` supplies
/// the basis and gated roles.
pub fn run_deliberation_sweep(
    corpus: &[ClaimInstance],
    provider: &dyn DenoiserProvider,
    vocab: &Vocabulary,
    layout: &SequenceLayout,
    p_list: &[u8],
    base: &ConstraintSet,
    opts: RunOptions,
) -> Result<Vec<(u8, ProtocolRun)>> {
    if p_list.is_empty() {
        return Err(Error::Config("p_list must not be empty".into()));
    }
    p_list
        .iter()
        .map(|&p| {
            let cset = ConstraintSet {
                deliberation_pct: p,
                ..base.clone()
            };
            run_protocol(
                Protocol::Deliberation,
                corpus,
                provider,
                vocab,
                layout,
                &cset,
                opts,
                unforced,
                |_, _| None,
            )
            .map(|r| (p, r))
        })
        .collect()
}

/// Freezes the verdict slot to the wrong label, decodes the rest, and judges
/// the resulting justification.
pub fn run_integrity_test(
    corpus: &[ClaimInstance],
    provider: &dyn DenoiserProvider,
    vocab: &Vocabulary,
    layout: &SequenceLayout,
    opts: RunOptions,
) -> Result<ProtocolRun> {
    let cset = ConstraintSet::new(0, GateBasis::OutputSpan);
    let prepare = |inst: &ClaimInstance, mut state: SeqState| {
        let wrong = inst.gold_verdict.flipped();
        state.freeze(&[(layout.verdict_pos(), wrong.proxy(vocab))])?;
        Ok(Prepared {
            state,
            forced_inputs: format!("verdict={}", vocab.surface_or_unk(wrong.proxy(vocab))),
            context_verdict: None,
        })
    };
    let categorize = |inst: &ClaimInstance, traj: &Trajectory| {
        Some(judge(
            inst,
            inst.gold_verdict.flipped(),
            &traj.justification_text(vocab),
        ))
    };
    run_protocol(
        Protocol::Integrity,
        corpus,
        provider,
        vocab,
        layout,
        &cset,
        opts,
        prepare,
        categorize,
    )
}

/// Freeze assignments for a justification context: structure scaffold plus
/// every justification slot except leak-flagged ones, which stay masked.
pub fn reliance_assignments(
    layout: &SequenceLayout,
    vocab: &Vocabulary,
    justification: &[TokenId],
) -> Result<Vec<(usize, TokenId)>> {
    let slots = layout.justification_positions();
    if justification.len() > slots.len() {
        return Err(Error::JustificationTooLong {
            len: justification.len(),
            slots: slots.len(),
        });
    }
    let (tokens, kept) = apply_leak_mask(justification, vocab);
    let mut out: Vec<(usize, TokenId)> = layout
        .positions_with(Role::Structure)
        .into_iter()
        .filter_map(|p| layout.structure_token(p, vocab).map(|t| (p, t)))
        .collect();
    for (i, &p) in slots.iter().enumerate() {
        match tokens.get(i) {
            Some(&t) if kept[i] => out.push((p, t)),
            Some(_) => {}
            None => out.push((p, vocab.pad_id)),
        }
    }
    Ok(out)
}

/// Freezes a justification as context and decodes only the verdict slot and
/// leak-flagged positions.
pub fn run_reliance_test(
    corpus: &[ClaimInstance],
    provider: &dyn DenoiserProvider,
    vocab: &Vocabulary,
    layout: &SequenceLayout,
    source: &JustificationSource,
    opts: RunOptions,
) -> Result<ProtocolRun> {
    if let JustificationSource::Corrupted(map) = source {
        if let Some(missing) = corpus.iter().find(|i| !map.contains_key(&i.id)) {
            return Err(Error::MissingJustification(missing.id.clone()));
        }
    }
    let cset = ConstraintSet::new(0, GateBasis::OutputSpan);
    let prepare = |inst: &ClaimInstance, mut state: SeqState| {
        let text = match source {
            JustificationSource::GroundTruth => inst.gold_justification.as_str(),
            JustificationSource::Corrupted(map) => map[&inst.id].as_str(),
        };
        let assignments = reliance_assignments(layout, vocab, &vocab.tokenize(text))?;
        state.freeze(&assignments)?;
        Ok(Prepared {
            state,
            forced_inputs: format!("justification={}", source.name()),
            context_verdict: implied_verdict(inst, text),
        })
    };
    run_protocol(
        Protocol::Reliance,
        corpus,
        provider,
        vocab,
        layout,
        &cset,
        opts,
        prepare,
        |_, _| None,
    )
}

/// Frozen positions kept their tokens and were never chosen by a step.
pub fn frozen_context_intact(traj: &Trajectory) -> bool {
    let p0 = traj.layout.prompt_len;
    let frozen_kept = traj
        .frozen_output
        .iter()
        .zip(traj.initial_output.iter().zip(&traj.final_tokens))
        .all(|(f, (a, b))| !f || a == b);
    let never_chosen = traj
        .records
        .iter()
        .all(|r| !traj.frozen_output[r.chosen_position - p0]);
    frozen_kept && never_chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;
    use crate::denoiser::oracle::{OracleConfig, OracleProvider};
    use crate::layout::{build_layout, OrderMode, JSON_TEMPLATE};

    fn setup(n: usize) -> (Vec<ClaimInstance>, Vocabulary, SequenceLayout) {
        (
            generate_corpus(n, 0.5, 11),
            Vocabulary::standard(),
            build_layout(JSON_TEMPLATE, OrderMode::VerdictFirst, 64).unwrap(),
        )
    }

    fn noiseless(vocab: &Vocabulary) -> OracleProvider {
        OracleProvider::new(
            vocab.clone(),
            OracleConfig {
                justification_noise_rate: 0.0,
                conditioning_weight: 0.0,
                seed: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn noiseless_controls() {
        let (corpus, vocab, layout) = setup(30);
        let p = noiseless(&vocab);
        for order in [OrderMode::VerdictFirst, OrderMode::JustificationFirst] {
            let l = build_layout(JSON_TEMPLATE, order, 64).unwrap();
            assert_eq!(
                run_ordering(&corpus, &p, &vocab, &l, RunOptions::default())
                    .unwrap()
                    .accuracy(),
                1.0
            );
        }
        let sweep = run_deliberation_sweep(
            &corpus,
            &p,
            &vocab,
            &layout,
            &[0, 50, 90],
            &ConstraintSet::default(),
            RunOptions::default(),
        )
        .unwrap();
        assert!(sweep
            .iter()
            .all(|(_, r)| r.accuracy() == 1.0 && r.failures.is_empty()));
        let integ =
            run_integrity_test(&corpus, &p, &vocab, &layout, RunOptions::default()).unwrap();
        assert_eq!(integ.category_counts()["LogicalIntegrity"], 30);
        assert!(integ
            .trajectories
            .iter()
            .all(|t| t.records.len() == 63 && frozen_context_intact(t)));
    }

    #[test]
    fn reliance_freezes_context_and_decodes_leaks() {
        let (corpus, vocab, layout) = setup(20);
        let run = run_reliance_test(
            &corpus,
            &noiseless(&vocab),
            &vocab,
            &layout,
            &JustificationSource::GroundTruth,
            RunOptions::default(),
        )
        .unwrap();
        assert_eq!(run.accuracy(), 1.0);
        for (t, inst) in run.trajectories.iter().zip(&corpus_sorted(&corpus)) {
            assert!(frozen_context_intact(t));
            let (_, kept) = apply_leak_mask(&inst.justification_tokens(&vocab), &vocab);
            assert_eq!(t.records.len(), 1 + kept.iter().filter(|k| !**k).count());
        }
    }

    fn corpus_sorted(c: &[ClaimInstance]) -> Vec<ClaimInstance> {
        let mut c = c.to_vec();
        c.sort_by(|a, b| a.id.cmp(&b.id));
        c
    }

    #[test]
    fn missing_corruption_is_an_error() {
        let (corpus, vocab, layout) = setup(3);
        let src = JustificationSource::Corrupted(BTreeMap::new());
        assert!(matches!(
            run_reliance_test(
                &corpus,
                &noiseless(&vocab),
                &vocab,
                &layout,
                &src,
                RunOptions::default()
            ),
            Err(Error::MissingJustification(_))
        ));
    }

    #[test]
    fn workers_do_not_change_results() {
        let (corpus, vocab, layout) = setup(12);
        let p = noiseless(&vocab);
        let one = run_ordering(&corpus, &p, &vocab, &layout, RunOptions::default()).unwrap();
        let many = run_ordering(
            &corpus,
            &p,
            &vocab,
            &layout,
            RunOptions {
                workers: 4,
                ..RunOptions::default()
            },
        )
        .unwrap();
        assert_eq!(one, many);
    }
}
