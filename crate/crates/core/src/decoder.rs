//! Reverse-diffusion decoding: one token per step, greedy by confidence,
//! with the verdict slot probed from the same denoiser call at every step.
//!
//! Selection order is fixed: highest top-candidate probability, then lower
//! position, then lower token id (candidate lists are already sorted that way).

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::corpus::Verdict;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::layout::{build_layout, OrderMode, SequenceLayout};
use crate::state::SeqState;
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based: the k-th unmasking of this decode.
    pub step: usize,
    pub chosen_position: usize,
    pub chosen_token: TokenId,
    pub chosen_confidence: f64,
    pub verdict_probe_argmax: TokenId,
    pub verdict_probe_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instance_id: String,
    pub layout: SequenceLayout,
    pub constraints: ConstraintSet,
    /// Output-span tokens before decoding (mask id where masked).
    pub initial_output: Vec<TokenId>,
    /// Output-span frozen flags before decoding.
    pub frozen_output: Vec<bool>,
    pub records: Vec<StepRecord>,
    pub final_tokens: Vec<TokenId>,
    pub final_verdict: Option<Verdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommitStep {
    Step(usize),
    /// The verdict was hard-coded before decoding.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub top_k: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { top_k: 2 }
    }
}

/// Unmasks exactly one eligible position.
pub fn decode_step(
    state: &mut SeqState,
    denoiser: &dyn Denoiser,
    constraints: &ConstraintSet,
    layout: &SequenceLayout,
    opts: DecodeOptions,
) -> Result<StepRecord> {
    let eligible = constraints.eligible_positions(state, layout);
    if eligible.is_empty() {
        return Err(Error::Deadlock {
            step: state.step + 1,
        });
    }
    let out = denoiser.predict(state, opts.top_k)?;
    let top_of = |pos: usize| {
        out.get(pos)
            .and_then(|p| p.candidates.first())
            .copied()
            .ok_or_else(|| {
                Error::MalformedTrajectory(format!(
                    "denoiser returned no candidate for masked position {pos}"
                ))
            })
    };
    let mut best: Option<(usize, crate::denoiser::Candidate)> = None;
    for &pos in &eligible {
        let c = top_of(pos)?;
        if best.is_none_or(|(_, b)| c.logprob > b.logprob) {
            best = Some((pos, c));
        }
    }
    let (pos, cand) = best.expect("eligible set is non-empty");
    let vpos = layout.verdict_pos();
    let (probe_token, probe_prob) = if state.masked[vpos] {
        let c = top_of(vpos)?;
        (c.token, c.logprob.exp())
    } else {
        (state.tokens[vpos], 1.0)
    };
    state.unmask(pos, cand.token);
    Ok(StepRecord {
        step: state.step,
        chosen_position: pos,
        chosen_token: cand.token,
        chosen_confidence: cand.logprob.exp(),
        verdict_probe_argmax: probe_token,
        verdict_probe_prob: probe_prob,
    })
}

/// Decodes until no masked position remains.
pub fn decode(
    instance_id: &str,
    mut state: SeqState,
    denoiser: &dyn Denoiser,
    constraints: &ConstraintSet,
    layout: &SequenceLayout,
    vocab: &Vocabulary,
    opts: DecodeOptions,
) -> Result<Trajectory> {
    constraints.validate()?;
    if state.len() != layout.total_len() {
        return Err(Error::PositionOutOfRange {
            pos: layout.total_len(),
            len: state.len(),
        });
    }
    let out_range = layout.output_positions();
    let initial_output = state.tokens[out_range.clone()].to_vec();
    let frozen_output = state.frozen[out_range.clone()].to_vec();
    let mut records = Vec::with_capacity(state.masked_count());
    while state.masked_count() > 0 {
        records.push(decode_step(
            &mut state,
            denoiser,
            constraints,
            layout,
            opts,
        )?);
    }
    let final_tokens = state.tokens[out_range].to_vec();
    let final_verdict = Verdict::from_proxy(state.tokens[layout.verdict_pos()], vocab);
    Ok(Trajectory {
        instance_id: instance_id.to_owned(),
        layout: layout.clone(),
        constraints: constraints.clone(),
        initial_output,
        frozen_output,
        records,
        final_tokens,
        final_verdict,
    })
}

impl Trajectory {
    pub fn verdict_index(&self) -> usize {
        self.layout.verdict_pos() - self.layout.prompt_len
    }

    pub fn verdict_frozen(&self) -> bool {
        self.frozen_output[self.verdict_index()]
    }

    /// Decoded justification text, padding removed.
    pub fn justification_text(&self, vocab: &Vocabulary) -> String {
        let p0 = self.layout.prompt_len;
        let toks: Vec<TokenId> = self
            .layout
            .justification_positions()
            .into_iter()
            .map(|p| self.final_tokens[p - p0])
            .filter(|&t| t != vocab.pad_id)
            .collect();
        vocab.detokenize(&toks)
    }
}

pub fn verdict_commit_step(traj: &Trajectory) -> Result<CommitStep> {
    if traj.verdict_frozen() {
        return Ok(CommitStep::Frozen);
    }
    let vpos = traj.layout.verdict_pos();
    traj.records
        .iter()
        .find(|r| r.chosen_position == vpos)
        .map(|r| CommitStep::Step(r.step))
        .ok_or_else(|| Error::MalformedTrajectory("verdict slot never resolved".into()))
}

/// First line of a trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub config_hash: String,
    pub seed: u64,
    pub instance_id: String,
    pub template: String,
    pub order_mode: OrderMode,
    pub prompt_len: usize,
    pub output_len: usize,
    pub constraints: ConstraintSet,
    pub initial_output: Vec<TokenId>,
    pub frozen_output: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogRecord {
    step: usize,
    pos: usize,
    token: TokenId,
    surface: String,
    conf: f64,
    verdict_argmax: TokenId,
    verdict_prob: f64,
}

impl Trajectory {
    pub fn to_log(&self, vocab: &Vocabulary, config_hash: &str, seed: u64) -> String {
        let header = LogHeader {
            config_hash: config_hash.to_owned(),
            seed,
            instance_id: self.instance_id.clone(),
            template: self.layout.template.clone(),
            order_mode: self.layout.order_mode,
            prompt_len: self.layout.prompt_len,
            output_len: self.layout.output_len,
            constraints: self.constraints.clone(),
            initial_output: self.initial_output.clone(),
            frozen_output: self.frozen_output.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            let rec = LogRecord {
                step: r.step,
                pos: r.chosen_position,
                token: r.chosen_token,
                surface: vocab.surface_or_unk(r.chosen_token).to_owned(),
                conf: r.chosen_confidence,
                verdict_argmax: r.verdict_probe_argmax,
                verdict_prob: r.verdict_probe_prob,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Rebuilds a trajectory from its log, checking it is internally consistent.
    pub fn parse_log(text: &str, vocab: &Vocabulary) -> Result<(LogHeader, Trajectory)> {
        let bad = |m: String| Error::MalformedTrajectory(m);
        let mut lines = text.lines();
        let header: LogHeader =
            serde_json::from_str(lines.next().ok_or_else(|| bad("empty log".into()))?)
                .map_err(|e| bad(format!("header: {e}")))?;
        header.constraints.validate()?;
        let layout = build_layout(&header.template, header.order_mode, header.output_len)?
            .with_prompt_len(header.prompt_len);
        let n = layout.output_len;
        if header.initial_output.len() != n || header.frozen_output.len() != n {
            return Err(bad("header output arrays do not match output_len".into()));
        }
        let mut tokens = header.initial_output.clone();
        let mut masked: Vec<bool> = header.frozen_output.iter().map(|f| !f).collect();
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let r: LogRecord =
                serde_json::from_str(line).map_err(|e| bad(format!("record {}: {e}", i + 1)))?;
            if r.step != i + 1 {
                return Err(bad(format!(
                    "record {}: step {} out of sequence",
                    i + 1,
                    r.step
                )));
            }
            let idx = r
                .pos
                .checked_sub(layout.prompt_len)
                .filter(|&j| j < n && masked[j])
                .ok_or_else(|| {
                    bad(format!(
                        "record {}: position {} was not masked",
                        i + 1,
                        r.pos
                    ))
                })?;
            if (r.token as usize) >= vocab.len() || (r.verdict_argmax as usize) >= vocab.len() {
                return Err(bad(format!("record {}: token outside vocabulary", i + 1)));
            }
            tokens[idx] = r.token;
            masked[idx] = false;
            records.push(StepRecord {
                step: r.step,
                chosen_position: r.pos,
                chosen_token: r.token,
                chosen_confidence: r.conf,
                verdict_probe_argmax: r.verdict_argmax,
                verdict_probe_prob: r.verdict_prob,
            });
        }
        if masked.iter().any(|m| *m) {
            return Err(bad("log ends with masked positions".into()));
        }
        let final_verdict =
            Verdict::from_proxy(tokens[layout.verdict_pos() - layout.prompt_len], vocab);
        let traj = Trajectory {
            instance_id: header.instance_id.clone(),
            layout,
            constraints: header.constraints.clone(),
            initial_output: header.initial_output.clone(),
            frozen_output: header.frozen_output.clone(),
            records,
            final_tokens: tokens,
            final_verdict,
        };
        Ok((header, traj))
    }
}
