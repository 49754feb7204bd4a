//! Trajectory post-processing: verdict flips, refinement drift, per-class
//! metrics and report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Verdict;
use crate::decoder::{verdict_commit_step, CommitStep, Trajectory};
use crate::error::{Error, Result};
use crate::interventions::InterventionResult;
use crate::vocab::Vocabulary;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftReport {
    pub instance_id: String,
    /// Earliest step from which the probe argmax stays equal to the final verdict token.
    pub first_commit_step: usize,
    pub commit_step: CommitStep,
    /// Steps whose probe argmax differs from the previous step's.
    pub flips: Vec<usize>,
    /// Some probe before the verdict was committed pointed at the gold label.
    pub ever_correct_early: bool,
    /// Correct early, wrong at the end.
    pub drift_event: bool,
}

pub fn analyze_trajectory(
    traj: &Trajectory,
    gold: Verdict,
    vocab: &Vocabulary,
) -> Result<DriftReport> {
    if traj.records.is_empty() {
        return Err(Error::MalformedTrajectory(format!(
            "{}: no step records",
            traj.instance_id
        )));
    }
    let commit_step = verdict_commit_step(traj)?;
    let final_token = traj.final_tokens[traj.verdict_index()];
    let probes: Vec<_> = traj
        .records
        .iter()
        .map(|r| r.verdict_probe_argmax)
        .collect();
    let flips = traj
        .records
        .windows(2)
        .filter(|w| w[0].verdict_probe_argmax != w[1].verdict_probe_argmax)
        .map(|w| w[1].step)
        .collect();
    let stable_from = probes
        .iter()
        .rposition(|&p| p != final_token)
        .map_or(0, |i| i + 1);
    if stable_from == probes.len() {
        return Err(Error::MalformedTrajectory(format!(
            "{}: last probe differs from the committed verdict",
            traj.instance_id
        )));
    }
    let gold_token = gold.proxy(vocab);
    let ever_correct_early = match commit_step {
        CommitStep::Frozen => false,
        CommitStep::Step(c) => traj
            .records
            .iter()
            .take_while(|r| r.step < c)
            .any(|r| r.verdict_probe_argmax == gold_token),
    };
    let correct = traj.final_verdict == Some(gold);
    Ok(DriftReport {
        instance_id: traj.instance_id.clone(),
        first_commit_step: traj.records[stable_from].step,
        commit_step,
        flips,
        ever_correct_early,
        drift_event: ever_correct_early && !correct,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// Instances whose context argued for this class.
    pub agreement_n: usize,
    /// Fraction of those whose prediction followed the context.
    pub agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub per_class: BTreeMap<Verdict, ClassMetrics>,
    pub drift_rate: f64,
    pub mean_flips: f64,
    pub agreement: Option<f64>,
    /// Verdict commit step → count; frozen verdicts under `"frozen"`.
    pub commit_histogram: BTreeMap<String, usize>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Aggregates reports and results that must cover the same instance ids.
pub fn summarize(
    reports: &[DriftReport],
    results: &[InterventionResult],
) -> Result<SummaryMetrics> {
    if reports.is_empty() || results.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut by_id: BTreeMap<&str, &DriftReport> = BTreeMap::new();
    for r in reports {
        if by_id.insert(&r.instance_id, r).is_some() {
            return Err(Error::IdMismatch(format!(
                "duplicate report for {}",
                r.instance_id
            )));
        }
    }
    let mut res: Vec<&InterventionResult> = results.iter().collect();
    res.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    if res.windows(2).any(|w| w[0].instance_id == w[1].instance_id) {
        return Err(Error::IdMismatch("duplicate result id".into()));
    }
    if res.len() != by_id.len() {
        return Err(Error::IdMismatch(format!(
            "{} reports vs {} results",
            by_id.len(),
            res.len()
        )));
    }
    let mut pairs = Vec::with_capacity(res.len());
    for r in res {
        let d = by_id
            .get(r.instance_id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("no report for {}", r.instance_id)))?;
        pairs.push((r, *d));
    }

    let n = pairs.len();
    let correct = pairs.iter().filter(|(r, _)| r.correct()).count();
    let mut per_class = BTreeMap::new();
    for class in [Verdict::Supported, Verdict::Refuted] {
        let of_class: Vec<_> = pairs
            .iter()
            .filter(|(r, _)| r.gold_verdict == class)
            .collect();
        let ctx: Vec<_> = pairs
            .iter()
            .filter(|(r, _)| r.context_verdict == Some(class))
            .collect();
        let followed = ctx
            .iter()
            .filter(|(r, _)| r.predicted_verdict == Some(class))
            .count();
        per_class.insert(
            class,
            ClassMetrics {
                n: of_class.len(),
                accuracy: ratio(
                    of_class.iter().filter(|(r, _)| r.correct()).count(),
                    of_class.len(),
                ),
                agreement_n: ctx.len(),
                agreement: (!ctx.is_empty()).then(|| ratio(followed, ctx.len())),
            },
        );
    }
    let with_ctx: Vec<_> = pairs
        .iter()
        .filter(|(r, _)| r.context_verdict.is_some())
        .collect();
    let agreement = (!with_ctx.is_empty()).then(|| {
        ratio(
            with_ctx
                .iter()
                .filter(|(r, _)| r.predicted_verdict == r.context_verdict)
                .count(),
            with_ctx.len(),
        )
    });
    let mut commit_histogram = BTreeMap::new();
    for (_, d) in &pairs {
        let key = match d.commit_step {
            CommitStep::Step(s) => format!("{s:03}"),
            CommitStep::Frozen => "frozen".to_owned(),
        };
        *commit_histogram.entry(key).or_default() += 1;
    }
    Ok(SummaryMetrics {
        n,
        accuracy: ratio(correct, n),
        per_class,
        drift_rate: ratio(pairs.iter().filter(|(_, d)| d.drift_event).count(), n),
        mean_flips: pairs.iter().map(|(_, d)| d.flips.len()).sum::<usize>() as f64 / n as f64,
        agreement,
        commit_histogram,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TableText,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::TableText => "txt",
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

/// One summary row, keyed by deliberation percentage for sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub p: u8,
    pub metrics: SummaryMetrics,
}

const COLUMNS: [&str; 9] = [
    "p",
    "accuracy",
    "drift_rate",
    "n",
    "accuracy_supported",
    "accuracy_refuted",
    "mean_flips",
    "agreement_supported",
    "agreement_refuted",
];

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.4}"))
}

fn row_cells(row: &ReportRow) -> Vec<String> {
    let m = &row.metrics;
    let class = |v: Verdict| m.per_class.get(&v);
    vec![
        row.p.to_string(),
        format!("{:.4}", m.accuracy),
        format!("{:.4}", m.drift_rate),
        m.n.to_string(),
        fmt_opt(class(Verdict::Supported).map(|c| c.accuracy)),
        fmt_opt(class(Verdict::Refuted).map(|c| c.accuracy)),
        format!("{:.4}", m.mean_flips),
        fmt_opt(class(Verdict::Supported).and_then(|c| c.agreement)),
        fmt_opt(class(Verdict::Refuted).and_then(|c| c.agreement)),
    ]
}

/// Renders summary rows; an empty slice yields the header alone.
pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = COLUMNS.join(",");
            out.push('\n');
            for r in rows {
                out.push_str(&row_cells(r).join(","));
                out.push('\n');
            }
            out
        }
        ReportFormat::TableText => {
            let cells: Vec<Vec<String>> = rows.iter().map(row_cells).collect();
            let widths: Vec<usize> = (0..COLUMNS.len())
                .map(|i| {
                    cells
                        .iter()
                        .map(|c| c[i].len())
                        .chain([COLUMNS[i].len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |vals: Vec<&str>| {
                let mut s = String::new();
                for (i, v) in vals.iter().enumerate() {
                    let _ = write!(
                        s,
                        "{}{v:>w$}",
                        if i == 0 { "" } else { "  " },
                        w = widths[i]
                    );
                }
                s.push('\n');
                s
            };
            let mut out = line(COLUMNS.to_vec());
            for c in &cells {
                out.push_str(&line(c.iter().map(String::as_str).collect()));
            }
            out
        }
        ReportFormat::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                schema_version: u32,
                rows: &'a [ReportRow],
            }
            let mut s = serde_json::to_string_pretty(&Doc {
                schema_version: REPORT_SCHEMA_VERSION,
                rows,
            })
            .expect("report serializes");
            s.push('\n');
            s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, rel: &str, contents: &[u8]) -> Result<ManifestEntry> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, contents)?;
    Ok(ManifestEntry {
        path: rel.to_owned(),
        sha256: sha256_hex(contents),
    })
}

/// `step,verdict_prob` series for one trajectory.
pub fn plot_series(traj: &Trajectory) -> String {
    let mut out = String::from("step,verdict_prob\n");
    for r in &traj.records {
        let _ = writeln!(out, "{},{}", r.step, r.verdict_probe_prob);
    }
    out
}

/// Writes `summary.<ext>` into `dir`, plus one series per trajectory under
/// `series/` and a `series/manifest.json` when `series` is given.
pub fn emit_report(
    rows: &[ReportRow],
    format: ReportFormat,
    series: Option<&[Trajectory]>,
    dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir)?;
    let mut written = vec![write_file(
        dir,
        &format!("summary.{}", format.extension()),
        render_report(rows, format).as_bytes(),
    )?];
    if let Some(trajs) = series {
        let mut entries = Vec::with_capacity(trajs.len());
        for t in trajs {
            let rel = PathBuf::from("series").join(
                crate::interventions::trajectory_ref(&t.instance_id)
                    .trim_start_matches("trajectories/")
                    .replace(".jsonl", ".csv"),
            );
            entries.push(write_file(
                dir,
                &rel.to_string_lossy(),
                plot_series(t).as_bytes(),
            )?);
        }
        let manifest = serde_json::to_string_pretty(&entries)? + "\n";
        written.extend(entries);
        written.push(write_file(
            dir,
            "series/manifest.json",
            manifest.as_bytes(),
        )?);
    }
    Ok(written)
}

/// Replays a trajectory and reports the first broken decoding invariant:
/// one unmasking per step over exactly the initially masked positions, the
/// deliberation gate, and untouched frozen positions.
pub fn check_trajectory(traj: &Trajectory) -> std::result::Result<(), String> {
    let layout = &traj.layout;
    let p0 = layout.prompt_len;
    let n = layout.output_len;
    if traj.initial_output.len() != n
        || traj.frozen_output.len() != n
        || traj.final_tokens.len() != n
    {
        return Err("output arrays do not match output_len".into());
    }
    let mut masked: Vec<bool> = traj.frozen_output.iter().map(|f| !f).collect();
    let expected = masked.iter().filter(|m| **m).count();
    if traj.records.len() != expected {
        return Err(format!(
            "{} steps for {expected} masked positions",
            traj.records.len()
        ));
    }
    let cset = &traj.constraints;
    let threshold = cset.gate_threshold(layout);
    let in_basis = |j: usize| match cset.basis {
        crate::constraints::GateBasis::OutputSpan => true,
        crate::constraints::GateBasis::JustificationSpan => {
            layout.roles[j] == crate::layout::Role::Justification
        }
    };
    let gated = |j: usize| cset.gated_roles.contains(&layout.roles[j]);
    let mut revealed = 0;
    for (i, r) in traj.records.iter().enumerate() {
        if r.step != i + 1 {
            return Err(format!("record {} has step {}", i + 1, r.step));
        }
        let j = r
            .chosen_position
            .checked_sub(p0)
            .filter(|&j| j < n)
            .ok_or(format!("step {}: position outside output", r.step))?;
        if !masked[j] {
            return Err(format!(
                "step {}: position {} was not masked",
                r.step, r.chosen_position
            ));
        }
        if gated(j) && revealed < threshold && (0..n).any(|k| masked[k] && !gated(k)) {
            return Err(format!(
                "step {}: gated position {} opened with {revealed}/{threshold} revealed",
                r.step, r.chosen_position
            ));
        }
        if traj.final_tokens[j] != r.chosen_token {
            return Err(format!(
                "step {}: final token differs from the committed one",
                r.step
            ));
        }
        masked[j] = false;
        if in_basis(j) {
            revealed += 1;
        }
    }
    for j in (0..n).filter(|&j| traj.frozen_output[j]) {
        if traj.final_tokens[j] != traj.initial_output[j] {
            return Err(format!("frozen position {} changed", j + p0));
        }
    }
    Ok(())
}

/// Brute-force drift rate straight from probe sequences.
pub fn drift_rate_bruteforce(trajs: &[(&Trajectory, Verdict)], vocab: &Vocabulary) -> f64 {
    let mut events = 0;
    for (t, gold) in trajs {
        let vpos = t.layout.verdict_pos();
        let mut early = false;
        for r in &t.records {
            if r.chosen_position == vpos {
                break;
            }
            early |= r.verdict_probe_argmax == gold.proxy(vocab);
        }
        if early && t.final_verdict != Some(*gold) {
            events += 1;
        }
    }
    ratio(events, trajs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintSet;
    use crate::decoder::StepRecord;
    use crate::interventions::Protocol;
    use crate::layout::{build_layout, OrderMode, JSON_TEMPLATE};

    /// Verdict decoded at the last step; probes given per step.
    fn fixture(id: &str, probes: &[Verdict], vocab: &Vocabulary) -> Trajectory {
        let layout = build_layout(JSON_TEMPLATE, OrderMode::VerdictFirst, 17)
            .unwrap()
            .with_prompt_len(1);
        let vpos = layout.verdict_pos();
        let others: Vec<usize> = layout.output_positions().filter(|&p| p != vpos).collect();
        let n = probes.len();
        let mut initial = vec![vocab.mask_id; layout.output_len];
        let mut frozen = vec![false; layout.output_len];
        // freeze what the short fixture does not decode
        for &p in &others[n - 1..] {
            initial[p - 1] = vocab.pad_id;
            frozen[p - 1] = true;
        }
        let mut final_tokens = initial.clone();
        final_tokens.iter_mut().for_each(|t| {
            if *t == vocab.mask_id {
                *t = vocab.pad_id
            }
        });
        let last = *probes.last().unwrap();
        final_tokens[vpos - 1] = last.proxy(vocab);
        let records = probes
            .iter()
            .enumerate()
            .map(|(i, v)| StepRecord {
                step: i + 1,
                chosen_position: if i + 1 == n { vpos } else { others[i] },
                chosen_token: if i + 1 == n {
                    last.proxy(vocab)
                } else {
                    vocab.pad_id
                },
                chosen_confidence: 0.9,
                verdict_probe_argmax: v.proxy(vocab),
                verdict_probe_prob: 0.8,
            })
            .collect();
        Trajectory {
            instance_id: id.into(),
            layout,
            constraints: ConstraintSet::default(),
            initial_output: initial,
            frozen_output: frozen,
            records,
            final_tokens,
            final_verdict: Some(last),
        }
    }

    use Verdict::{Refuted as R, Supported as S};

    fn result(id: &str, pred: Verdict, gold: Verdict) -> InterventionResult {
        InterventionResult {
            instance_id: id.into(),
            protocol: Protocol::Deliberation,
            forced_inputs: "none".into(),
            forced_digest: String::new(),
            trajectory_ref: String::new(),
            predicted_verdict: Some(pred),
            gold_verdict: gold,
            category: None,
            context_verdict: None,
        }
    }

    #[test]
    fn stable_correct() {
        let v = Vocabulary::standard();
        let d = analyze_trajectory(&fixture("a", &[S, S, S], &v), S, &v).unwrap();
        assert_eq!(
            (d.first_commit_step, d.flips.clone(), d.drift_event),
            (1, vec![], false)
        );
    }

    #[test]
    fn drift_case() {
        let v = Vocabulary::standard();
        let d = analyze_trajectory(&fixture("a", &[S, S, R, R], &v), S, &v).unwrap();
        assert_eq!(d.flips, vec![3]);
        assert!(d.drift_event && d.ever_correct_early);
        assert_eq!(d.first_commit_step, 3);
        assert_eq!(d.commit_step, CommitStep::Step(4));
    }

    #[test]
    fn recovery_is_not_drift() {
        let v = Vocabulary::standard();
        let d = analyze_trajectory(&fixture("a", &[R, S, S], &v), S, &v).unwrap();
        assert_eq!(d.flips, vec![2]);
        assert!(!d.drift_event);
    }

    #[test]
    fn two_of_ten_drift() {
        let v = Vocabulary::standard();
        let mut reports = Vec::new();
        let mut results = Vec::new();
        let mut trajs = Vec::new();
        for i in 0..10 {
            let id = format!("i{i}");
            let probes: &[Verdict] = if i < 2 { &[S, R, R] } else { &[S, S, S] };
            let t = fixture(&id, probes, &v);
            reports.push(analyze_trajectory(&t, S, &v).unwrap());
            results.push(result(&id, *probes.last().unwrap(), S));
            trajs.push(t);
        }
        let m = summarize(&reports, &results).unwrap();
        assert_eq!(m.drift_rate, 0.2);
        assert_eq!(m.accuracy, 0.8);
        let pairs: Vec<_> = trajs.iter().map(|t| (t, S)).collect();
        assert_eq!(drift_rate_bruteforce(&pairs, &v), 0.2);
        reports.reverse();
        results.rotate_left(3);
        assert_eq!(summarize(&reports, &results).unwrap(), m);
    }

    #[test]
    fn per_class_weighted_mean_is_overall() {
        let v = Vocabulary::standard();
        let cases = [(S, S), (S, S), (R, S), (R, R), (S, R)];
        let mut reports = Vec::new();
        let mut results = Vec::new();
        for (i, (pred, gold)) in cases.iter().enumerate() {
            let id = format!("c{i}");
            reports
                .push(analyze_trajectory(&fixture(&id, &[*pred, *pred], &v), *gold, &v).unwrap());
            results.push(result(&id, *pred, *gold));
        }
        let m = summarize(&reports, &results).unwrap();
        let weighted: f64 = m
            .per_class
            .values()
            .map(|c| c.accuracy * c.n as f64)
            .sum::<f64>()
            / m.n as f64;
        assert!((weighted - m.accuracy).abs() < 1e-12);
        assert_eq!(m.per_class.values().map(|c| c.n).sum::<usize>(), m.n);
        results.pop();
        assert!(matches!(
            summarize(&reports, &results),
            Err(Error::IdMismatch(_))
        ));
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(
            render_report(&[], ReportFormat::Csv),
            format!("{}\n", COLUMNS.join(","))
        );
        assert_eq!(
            render_report(&[], ReportFormat::TableText).lines().count(),
            1
        );
        assert!(render_report(&[], ReportFormat::Json).contains("\"rows\": []"));
    }

    #[test]
    fn series_has_one_point_per_step() {
        let v = Vocabulary::standard();
        let t = fixture("x", &[S; 12], &v);
        assert_eq!(plot_series(&t).lines().count(), 13);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[], ReportFormat::Csv, Some(&[t]), dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert!(dir.path().join("series/manifest.json").exists());
    }
}
