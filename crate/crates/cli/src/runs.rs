//! Subcommand bodies and the run-directory format.
//!
//! A run directory holds `manifest.json`, `config.json`, `vocab.txt` and one
//! or more protocol directories. Each protocol directory holds
//! `trajectories/*.jsonl`, `results.jsonl`, `failures.jsonl` and `summary.*`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mdlm_lab::analysis::{
    analyze_trajectory, check_trajectory, emit_report, render_report, sha256_hex, summarize,
    ManifestEntry, ReportFormat, ReportRow,
};
use mdlm_lab::corpus::{
    load_external, save_corpus, ClaimInstance, CorpusSpec, CorruptedJustification,
};
use mdlm_lab::decoder::{DecodeOptions, Trajectory};
use mdlm_lab::denoiser::oracle::OracleProvider;
use mdlm_lab::denoiser::remote::RemoteDenoiser;
use mdlm_lab::denoiser::stub::StubDenoiser;
use mdlm_lab::denoiser::toy::{
    load_checkpoint, save_checkpoint, train_toy, write_loss_csv, ToyDenoiserConfig,
};
use mdlm_lab::denoiser::{DenoiserProvider, Shared};
use mdlm_lab::interventions::{
    frozen_context_intact, generated_corruptions, integrity_justifications, run_decode,
    run_deliberation_sweep, run_integrity_test, run_reliance_test, InstanceFailure,
    InterventionResult, JustificationSource, ProtocolRun, RunOptions,
};
use mdlm_lab::layout::SequenceLayout;
use mdlm_lab::vocab::Vocabulary;

use crate::config::{
    CorruptionOrigin, DenoiserSpec, ExperimentConfig, InterveneProtocol, SourceKind,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
            Self::Check(_) => 3,
        }
    }
}

impl From<mdlm_lab::Error> for RunError {
    fn from(e: mdlm_lab::Error) -> Self {
        use mdlm_lab::Error as E;
        match e {
            E::Config(_)
            | E::UnknownTemplate(_)
            | E::OutputTooSmall { .. }
            | E::VocabFile { .. } => Self::Config(e.to_string()),
            _ => Self::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

type Out<T = String> = Result<T, RunError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub denoiser: Option<String>,
    pub vocab_digest: String,
    /// Protocol directories relative to the run root, in report-row order.
    pub protocol_dirs: Vec<String>,
    /// Every other file of the run, sorted by path.
    pub files: Vec<ManifestEntry>,
}

/// Collects written files for the manifest.
struct RunDir {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl RunDir {
    fn create(root: &Path) -> Out<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| RunError::Runtime(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_owned(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Out<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)
            .map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))?;
        self.files.push(ManifestEntry {
            path: rel.to_owned(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn record(&mut self, prefix: &str, entries: Vec<ManifestEntry>) {
        for e in entries {
            self.files.push(ManifestEntry {
                path: join_rel(prefix, &e.path),
                sha256: e.sha256,
            });
        }
    }

    fn finish(mut self, ctx: &Context, command: &str, protocol_dirs: Vec<String>) -> Out<()> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        self.files.dedup_by(|a, b| a.path == b.path);
        let m = Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_owned(),
            config_hash: ctx.config_hash.clone(),
            seed: ctx.cfg.seed,
            denoiser: ctx.describe.clone(),
            vocab_digest: ctx.vocab.digest(),
            protocol_dirs,
            files: std::mem::take(&mut self.files),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n";
        std::fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }
}

fn join_rel(prefix: &str, rel: &str) -> String {
    if prefix.is_empty() {
        rel.to_owned()
    } else {
        format!("{prefix}/{rel}")
    }
}

/// Config as stored in a run: fields that cannot change outputs are cleared
/// so runs in different directories hash identically.
fn canonical(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: PathBuf::new(),
        workers: 1,
        ..cfg.clone()
    }
}

struct Context {
    cfg: ExperimentConfig,
    config_hash: String,
    vocab: Vocabulary,
    layout: SequenceLayout,
    describe: Option<String>,
}

impl Context {
    fn new(cfg: &ExperimentConfig) -> Out<Self> {
        let vocab = match &cfg.vocab_path {
            Some(p) => Vocabulary::load(p)
                .map_err(|e| RunError::Config(format!("{}: {e}", p.display())))?,
            None => Vocabulary::standard(),
        };
        Ok(Self {
            cfg: cfg.clone(),
            config_hash: canonical(cfg).hash(),
            vocab,
            layout: cfg.layout.build()?,
            describe: None,
        })
    }

    fn corpus(&self) -> Out<Vec<ClaimInstance>> {
        match &self.cfg.corpus.path {
            Some(p) => Ok(load_external(p)?),
            None => Ok(self.spec(self.cfg.corpus.n).generate()),
        }
    }

    fn spec(&self, n: usize) -> CorpusSpec {
        let c = &self.cfg.corpus;
        CorpusSpec {
            n,
            refuted_fraction: c.refuted_fraction,
            seed: c.seed,
            two_hop_fraction: c.two_hop_fraction,
        }
    }

    fn provider(&mut self) -> Out<Box<dyn DenoiserProvider>> {
        let p: Box<dyn DenoiserProvider> = match &self.cfg.denoiser {
            DenoiserSpec::Toy { checkpoint } => {
                let model = load_checkpoint(checkpoint)
                    .map_err(|e| RunError::Config(format!("{}: {e}", checkpoint.display())))?;
                if model.cfg.vocab_size != self.vocab.len() {
                    return Err(RunError::Config(format!(
                        "checkpoint vocabulary size {} does not match vocabulary size {}",
                        model.cfg.vocab_size,
                        self.vocab.len()
                    )));
                }
                Box::new(Shared(model))
            }
            DenoiserSpec::Oracle(o) => {
                Box::new(OracleProvider::new(self.vocab.clone(), o.clone())?)
            }
            DenoiserSpec::Remote { endpoint } => {
                Box::new(Shared(RemoteDenoiser::connect(endpoint, &self.vocab)?))
            }
            DenoiserSpec::Stub { seed } => {
                Box::new(Shared(StubDenoiser::new(*seed, self.vocab.len())))
            }
        };
        self.describe = Some(p.describe());
        Ok(p)
    }

    fn opts(&self) -> RunOptions {
        RunOptions {
            decode: DecodeOptions {
                top_k: self.cfg.top_k,
            },
            workers: self.cfg.workers,
        }
    }

    fn start(&self) -> Out<RunDir> {
        let mut dir = RunDir::create(&self.cfg.output_dir)?;
        let cfg_text =
            serde_json::to_string_pretty(&canonical(&self.cfg)).expect("config serializes") + "\n";
        dir.write("config.json", cfg_text.as_bytes())?;
        dir.write("vocab.txt", self.vocab.to_file_string().as_bytes())?;
        Ok(dir)
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect()
}

fn summary_row(run: &ProtocolRun, p: u8, vocab: &Vocabulary) -> Out<ReportRow> {
    let reports = run
        .trajectories
        .iter()
        .zip(&run.results)
        .map(|(t, r)| analyze_trajectory(t, r.gold_verdict, vocab))
        .collect::<mdlm_lab::Result<Vec<_>>>()?;
    Ok(ReportRow {
        p,
        metrics: summarize(&reports, &run.results)?,
    })
}

/// Writes one protocol directory and returns its summary row.
fn write_protocol(
    dir: &mut RunDir,
    prefix: &str,
    run: &ProtocolRun,
    p: u8,
    ctx: &Context,
) -> Out<Option<ReportRow>> {
    for (t, r) in run.trajectories.iter().zip(&run.results) {
        dir.write(
            &join_rel(prefix, &r.trajectory_ref),
            t.to_log(&ctx.vocab, &ctx.config_hash, ctx.cfg.seed)
                .as_bytes(),
        )?;
    }
    dir.write(
        &join_rel(prefix, "results.jsonl"),
        jsonl(&run.results).as_bytes(),
    )?;
    dir.write(
        &join_rel(prefix, "failures.jsonl"),
        jsonl(&run.failures).as_bytes(),
    )?;
    if run.results.is_empty() {
        return Ok(None);
    }
    let row = summary_row(run, p, &ctx.vocab)?;
    write_summaries(
        dir,
        prefix,
        std::slice::from_ref(&row),
        Some(&run.trajectories),
        ctx,
    )?;
    Ok(Some(row))
}

fn write_summaries(
    dir: &mut RunDir,
    prefix: &str,
    rows: &[ReportRow],
    series: Option<&[Trajectory]>,
    ctx: &Context,
) -> Out<()> {
    let target = dir.root.join(prefix);
    for (i, f) in ctx.cfg.report.formats.iter().enumerate() {
        let s = if i == 0 && ctx.cfg.report.plot_series {
            series
        } else {
            None
        };
        let entries = emit_report(rows, *f, s, &target)?;
        dir.record(prefix, entries);
    }
    Ok(())
}

fn no_results(run: &ProtocolRun) -> Out<()> {
    match run.failures.first() {
        Some(f) if run.results.is_empty() => Err(RunError::Runtime(format!(
            "every instance failed; first: {}: {}",
            f.instance_id, f.error
        ))),
        _ => Ok(()),
    }
}

fn describe_row(label: &str, row: &Option<ReportRow>, run: &ProtocolRun) -> String {
    let acc = row.as_ref().map_or(0.0, |r| r.metrics.accuracy);
    format!(
        "{label}: accuracy {acc:.4} over {} instances, {} failures",
        run.results.len(),
        run.failures.len()
    )
}

pub fn gen_corpus(cfg: &ExperimentConfig) -> Out {
    let ctx = Context::new(cfg)?;
    let corpus = ctx.corpus()?;
    let mut dir = ctx.start()?;
    let tmp = dir.root.join("corpus.jsonl");
    save_corpus(&tmp, &corpus)?;
    let bytes = std::fs::read(&tmp)?;
    dir.write("corpus.jsonl", &bytes)?;
    dir.finish(&ctx, "gen-corpus", Vec::new())?;
    Ok(format!(
        "wrote {} instances to {}",
        corpus.len(),
        tmp.display()
    ))
}

pub fn train(cfg: &ExperimentConfig) -> Out {
    let mut ctx = Context::new(cfg)?;
    let c = &cfg.corpus;
    let (train, held) = match &c.path {
        Some(_) => (ctx.corpus()?, Vec::new()),
        None => {
            let mut all = ctx.spec(c.n + c.eval_n).generate();
            let held = all.split_off(c.n);
            (all, held)
        }
    };
    let mut model_cfg = ToyDenoiserConfig::new(ctx.vocab.len(), ctx.layout.total_len());
    model_cfg.layers = cfg.model.layers;
    model_cfg.heads = cfg.model.heads;
    model_cfg.model_dim = cfg.model.model_dim;
    model_cfg.seed = cfg.model.seed;
    let trained = train_toy(&train, &ctx.vocab, &ctx.layout, model_cfg, &cfg.train)?;
    let mut dir = ctx.start()?;
    let ckpt = dir.root.join("model.ckpt");
    save_checkpoint(&trained.model, &ckpt)?;
    let bytes = std::fs::read(&ckpt)?;
    dir.write("model.ckpt", &bytes)?;
    let loss = dir.root.join("loss.csv");
    write_loss_csv(&loss, &trained.loss_curve)?;
    let bytes = std::fs::read(&loss)?;
    dir.write("loss.csv", &bytes)?;
    ctx.describe = Some(mdlm_lab::denoiser::Denoiser::describe(&trained.model));
    let mut msg = format!(
        "trained {} epochs, final loss {:.4}, checkpoint {}",
        trained.loss_curve.len(),
        trained.loss_curve.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    let mut dirs = Vec::new();
    if !held.is_empty() {
        let provider = Shared(trained.model);
        let run = run_decode(
            &held,
            &provider,
            &ctx.vocab,
            &ctx.layout,
            &cfg.constraints.set(0),
            ctx.opts(),
        )?;
        let row = write_protocol(&mut dir, "eval", &run, 0, &ctx)?;
        msg.push('\n');
        msg.push_str(&describe_row("held-out", &row, &run));
        dirs.push("eval".to_owned());
    }
    dir.finish(&ctx, "train", dirs)?;
    Ok(msg)
}

pub fn decode(cfg: &ExperimentConfig) -> Out {
    let mut ctx = Context::new(cfg)?;
    let corpus = ctx.corpus()?;
    let provider = ctx.provider()?;
    let p = cfg.constraints.deliberation_pct;
    let run = run_decode(
        &corpus,
        provider.as_ref(),
        &ctx.vocab,
        &ctx.layout,
        &cfg.constraints.set(p),
        ctx.opts(),
    )?;
    no_results(&run)?;
    let mut dir = ctx.start()?;
    let row = write_protocol(&mut dir, "", &run, p, &ctx)?;
    dir.finish(&ctx, "decode", vec![String::new()])?;
    Ok(describe_row(&format!("p={p}"), &row, &run))
}

pub fn sweep(cfg: &ExperimentConfig) -> Out {
    let mut ctx = Context::new(cfg)?;
    let corpus = ctx.corpus()?;
    let provider = ctx.provider()?;
    let runs = run_deliberation_sweep(
        &corpus,
        provider.as_ref(),
        &ctx.vocab,
        &ctx.layout,
        &cfg.constraints.p_list,
        &cfg.constraints.set(0),
        ctx.opts(),
    )?;
    let mut dir = ctx.start()?;
    let mut rows = Vec::new();
    let mut dirs = Vec::new();
    let mut lines = Vec::new();
    for (p, run) in &runs {
        no_results(run)?;
        let prefix = format!("p{p:03}");
        let row = write_protocol(&mut dir, &prefix, run, *p, &ctx)?;
        lines.push(describe_row(&format!("p={p}"), &row, run));
        rows.extend(row);
        dirs.push(prefix);
    }
    write_summaries(&mut dir, "", &rows, None, &ctx)?;
    dir.finish(&ctx, "sweep", dirs)?;
    Ok(lines.join("\n"))
}

fn load_corruption_file(path: &Path) -> Out<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let c: CorruptedJustification = serde_json::from_str(line)
            .map_err(|e| RunError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(c.instance_id, c.text);
    }
    Ok(out)
}

pub fn intervene(cfg: &ExperimentConfig) -> Out {
    let mut ctx = Context::new(cfg)?;
    let corpus = ctx.corpus()?;
    let provider = ctx.provider()?;
    let mut dir = ctx.start()?;
    let mut dirs = Vec::new();
    let mut lines = Vec::new();
    let iv = &cfg.intervene;
    let needs_integrity = iv.protocol == InterveneProtocol::Integrity
        || (iv.source == SourceKind::Corrupted && iv.corruption == CorruptionOrigin::Integrity);
    let mut integrity = None;
    if needs_integrity {
        let run = run_integrity_test(
            &corpus,
            provider.as_ref(),
            &ctx.vocab,
            &ctx.layout,
            ctx.opts(),
        )?;
        no_results(&run)?;
        let row = write_protocol(&mut dir, "integrity", &run, 0, &ctx)?;
        let cats =
            serde_json::to_string_pretty(&run.category_counts()).expect("counts serialize") + "\n";
        dir.write("integrity/categories.json", cats.as_bytes())?;
        lines.push(describe_row("integrity", &row, &run));
        for (name, n) in run.category_counts() {
            lines.push(format!("  {name}: {n}"));
        }
        dirs.push("integrity".to_owned());
        integrity = Some(run);
    }
    if iv.protocol == InterveneProtocol::Reliance {
        let (source, subset) = match iv.source {
            SourceKind::GroundTruth => (JustificationSource::GroundTruth, corpus.clone()),
            SourceKind::Corrupted => {
                let map = match &iv.corruption {
                    CorruptionOrigin::Integrity => integrity_justifications(
                        integrity.as_ref().expect("integrity ran"),
                        &ctx.vocab,
                    ),
                    CorruptionOrigin::Generated(kind) => {
                        generated_corruptions(&corpus, *kind, iv.corruption_seed)
                    }
                    CorruptionOrigin::File(p) => load_corruption_file(p)?,
                };
                let subset: Vec<ClaimInstance> = corpus
                    .iter()
                    .filter(|i| map.contains_key(&i.id))
                    .cloned()
                    .collect();
                (JustificationSource::Corrupted(map), subset)
            }
        };
        let skipped: Vec<InstanceFailure> = corpus
            .iter()
            .filter(|i| !subset.iter().any(|s| s.id == i.id))
            .map(|i| InstanceFailure {
                instance_id: i.id.clone(),
                error: "no corrupted justification".into(),
            })
            .collect();
        if subset.is_empty() {
            return Err(RunError::Runtime(
                "no instance has a corrupted justification".into(),
            ));
        }
        let mut run = run_reliance_test(
            &subset,
            provider.as_ref(),
            &ctx.vocab,
            &ctx.layout,
            &source,
            ctx.opts(),
        )?;
        no_results(&run)?;
        run.failures.extend(skipped);
        run.failures
            .sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        let row = write_protocol(&mut dir, "reliance", &run, 0, &ctx)?;
        let agreement = row.as_ref().and_then(|r| r.metrics.agreement);
        lines.push(describe_row(
            &format!("reliance[{}]", source.name()),
            &row,
            &run,
        ));
        lines.push(format!(
            "  agreement with context: {}",
            agreement.map_or("n/a".into(), |a| format!("{a:.4}"))
        ));
        dirs.push("reliance".to_owned());
    }
    dir.finish(&ctx, "intervene", dirs)?;
    Ok(lines.join("\n"))
}

fn read_manifest(run_dir: &Path) -> Out<Manifest> {
    let path = run_dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))
}

/// Trajectories and results of one protocol directory, re-parsed from disk.
struct Reloaded {
    results: Vec<InterventionResult>,
    trajectories: Vec<Trajectory>,
}

fn reload(
    root: &Path,
    prefix: &str,
    vocab: &Vocabulary,
    problems: &mut Vec<String>,
) -> Out<Reloaded> {
    let at = |rel: &str| root.join(join_rel(prefix, rel));
    let text = std::fs::read_to_string(at("results.jsonl"))?;
    let mut results = Vec::new();
    let mut trajectories = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let r: InterventionResult = serde_json::from_str(line).map_err(|e| {
            RunError::Runtime(format!("{}:{}: {e}", at("results.jsonl").display(), i + 1))
        })?;
        let log = std::fs::read_to_string(at(&r.trajectory_ref))
            .map_err(|e| RunError::Runtime(format!("{}: {e}", at(&r.trajectory_ref).display())))?;
        let (_, t) = Trajectory::parse_log(&log, vocab)
            .map_err(|e| RunError::Runtime(format!("{}: {e}", r.trajectory_ref)))?;
        if t.instance_id != r.instance_id {
            problems.push(format!(
                "{}: log is for {}",
                r.trajectory_ref, t.instance_id
            ));
        }
        if t.final_verdict != r.predicted_verdict {
            problems.push(format!(
                "{}: result verdict disagrees with its trajectory",
                r.instance_id
            ));
        }
        results.push(r);
        trajectories.push(t);
    }
    Ok(Reloaded {
        results,
        trajectories,
    })
}

fn recompute_row(re: &Reloaded, vocab: &Vocabulary) -> Out<Option<ReportRow>> {
    if re.results.is_empty() {
        return Ok(None);
    }
    let reports = re
        .trajectories
        .iter()
        .zip(&re.results)
        .map(|(t, r)| analyze_trajectory(t, r.gold_verdict, vocab))
        .collect::<mdlm_lab::Result<Vec<_>>>()?;
    let p = re.trajectories[0].constraints.deliberation_pct;
    Ok(Some(ReportRow {
        p,
        metrics: summarize(&reports, &re.results)?,
    }))
}

fn compare_summaries(
    root: &Path,
    prefix: &str,
    rows: &[ReportRow],
    formats: &[ReportFormat],
    problems: &mut Vec<String>,
) {
    for f in formats {
        let rel = join_rel(prefix, &format!("summary.{}", f.extension()));
        match std::fs::read_to_string(root.join(&rel)) {
            Ok(stored) if stored == render_report(rows, *f) => {}
            Ok(_) => problems.push(format!(
                "{rel}: stored summary differs from recomputed metrics"
            )),
            Err(e) => problems.push(format!("{rel}: {e}")),
        }
    }
}

/// Re-derives every summary of a run and verifies manifest digests and
/// decoding invariants. Returns the problems found.
pub fn check_run(run_dir: &Path) -> Out<(Vec<ReportRow>, Vec<String>)> {
    let manifest = read_manifest(run_dir)?;
    let vocab_text = std::fs::read_to_string(run_dir.join("vocab.txt"))?;
    let vocab = Vocabulary::parse_file(&vocab_text)?;
    let cfg_text = std::fs::read_to_string(run_dir.join("config.json"))?;
    let cfg: ExperimentConfig = serde_json::from_str(&cfg_text)
        .map_err(|e| RunError::Runtime(format!("config.json: {e}")))?;
    let mut problems = Vec::new();
    if vocab.digest() != manifest.vocab_digest {
        problems.push("vocab.txt digest differs from the manifest".into());
    }
    if cfg.hash() != manifest.config_hash {
        problems.push("config.json hash differs from the manifest".into());
    }
    for e in &manifest.files {
        match std::fs::read(run_dir.join(&e.path)) {
            Ok(b) if sha256_hex(&b) == e.sha256 => {}
            Ok(_) => problems.push(format!("{}: digest mismatch", e.path)),
            Err(err) => problems.push(format!("{}: {err}", e.path)),
        }
    }
    let mut rows = Vec::new();
    for prefix in &manifest.protocol_dirs {
        let re = reload(run_dir, prefix, &vocab, &mut problems)?;
        for t in &re.trajectories {
            if let Err(m) = check_trajectory(t) {
                problems.push(format!("{}: {m}", t.instance_id));
            }
            if !frozen_context_intact(t) {
                problems.push(format!("{}: frozen context altered", t.instance_id));
            }
            if t.constraints.deliberation_pct != re.trajectories[0].constraints.deliberation_pct {
                problems.push(format!(
                    "{}: mixed constraint sets in {prefix}",
                    t.instance_id
                ));
            }
        }
        if let Some(row) = recompute_row(&re, &vocab)? {
            compare_summaries(
                run_dir,
                prefix,
                std::slice::from_ref(&row),
                &cfg.report.formats,
                &mut problems,
            );
            rows.push(row);
        }
    }
    if manifest.command == "sweep" {
        compare_summaries(run_dir, "", &rows, &cfg.report.formats, &mut problems);
    }
    Ok((rows, problems))
}

pub fn analyze(run_dir: &Path, check: bool) -> Out {
    let (rows, problems) = check_run(run_dir)?;
    let mut out = render_report(&rows, ReportFormat::TableText);
    if check {
        if !problems.is_empty() {
            return Err(RunError::Check(format!(
                "{} problem(s):\n{}",
                problems.len(),
                problems.join("\n")
            )));
        }
        out.push_str("check: ok");
    } else if !problems.is_empty() {
        out.push_str(&format!(
            "warning: {} problem(s); rerun with --check for details",
            problems.len()
        ));
    }
    Ok(out.trim_end().to_owned())
}
