//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mdlm_lab::analysis::{
    analyze_trajectory, check_trajectory, render_report, summarize, ReportFormat, ReportRow,
};
use mdlm_lab::constraints::{ConstraintSet, GateBasis};
use mdlm_lab::corpus::lexicon::LEAK_PHRASES;
use mdlm_lab::corpus::{generate_corpus, ClaimInstance, CorruptionKind};
use mdlm_lab::decoder::{decode_step, verdict_commit_step, CommitStep, DecodeOptions};
use mdlm_lab::denoiser::oracle::{BoundOracle, OracleConfig, OracleProvider};
use mdlm_lab::denoiser::stub::StubDenoiser;
use mdlm_lab::denoiser::toy::{
    build_training_example, sample_loss_and_grad, train_toy, ToyDenoiser, ToyDenoiserConfig,
};
use mdlm_lab::denoiser::{Denoiser, Shared};
use mdlm_lab::interventions::{
    frozen_context_intact, generated_corruptions, reliance_assignments, run_decode,
    run_deliberation_sweep, run_integrity_test, run_reliance_test, JustificationSource,
    ProtocolRun, RunOptions,
};
use mdlm_lab::layout::{build_layout, OrderMode, Role, SequenceLayout, JSON_TEMPLATE};
use mdlm_lab::state::{init_state, SeqState};
use mdlm_lab::vocab::{TokenId, Vocabulary};

const P_LIST: [u8; 5] = [0, 25, 50, 75, 90];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Fixture {
    vocab: Vocabulary,
    layout: SequenceLayout,
    corpus: Vec<ClaimInstance>,
}

fn fixture() -> Fixture {
    Fixture {
        vocab: Vocabulary::standard(),
        layout: build_layout(JSON_TEMPLATE, OrderMode::VerdictFirst, 64).unwrap(),
        corpus: generate_corpus(500, 0.5, 1),
    }
}

fn oracle(f: &Fixture, eta: f64, weight: f64) -> OracleProvider {
    OracleProvider::new(
        f.vocab.clone(),
        OracleConfig {
            justification_noise_rate: eta,
            conditioning_weight: weight,
            seed: 3,
        },
    )
    .unwrap()
}

fn row(run: &ProtocolRun, p: u8, vocab: &Vocabulary) -> ReportRow {
    let reports: Vec<_> = run
        .trajectories
        .iter()
        .zip(&run.results)
        .map(|(t, r)| analyze_trajectory(t, r.gold_verdict, vocab).unwrap())
        .collect();
    ReportRow {
        p,
        metrics: summarize(&reports, &run.results).unwrap(),
    }
}

fn rendered(runs: &[(u8, ProtocolRun)], vocab: &Vocabulary) -> Vec<String> {
    let mut out = Vec::new();
    for (_, run) in runs {
        out.extend(
            run.trajectories
                .iter()
                .map(|t| t.to_log(vocab, "acceptance", 0)),
        );
    }
    let rows: Vec<ReportRow> = runs.iter().map(|(p, r)| row(r, *p, vocab)).collect();
    for f in [
        ReportFormat::Csv,
        ReportFormat::Json,
        ReportFormat::TableText,
    ] {
        out.push(render_report(&rows, f));
    }
    out
}

fn determinism(f: &Fixture) -> Outcome {
    let provider = oracle(f, 0.2, 8.0);
    let corpus = &f.corpus[..100];
    let go = |workers: usize| -> Vec<String> {
        let opts = RunOptions {
            workers,
            ..RunOptions::default()
        };
        let mut runs = run_deliberation_sweep(
            corpus,
            &provider,
            &f.vocab,
            &f.layout,
            &P_LIST,
            &ConstraintSet::default(),
            opts,
        )
        .unwrap();
        runs.push((
            0,
            run_integrity_test(corpus, &provider, &f.vocab, &f.layout, opts).unwrap(),
        ));
        let src = JustificationSource::Corrupted(generated_corruptions(
            corpus,
            CorruptionKind::StanceFlip,
            5,
        ));
        let ok: Vec<ClaimInstance> = corpus
            .iter()
            .filter(|i| matches!(&src, JustificationSource::Corrupted(m) if m.contains_key(&i.id)))
            .cloned()
            .collect();
        runs.push((
            0,
            run_reliance_test(&ok, &provider, &f.vocab, &f.layout, &src, opts).unwrap(),
        ));
        let stub = Shared(StubDenoiser::new(9, f.vocab.len()));
        runs.push((
            0,
            run_decode(
                corpus,
                &stub,
                &f.vocab,
                &f.layout,
                &ConstraintSet::new(50, GateBasis::OutputSpan),
                opts,
            )
            .unwrap(),
        ));
        rendered(&runs, &f.vocab)
    };
    let a = go(1);
    let b = go(1);
    let c = go(3);
    let same = a == b && a == c;
    outcome(
        same,
        format!(
            "{} files compared across 3 runs (1, 1 and 3 workers)",
            a.len()
        ),
    )
}

fn one_per_step(f: &Fixture) -> Outcome {
    let provider = oracle(f, 0.2, 8.0);
    let runs = run_deliberation_sweep(
        &f.corpus,
        &provider,
        &f.vocab,
        &f.layout,
        &P_LIST,
        &ConstraintSet::default(),
        RunOptions::default(),
    )
    .unwrap();
    let mut checked = 0;
    let mut violations = 0;
    for (_, run) in &runs {
        violations += run.failures.len();
        for t in &run.trajectories {
            checked += 1;
            let mut masked = t.frozen_output.iter().filter(|f| !**f).count();
            let mut seen = std::collections::HashSet::new();
            let mut ok = t.records.len() == masked;
            for r in &t.records {
                let before = masked;
                ok &= seen.insert(r.chosen_position)
                    && !t.frozen_output[r.chosen_position - t.layout.prompt_len];
                masked -= 1;
                ok &= masked < before;
            }
            ok &= masked == 0 && check_trajectory(t).is_ok();
            violations += usize::from(!ok);
        }
    }
    outcome(
        violations == 0,
        format!("{checked} trajectories, {violations} violations"),
    )
}

fn gate_compliance(f: &Fixture) -> Outcome {
    // the noiseless oracle is confident about the verdict, so it would commit it first absent the gate
    let provider = oracle(f, 0.0, 0.0);
    let expected: [(GateBasis, [usize; 5]); 2] = [
        (GateBasis::OutputSpan, [0, 16, 32, 48, 58]),
        (GateBasis::JustificationSpan, [0, 12, 24, 36, 44]),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    for (basis, thresholds) in &expected {
        let base = ConstraintSet::new(0, *basis);
        let runs = run_deliberation_sweep(
            &f.corpus,
            &provider,
            &f.vocab,
            &f.layout,
            &P_LIST,
            &base,
            RunOptions::default(),
        )
        .unwrap();
        for ((p, run), want) in runs.iter().zip(thresholds) {
            let got = ConstraintSet::new(*p, *basis).gate_threshold(&f.layout);
            pass &=
                got == *want && run.failures.is_empty() && run.trajectories.len() == f.corpus.len();
            let bad = run
                .trajectories
                .iter()
                .filter(|t| {
                    let revealed_before = match verdict_commit_step(t).unwrap() {
                        CommitStep::Step(s) => t.records[..s - 1]
                            .iter()
                            .filter(|r| {
                                *basis == GateBasis::OutputSpan
                                    || t.layout.role_at(r.chosen_position)
                                        == Some(Role::Justification)
                            })
                            .count(),
                        CommitStep::Frozen => usize::MAX,
                    };
                    let commit = match verdict_commit_step(t).unwrap() {
                        CommitStep::Step(s) => s,
                        CommitStep::Frozen => 0,
                    };
                    commit < got || revealed_before < got
                })
                .count();
            pass &= bad == 0;
            details.push(format!("{basis:?} p={p} threshold {got} violations {bad}"));
        }
    }
    outcome(pass, details.join("; "))
}

/// Highest-probability (position, token) over the full eligible table, ties to
/// lower position then lower token id.
fn brute_force(
    state: &SeqState,
    cset: &ConstraintSet,
    layout: &SequenceLayout,
    table: impl Fn(usize) -> Vec<f64>,
) -> (usize, TokenId) {
    let mut best: Option<(f64, usize, TokenId)> = None;
    for pos in cset.eligible_positions(state, layout) {
        for (tok, lp) in table(pos).into_iter().enumerate() {
            let better = match best {
                None => true,
                Some((b, bp, bt)) => lp > b || (lp == b && (pos, tok as TokenId) < (bp, bt)),
            };
            if better {
                best = Some((lp, pos, tok as TokenId));
            }
        }
    }
    let (_, p, t) = best.unwrap();
    (p, t)
}

fn greedy_equivalence(f: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let stub = StubDenoiser::new(17, f.vocab.len());
    let mut agree = 0;
    let total = 1000;
    for i in 0..total {
        let inst = &f.corpus[i % f.corpus.len()];
        let mut state = init_state(
            &f.layout,
            &inst.prompt_tokens(&f.vocab, f.layout.prompt_len).unwrap(),
            &f.vocab,
        )
        .unwrap();
        let clean = f
            .layout
            .render_output(
                &f.vocab,
                inst.gold_verdict.proxy(&f.vocab),
                &inst.justification_tokens(&f.vocab),
            )
            .unwrap();
        let keep = rng.gen_range(1..=3);
        let mut out: Vec<usize> = f.layout.output_positions().collect();
        for j in (1..out.len()).rev() {
            out.swap(j, rng.gen_range(0..=j));
        }
        for &p in &out[keep..] {
            state.tokens[p] = clean[p - f.layout.prompt_len];
            state.masked[p] = false;
            state.step += 1;
        }
        let cset = ConstraintSet::new(
            rng.gen_range(0..=100),
            if rng.gen_bool(0.5) {
                GateBasis::OutputSpan
            } else {
                GateBasis::JustificationSpan
            },
        );
        let opts = DecodeOptions {
            top_k: rng.gen_range(1..=4),
        };
        let bound;
        let (denoiser, expected): (&dyn Denoiser, _) = if i % 2 == 0 {
            let e = brute_force(&state, &cset, &f.layout, |p| {
                stub.logprobs(&state.tokens, &state.masked, p)
            });
            (&stub, e)
        } else {
            bound = BoundOracle::new(
                &f.vocab,
                &f.layout,
                inst,
                OracleConfig {
                    justification_noise_rate: 0.3,
                    conditioning_weight: 4.0,
                    seed: 2,
                },
            )
            .unwrap();
            let e = brute_force(&state, &cset, &f.layout, |p| bound.logprobs(&state, p));
            (&bound, e)
        };
        let mut s = state.clone();
        let rec = decode_step(&mut s, denoiser, &cset, &f.layout, opts).unwrap();
        agree += usize::from((rec.chosen_position, rec.chosen_token) == expected);
    }
    outcome(
        agree == total,
        format!("{agree}/{total} states agree (stub and oracle backends)"),
    )
}

/// Held-out competence of the toy denoiser; the recipe is the library default.
fn toy_competence() -> Outcome {
    let vocab = Vocabulary::standard();
    let layout = build_layout(JSON_TEMPLATE, OrderMode::VerdictFirst, 64).unwrap();
    let mut all = generate_corpus(2500, 0.5, 7);
    let held = all.split_off(2000);
    let cfg = mdlm_lab::denoiser::toy::TrainConfig::default();
    let start = Instant::now();
    let trained = train_toy(
        &all,
        &vocab,
        &layout,
        ToyDenoiserConfig::new(vocab.len(), layout.total_len()),
        &cfg,
    )
    .unwrap();
    let train_s = start.elapsed().as_secs_f64();
    let run = run_decode(
        &held,
        &Shared(trained.model),
        &vocab,
        &layout,
        &ConstraintSet::default(),
        RunOptions::default(),
    )
    .unwrap();
    let total_s = start.elapsed().as_secs_f64();
    let acc = run.accuracy();
    outcome(
        acc >= 0.95 && total_s < 600.0 && cfg.epochs <= 20 && run.failures.is_empty(),
        format!(
            "accuracy {acc:.3} after {} epochs; train {train_s:.0}s, train+eval {total_s:.0}s",
            cfg.epochs
        ),
    )
}

/// Worst per-tensor relative error `|num - ana| / max(|num|, |ana|)` over the
/// checked coordinates; `sample` limits each tensor to that many coordinates.
fn worst_gradient_error(cfg: ToyDenoiserConfig, sample: Option<usize>) -> (f64, String, usize) {
    let vocab = Vocabulary::standard();
    let layout = build_layout(JSON_TEMPLATE, OrderMode::VerdictFirst, 64).unwrap();
    let model = ToyDenoiser::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let batch: Vec<_> = generate_corpus(2, 0.5, 4)
        .iter()
        .map(|inst| {
            let ex = build_training_example(inst, &vocab, &layout).unwrap();
            let masked: Vec<usize> = ex
                .output_positions
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(0.6))
                .collect();
            (ex, masked, rng.gen_range(0.2..1.0))
        })
        .collect();
    let loss = |params: &[f64], grads: Option<&mut [f64]>| -> f64 {
        let mut g = grads;
        let mut total = 0.0;
        for (ex, masked, t) in &batch {
            total +=
                sample_loss_and_grad(&model, params, ex, masked, *t, g.as_deref_mut()).unwrap();
        }
        total / batch.len() as f64
    };
    let mut analytic = vec![0.0; model.param_count()];
    loss(&model.params, Some(&mut analytic));
    analytic.iter_mut().for_each(|g| *g /= batch.len() as f64);
    let h = 1e-4;
    let mut params = model.params.clone();
    let mut worst = (0.0f64, String::new(), 0);
    for spec in &model.layout.tensors {
        let coords: Vec<usize> = match sample {
            Some(k) if k < spec.len() => (0..k).map(|_| rng.gen_range(spec.range())).collect(),
            _ => spec.range().collect(),
        };
        worst.2 += coords.len();
        let (mut num2, mut diff2, mut ana2) = (0.0, 0.0, 0.0);
        for i in coords {
            let orig = params[i];
            params[i] = orig + h;
            let up = loss(&params, None);
            params[i] = orig - h;
            let down = loss(&params, None);
            params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            num2 += numeric * numeric;
            ana2 += analytic[i] * analytic[i];
            diff2 += (numeric - analytic[i]).powi(2);
        }
        // key biases have an identically zero gradient; a 1e-6 floor keeps rounding noise from dominating
        let rel = diff2.sqrt() / num2.sqrt().max(ana2.sqrt()).max(1e-6);
        if rel >= worst.0 {
            worst = (rel, spec.name.clone(), worst.2);
        }
    }
    worst
}

fn gradient_check() -> Outcome {
    let vocab = Vocabulary::standard();
    let positions = 104;
    let tiny = ToyDenoiserConfig {
        layers: 2,
        heads: 2,
        model_dim: 8,
        vocab_size: vocab.len(),
        max_positions: positions,
        seed: 5,
    };
    let (tiny_err, tiny_name, tiny_n) = worst_gradient_error(tiny, None);
    let (full_err, full_name, full_n) =
        worst_gradient_error(ToyDenoiserConfig::new(vocab.len(), positions), Some(12));
    outcome(
        tiny_err < 1e-4 && full_err < 1e-4,
        format!(
            "dim-8 model, all {tiny_n} coordinates: worst {tiny_err:.2e} ({tiny_name}); default model, {full_n} sampled coordinates: worst {full_err:.2e} ({full_name})"
        ),
    )
}

fn drift(f: &Fixture) -> Outcome {
    let noisy = oracle(f, 0.2, 8.0);
    let runs = run_deliberation_sweep(
        &f.corpus,
        &noisy,
        &f.vocab,
        &f.layout,
        &P_LIST,
        &ConstraintSet::default(),
        RunOptions::default(),
    )
    .unwrap();
    let rows: Vec<ReportRow> = runs.iter().map(|(p, r)| row(r, *p, &f.vocab)).collect();
    let acc = |p: u8| rows.iter().find(|r| r.p == p).unwrap().metrics.accuracy;
    let drift90 = rows.iter().find(|r| r.p == 90).unwrap().metrics.drift_rate;
    let clean = oracle(f, 0.0, 0.0);
    let control = run_deliberation_sweep(
        &f.corpus,
        &clean,
        &f.vocab,
        &f.layout,
        &P_LIST,
        &ConstraintSet::default(),
        RunOptions::default(),
    )
    .unwrap();
    let control_ok = control
        .iter()
        .all(|(_, r)| r.accuracy() == 1.0 && r.results.len() == f.corpus.len());
    let pass = acc(90) <= acc(0) - 0.05 && drift90 > 0.0 && control_ok;
    outcome(
        pass,
        format!(
            "acc(p0) {:.3}, acc(p90) {:.3}, drift(p90) {:.3}; control min accuracy {:.3}",
            acc(0),
            acc(90),
            drift90,
            control
                .iter()
                .map(|(_, r)| r.accuracy())
                .fold(1.0, f64::min)
        ),
    )
}

fn reliance_gap(f: &Fixture) -> Outcome {
    let provider = oracle(f, 0.0, 8.0);
    let gt = run_reliance_test(
        &f.corpus,
        &provider,
        &f.vocab,
        &f.layout,
        &JustificationSource::GroundTruth,
        RunOptions::default(),
    )
    .unwrap();
    let map = generated_corruptions(&f.corpus, CorruptionKind::StanceFlip, 5);
    let subset: Vec<ClaimInstance> = f
        .corpus
        .iter()
        .filter(|i| map.contains_key(&i.id))
        .cloned()
        .collect();
    let bad = run_reliance_test(
        &subset,
        &provider,
        &f.vocab,
        &f.layout,
        &JustificationSource::Corrupted(map),
        RunOptions::default(),
    )
    .unwrap();
    let rows = [row(&gt, 0, &f.vocab), row(&bad, 0, &f.vocab)];
    let table = render_report(&rows, ReportFormat::Csv);
    let has_classes = rows
        .iter()
        .all(|r| r.metrics.per_class.len() == 2 && r.metrics.agreement.is_some());
    let gap = gt.accuracy() - bad.accuracy();
    outcome(
        gap >= 0.10 && has_classes,
        format!(
            "ground-truth {:.3} ({} inst) vs corrupted {:.3} ({} inst), gap {:.1} points; report rows {}",
            gt.accuracy(),
            gt.results.len(),
            bad.accuracy(),
            bad.results.len(),
            gap * 100.0,
            table.lines().count() - 1
        ),
    )
}

/// Scans frozen justification slots directly against the blacklist surfaces.
fn leak_completeness(f: &Fixture) -> Outcome {
    let phrases: Vec<Vec<&str>> = LEAK_PHRASES
        .iter()
        .map(|p| p.split(' ').collect())
        .collect();
    let slots = f.layout.justification_positions();
    let mut contexts: Vec<String> = f
        .corpus
        .iter()
        .map(|i| i.gold_justification.clone())
        .collect();
    for kind in CorruptionKind::ALL {
        contexts.extend(generated_corruptions(&f.corpus, kind, 5).into_values());
    }
    // every blacklist form at least once, adjacent to ordinary words
    contexts.extend(
        LEAK_PHRASES
            .iter()
            .map(|p| format!("the claim {p} so it is {p} and no claim to verify")),
    );
    let mut hits = 0;
    let mut withheld = 0;
    for text in &contexts {
        let toks = f.vocab.tokenize(text);
        let frozen: BTreeMap<usize, TokenId> = reliance_assignments(&f.layout, &f.vocab, &toks)
            .unwrap()
            .into_iter()
            .collect();
        let kept: Vec<Option<&str>> = slots
            .iter()
            .map(|p| frozen.get(p).map(|t| f.vocab.surface_or_unk(*t)))
            .collect();
        withheld += kept.iter().take(toks.len()).filter(|k| k.is_none()).count();
        for start in 0..kept.len() {
            for ph in &phrases {
                let run = &kept[start..(start + ph.len()).min(kept.len())];
                if run.len() == ph.len() && run.iter().zip(ph).all(|(k, w)| *k == Some(*w)) {
                    hits += 1;
                }
            }
        }
    }
    outcome(
        hits == 0,
        format!(
            "{} contexts, {withheld} slots withheld, {hits} blacklist hits in kept positions",
            contexts.len()
        ),
    )
}

fn fidelity(f: &Fixture) -> Outcome {
    let provider = oracle(f, 0.2, 8.0);
    let opts = RunOptions::default();
    let mut runs =
        vec![run_integrity_test(&f.corpus, &provider, &f.vocab, &f.layout, opts).unwrap()];
    runs.push(
        run_reliance_test(
            &f.corpus,
            &provider,
            &f.vocab,
            &f.layout,
            &JustificationSource::GroundTruth,
            opts,
        )
        .unwrap(),
    );
    let map = generated_corruptions(&f.corpus, CorruptionKind::ValueSwap, 5);
    let subset: Vec<ClaimInstance> = f
        .corpus
        .iter()
        .filter(|i| map.contains_key(&i.id))
        .cloned()
        .collect();
    runs.push(
        run_reliance_test(
            &subset,
            &provider,
            &f.vocab,
            &f.layout,
            &JustificationSource::Corrupted(map),
            opts,
        )
        .unwrap(),
    );
    let trajs: Vec<_> = runs.iter().flat_map(|r| &r.trajectories).collect();
    let bad = trajs
        .iter()
        .filter(|t| !frozen_context_intact(t) || check_trajectory(t).is_err())
        .count();
    let failures: usize = runs.iter().map(|r| r.failures.len()).sum();
    outcome(
        bad == 0 && failures == 0,
        format!(
            "{} trajectories, {bad} altered, {failures} failed instances",
            trajs.len()
        ),
    )
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() -> ExitCode {
    let f = fixture();
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("determinism", Box::new(|| determinism(&f))),
        ("one-token-per-step", Box::new(|| one_per_step(&f))),
        ("gate-compliance", Box::new(|| gate_compliance(&f))),
        (
            "greedy-oracle-equivalence",
            Box::new(|| greedy_equivalence(&f)),
        ),
        ("toy-model-competence", Box::new(toy_competence)),
        ("gradient-check", Box::new(gradient_check)),
        ("drift-pipeline", Box::new(|| drift(&f))),
        ("reliance-gap", Box::new(|| reliance_gap(&f))),
        ("leak-mask-completeness", Box::new(|| leak_completeness(&f))),
        ("intervention-fidelity", Box::new(|| fidelity(&f))),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let (mut ran, mut failed) = (0, 0);
    for (name, check) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        ran += 1;
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{failed} of {ran} criteria failed");
    // failures are reported above; ACCEPTANCE_STRICT=1 turns them into a failing exit status
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
