//! End-to-end runs of the command-line entry point.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use mdlm_lab::denoiser::remote::{DenoiseRequest, DenoiseResponse, HealthResponse};
use mdlm_lab::denoiser::stub::StubDenoiser;
use mdlm_lab::vocab::Vocabulary;
use mdlm_lab_cli::config::{parse_config, ExperimentConfig};
use mdlm_lab_cli::{check_run, default_config_text, run_args};

fn lab(args: &[&str]) -> i32 {
    run_args(std::iter::once("mdlm-lab").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, keyed by relative path.
fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

const SMALL: [&str; 4] = [
    "--set",
    "corpus.n=12",
    "--set",
    "denoiser.justification_noise_rate=0.2",
];

#[test]
fn default_config_file_matches_builtin_defaults() {
    assert_eq!(
        parse_config(default_config_text(), &[]).unwrap(),
        ExperimentConfig::default()
    );
}

#[test]
fn sweep_reruns_are_byte_identical_across_directories_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let mut args = vec![
        "sweep",
        "--p-list",
        "0,50,90",
        "--set",
        "denoiser.conditioning_weight=8",
    ];
    args.extend(SMALL);
    assert_eq!(lab(&[&args[..], &["--out", path_str(&a)]].concat()), 0);
    assert_eq!(
        lab(&[&args[..], &["--out", path_str(&b), "--workers", "3"]].concat()),
        0
    );
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(
        ta.contains_key("manifest.json")
            && ta.contains_key("p090/summary.csv")
            && ta.contains_key("summary.json")
    );
    assert_eq!(ta, tb);
    let (rows, problems) = check_run(&a).unwrap();
    assert!(problems.is_empty(), "{problems:?}");
    assert_eq!(rows.iter().map(|r| r.p).collect::<Vec<_>>(), [0, 50, 90]);
}

#[test]
fn analyze_check_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(
        lab(&[
            &["decode", "--p", "50", "--out", path_str(&run)][..],
            &SMALL
        ]
        .concat()),
        0
    );
    assert_eq!(lab(&["analyze", path_str(&run), "--check"]), 0);

    let results = run.join("results.jsonl");
    let text = std::fs::read_to_string(&results).unwrap();
    let flipped = if text.contains("\"predicted_verdict\":\"Refuted\"") {
        text.replacen(
            "\"predicted_verdict\":\"Refuted\"",
            "\"predicted_verdict\":\"Supported\"",
            1,
        )
    } else {
        text.replacen(
            "\"predicted_verdict\":\"Supported\"",
            "\"predicted_verdict\":\"Refuted\"",
            1,
        )
    };
    std::fs::write(&results, flipped).unwrap();
    assert_eq!(lab(&["analyze", path_str(&run), "--check"]), 3);
    let (_, problems) = check_run(&run).unwrap();
    assert!(
        problems.iter().any(|p| p.contains("results.jsonl")),
        "{problems:?}"
    );
}

#[test]
fn exit_codes_separate_config_and_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(
        lab(&[
            "decode",
            "--out",
            path_str(&out),
            "--set",
            "corpus.nonsense=1"
        ]),
        1
    );
    assert_eq!(
        lab(&[
            "decode",
            "--out",
            path_str(&out),
            "--set",
            "constraints.deliberation_pct=101"
        ]),
        1
    );
    assert_eq!(
        lab(&["decode", "--out", path_str(&out), "--denoiser", "toy:"]),
        1
    );
    assert_eq!(
        lab(&[
            "decode",
            "--out",
            path_str(&out),
            "--denoiser",
            "toy:/nonexistent/model.ckpt"
        ]),
        1
    );
    assert_eq!(
        lab(&[
            "decode",
            "--out",
            path_str(&out),
            "--denoiser",
            "remote:http://127.0.0.1:9"
        ]),
        2
    );
    assert_eq!(lab(&["analyze", path_str(&tmp.path().join("missing"))]), 1);
    assert_eq!(lab(&["no-such-command"]), 1);
}

#[test]
fn binary_reports_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_mdlm-lab");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let ok = status(&[
        "gen-corpus",
        "--out",
        path_str(&tmp.path().join("c")),
        "--set",
        "corpus.n=5",
    ]);
    assert!(ok.status.success());
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("c/corpus.jsonl"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    let bad = status(&[
        "decode",
        "--set",
        "layout.output_len=3",
        "--out",
        path_str(&tmp.path().join("d")),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
}

#[test]
fn intervene_writes_protocol_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let integ = tmp.path().join("integrity");
    assert_eq!(
        lab(&[
            &[
                "intervene",
                "--protocol",
                "integrity",
                "--out",
                path_str(&integ)
            ][..],
            &SMALL
        ]
        .concat()),
        0
    );
    assert!(integ.join("integrity/categories.json").exists());
    assert_eq!(lab(&["analyze", path_str(&integ), "--check"]), 0);

    let rel = tmp.path().join("reliance");
    let args = [
        "intervene",
        "--protocol",
        "reliance",
        "--source",
        "corrupted",
        "--set",
        "intervene.corruption={generated=\"StanceFlip\"}",
    ];
    assert_eq!(
        lab(&[
            &args[..],
            &[
                "--out",
                path_str(&rel),
                "--set",
                "denoiser.conditioning_weight=8"
            ],
            &SMALL
        ]
        .concat()),
        0
    );
    assert_eq!(lab(&["analyze", path_str(&rel), "--check"]), 0);
}

#[test]
fn train_then_decode_with_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let small_model = [
        "--set",
        "corpus.n=4",
        "--set",
        "corpus.eval_n=2",
        "--set",
        "train.epochs=1",
        "--set",
        "model.model_dim=8",
        "--set",
        "model.heads=2",
        "--set",
        "model.layers=1",
    ];
    assert_eq!(
        lab(&[&["train", "--out", path_str(&train_dir)][..], &small_model].concat()),
        0
    );
    let ckpt = train_dir.join("model.ckpt");
    assert!(
        ckpt.exists()
            && train_dir.join("loss.csv").exists()
            && train_dir.join("eval/results.jsonl").exists()
    );
    assert_eq!(lab(&["analyze", path_str(&train_dir), "--check"]), 0);

    let flag = format!("toy:{}", ckpt.display());
    let dec = tmp.path().join("dec");
    assert_eq!(
        lab(&[
            "decode",
            "--denoiser",
            &flag,
            "--set",
            "corpus.n=3",
            "--out",
            path_str(&dec)
        ]),
        0
    );
    assert_eq!(lab(&["analyze", path_str(&dec), "--check"]), 0);
}

struct Server {
    url: String,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
    }
}

fn serve_stub(seed: u64) -> Server {
    let vocab = Vocabulary::standard();
    let stub = StubDenoiser::new(seed, vocab.len());
    let health = HealthResponse {
        backend: "stub".into(),
        vocab_digest: vocab.digest(),
        vocab_size: vocab.len(),
    };
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let handle = std::thread::spawn(move || {
        while !flag.load(Ordering::SeqCst) {
            let Ok(Some(mut req)) = server.recv_timeout(std::time::Duration::from_millis(20))
            else {
                continue;
            };
            let body = match req.url() {
                "/v1/health" => serde_json::to_string(&health).unwrap(),
                _ => {
                    let mut text = String::new();
                    req.as_reader().read_to_string(&mut text).unwrap();
                    let r: DenoiseRequest = serde_json::from_str(&text).unwrap();
                    serde_json::to_string(&DenoiseResponse::from(
                        &stub.predict_raw(&r.tokens, &r.masked, r.top_k),
                    ))
                    .unwrap()
                }
            };
            let _ = req.respond(tiny_http::Response::from_string(body));
        }
    });
    Server {
        url,
        stop,
        handle: Some(handle),
    }
}

#[test]
fn remote_backend_matches_in_process_stub() {
    let server = serve_stub(4);
    let tmp = tempfile::tempdir().unwrap();
    let remote: PathBuf = tmp.path().join("remote");
    let local: PathBuf = tmp.path().join("local");
    let flag = format!("remote:{}", server.url);
    let common = ["decode", "--p", "25", "--set", "corpus.n=3"];
    assert_eq!(
        lab(&[
            &common[..],
            &["--denoiser", &flag, "--out", path_str(&remote)]
        ]
        .concat()),
        0
    );
    assert_eq!(
        lab(&[
            &common[..],
            &["--denoiser", "stub:4", "--out", path_str(&local)]
        ]
        .concat()),
        0
    );
    for file in ["results.jsonl", "summary.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(remote.join(file)).unwrap(),
            std::fs::read(local.join(file)).unwrap(),
            "{file}"
        );
    }
    assert_eq!(lab(&["analyze", path_str(&remote), "--check"]), 0);
}
