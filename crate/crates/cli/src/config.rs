//! Experiment configuration: TOML file, `--set key=value` overrides, then
//! dedicated flags, in increasing precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mdlm_lab::analysis::ReportFormat;
use mdlm_lab::constraints::{ConstraintSet, GateBasis};
use mdlm_lab::corpus::CorruptionKind;
use mdlm_lab::denoiser::oracle::OracleConfig;
use mdlm_lab::denoiser::toy::TrainConfig;
use mdlm_lab::layout::{
    build_layout, OrderMode, Role, SequenceLayout, DEFAULT_OUTPUT_LEN, DEFAULT_PROMPT_LEN,
    JSON_TEMPLATE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub vocab_path: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub denoiser: DenoiserSpec,
    pub layout: LayoutConfig,
    pub constraints: ConstraintConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub intervene: InterveneConfig,
    pub report: ReportConfig,
    pub top_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            workers: 1,
            vocab_path: None,
            corpus: CorpusConfig::default(),
            denoiser: DenoiserSpec::Oracle(OracleConfig::default()),
            layout: LayoutConfig::default(),
            constraints: ConstraintConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            intervene: InterveneConfig::default(),
            report: ReportConfig::default(),
            top_k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n: usize,
    pub refuted_fraction: f64,
    pub seed: u64,
    pub two_hop_fraction: f64,
    /// Line-delimited external records; replaces generation when set.
    pub path: Option<PathBuf>,
    /// Held-out slice for `train`: this many generated instances beyond `n`.
    pub eval_n: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n: 500,
            refuted_fraction: 0.5,
            seed: 1,
            two_hop_fraction: 0.25,
            path: None,
            eval_n: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    Toy { checkpoint: PathBuf },
    Oracle(OracleConfig),
    Remote { endpoint: String },
    Stub { seed: u64 },
}

impl DenoiserSpec {
    /// Parses `toy:PATH`, `oracle`, `remote:URL` or `stub:SEED`.
    pub fn parse_flag(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
        match (kind, arg) {
            ("toy", Some(p)) if !p.is_empty() => Ok(Self::Toy {
                checkpoint: p.into(),
            }),
            ("oracle", None) => Ok(Self::Oracle(OracleConfig::default())),
            ("remote", Some(u)) if !u.is_empty() => Ok(Self::Remote { endpoint: u.into() }),
            ("stub", Some(seed)) => seed
                .parse()
                .map(|seed| Self::Stub { seed })
                .map_err(|e| format!("--denoiser stub seed: {e}")),
            ("stub", None) => Ok(Self::Stub { seed: 0 }),
            _ => Err(format!(
                "--denoiser: expected toy:PATH, oracle, remote:URL or stub[:SEED], got `{s}`"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    pub template: String,
    pub order_mode: OrderMode,
    pub output_len: usize,
    pub prompt_len: usize,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            template: JSON_TEMPLATE.into(),
            order_mode: OrderMode::VerdictFirst,
            output_len: DEFAULT_OUTPUT_LEN,
            prompt_len: DEFAULT_PROMPT_LEN,
        }
    }
}

impl LayoutConfig {
    pub fn build(&self) -> mdlm_lab::Result<SequenceLayout> {
        Ok(
            build_layout(&self.template, self.order_mode, self.output_len)?
                .with_prompt_len(self.prompt_len),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    pub deliberation_pct: u8,
    pub p_list: Vec<u8>,
    pub basis: GateBasis,
    pub gated_roles: Vec<Role>,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            deliberation_pct: 0,
            p_list: vec![0, 25, 50, 75, 90],
            basis: GateBasis::OutputSpan,
            gated_roles: vec![Role::Verdict],
        }
    }
}

impl ConstraintConfig {
    pub fn set(&self, p: u8) -> ConstraintSet {
        ConstraintSet {
            deliberation_pct: p,
            basis: self.basis,
            gated_roles: self.gated_roles.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterveneProtocol {
    Integrity,
    Reliance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    GroundTruth,
    Corrupted,
}

/// Where corrupted justifications come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionOrigin {
    /// Justifications decoded by an Integrity Test with the same denoiser.
    Integrity,
    /// Mechanical corruption of the gold justification.
    Generated(CorruptionKind),
    /// Line-delimited `{instance_id, text, corruption_kind}` records.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterveneConfig {
    pub protocol: InterveneProtocol,
    pub source: SourceKind,
    pub corruption: CorruptionOrigin,
    pub corruption_seed: u64,
}

impl Default for InterveneConfig {
    fn default() -> Self {
        Self {
            protocol: InterveneProtocol::Integrity,
            source: SourceKind::GroundTruth,
            corruption: CorruptionOrigin::Integrity,
            corruption_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub formats: Vec<ReportFormat>,
    pub plot_series: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            formats: vec![
                ReportFormat::Csv,
                ReportFormat::Json,
                ReportFormat::TableText,
            ],
            plot_series: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error("--set {0}: expected key=value with a dotted key")]
    BadOverride(String),
    #[error("config: {0}")]
    Invalid(String),
}

/// Parses TOML text into a config, applying `key=value` overrides first.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut root: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_owned()))?;
    if !overrides.is_empty() {
        // a section absent from the file starts from its defaults, so `--set denoiser.seed=1` keeps the backend tag
        let defaults = toml::Table::try_from(ExperimentConfig::default())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            if let Some((section, _)) = o
                .split_once('=')
                .and_then(|(k, _)| k.trim().split_once('.'))
            {
                if let (false, Some(d)) = (root.contains_key(section), defaults.get(section)) {
                    root.insert(section.to_owned(), d.clone());
                }
            }
            apply_override(&mut root, o)?;
        }
    }
    let cfg: ExperimentConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_owned()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<ExperimentConfig, ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::File {
            path: p.to_owned(),
            msg: e.to_string(),
        })?,
        None => String::new(),
    };
    parse_config(&text, overrides).map_err(|e| match (path, e) {
        (Some(p), ConfigError::Invalid(msg)) => ConfigError::File {
            path: p.to_owned(),
            msg,
        },
        (_, e) => e,
    })
}

fn apply_override(root: &mut toml::Table, o: &str) -> Result<(), ConfigError> {
    let (key, raw) = o
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(o.into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(o.into()));
    }
    // bare words are strings; anything else parses as a TOML value
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("{key}: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return bad("workers: must be at least 1".into());
        }
        if self.top_k == 0 {
            return bad("top_k: must be at least 1".into());
        }
        if self.corpus.path.is_none() && self.corpus.n == 0 {
            return bad("corpus.n: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.corpus.refuted_fraction) {
            return bad("corpus.refuted_fraction: must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.corpus.two_hop_fraction) {
            return bad("corpus.two_hop_fraction: must lie in [0, 1]".into());
        }
        if let DenoiserSpec::Oracle(o) = &self.denoiser {
            o.validate()
                .map_err(|e| ConfigError::Invalid(format!("denoiser: {e}")))?;
        }
        self.layout
            .build()
            .map_err(|e| ConfigError::Invalid(format!("layout: {e}")))?;
        if self.constraints.deliberation_pct > 100 {
            return bad("constraints.deliberation_pct: must lie in [0, 100]".into());
        }
        if self.constraints.p_list.is_empty() {
            return bad("constraints.p_list: must not be empty".into());
        }
        if let Some(p) = self.constraints.p_list.iter().find(|p| **p > 100) {
            return bad(format!("constraints.p_list: {p} outside [0, 100]"));
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.model.layers == 0
            || self.model.heads == 0
            || !self.model.model_dim.is_multiple_of(self.model.heads.max(1))
        {
            return bad(
                "model: layers and heads must be positive and model_dim divisible by heads".into(),
            );
        }
        if self.report.formats.is_empty() {
            return bad("report.formats: must not be empty".into());
        }
        Ok(())
    }

    /// sha256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        mdlm_lab::analysis::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_win_and_flags_parse() {
        let cfg = parse_config(
            "[constraints]\ndeliberation_pct = 10\n",
            &[
                "constraints.deliberation_pct=90".into(),
                "layout.order_mode=justification_first".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.constraints.deliberation_pct, 90);
        assert_eq!(cfg.layout.order_mode, OrderMode::JustificationFirst);
        assert_eq!(
            DenoiserSpec::parse_flag("remote:http://x").unwrap(),
            DenoiserSpec::Remote {
                endpoint: "http://x".into()
            }
        );
        assert!(DenoiserSpec::parse_flag("gpu").is_err());
    }

    #[test]
    fn field_level_errors() {
        let e = parse_config("[corpus]\nn = \"many\"\n", &[])
            .unwrap_err()
            .to_string();
        assert!(e.contains("n"), "{e}");
        let e = parse_config("[constraints]\ndeliberation_pct = 101\n", &[])
            .unwrap_err()
            .to_string();
        assert!(e.contains("deliberation_pct"), "{e}");
        let e = parse_config("bogus = 1\n", &[]).unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        assert!(parse_config("[denoiser]\nbackend = \"toy\"\n", &[]).is_err());
    }

    #[test]
    fn oracle_table() {
        let cfg =
            parse_config("[denoiser]\nbackend = \"oracle\"\njustification_noise_rate = 0.2\nconditioning_weight = 8.0\nseed = 3\n", &[])
                .unwrap();
        assert!(matches!(
            cfg.denoiser,
            DenoiserSpec::Oracle(OracleConfig { seed: 3, .. })
        ));
    }
}
