use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary: {0}")]
    Vocab(String),

    #[error("vocabulary file line {line}: {msg}")]
    VocabFile { line: usize, msg: String },

    #[error("unknown layout template `{0}`")]
    UnknownTemplate(String),

    #[error("output length {output_len} cannot host scaffold ({scaffold}) + verdict + at least one justification token")]
    OutputTooSmall { output_len: usize, scaffold: usize },

    #[error("prompt length {got} does not match layout prompt_len {expected}")]
    PromptLength { expected: usize, got: usize },

    #[error("position {pos} out of range (sequence length {len})")]
    PositionOutOfRange { pos: usize, len: usize },

    #[error("position {0} is already unmasked")]
    AlreadyUnmasked(usize),

    #[error("state has no masked positions")]
    NothingMasked,

    #[error("top_k must be at least 1")]
    ZeroTopK,

    #[error("no eligible masked position at step {step}: constraint deadlock")]
    Deadlock { step: usize },

    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),

    #[error("instance `{instance}` does not match the decoded prompt")]
    InstanceMismatch { instance: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: schema violation: {msg}")]
    Schema {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: unknown verdict label `{label}`")]
    UnknownLabel {
        path: PathBuf,
        line: usize,
        label: String,
    },

    #[error("instance `{instance}` is incompatible with corruption kind {kind}: {reason}")]
    IncompatibleCorruption {
        instance: String,
        kind: String,
        reason: String,
    },

    #[error("remote transport: {0}")]
    Transport(String),

    #[error("remote schema violation: {0}")]
    WireSchema(String),

    #[error("missing corrupted justification for instance `{0}`")]
    MissingJustification(String),

    #[error("reports and results disagree on instance ids: {0}")]
    IdMismatch(String),

    #[error("justification of {len} tokens does not fit {slots} slots")]
    JustificationTooLong { len: usize, slots: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
