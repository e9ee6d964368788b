use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report.
///
/// Variants map one-to-one onto the stable numeric codes returned by
/// [`Error::code`], which the C ABI exposes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("response has no tokens after the prompt boundary")]
    EmptyResponse,
    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("no response for teacher index {0}")]
    MissingTeacher(usize),
    #[error("more than one response for teacher index {0}")]
    DuplicateTeacher(usize),
    #[error("answer checker unavailable: {0}")]
    CheckerUnavailable(String),

    #[error("index {index} out of range for pool of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("too few prompts to split: {0}")]
    TooFewPrompts(String),

    #[error("text is empty")]
    EmptyText,
    #[error("pool fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("k = {k} outside 1..={pool_size}")]
    KOutOfRange { k: usize, pool_size: usize },
    #[error("no text for prompt `{0}`")]
    UnknownPrompt(String),
    #[error("router needs externally supplied features: {0}")]
    ExternalFeaturesRequired(String),

    #[error("unknown teacher `{0}`")]
    UnknownTeacher(String),
    #[error("no teacher in the pool belongs to family `{0}`")]
    NoFamilyMatch(String),
    #[error("calibration scoreboards are empty")]
    EmptyCalibration,
    #[error("no scoreboard for prompt `{0}`")]
    MissingBoard(String),

    #[error("endpoint `{endpoint}` failed for prompt `{prompt_id}`: {message}")]
    Endpoint {
        endpoint: String,
        prompt_id: String,
        message: String,
    },
    #[error("tokenization mismatch: {0}")]
    TokenizationMismatch(String),
    #[error("rejection sampling requires a verifier")]
    VerifierUnavailable,

    #[error("no generation for prompt `{0}`")]
    MissingGeneration(String),
    #[error("prompt `{prompt_id}` allocated to `{expected}` but generated by `{found}`")]
    TeacherMismatch {
        prompt_id: String,
        expected: String,
        found: String,
    },

    #[error("invalid world spec: {0}")]
    WorldSpec(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Stable numeric code, shared with the C ABI. Zero is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Parse { .. } => 2,
            Error::DuplicateId(_) => 3,
            Error::InvalidPool(_) => 4,
            Error::InvalidConfig(_) => 5,
            Error::EmptyResponse => 10,
            Error::AlphaOutOfRange(_) => 11,
            Error::NonFinite(_) => 12,
            Error::MissingTeacher(_) => 13,
            Error::DuplicateTeacher(_) => 14,
            Error::CheckerUnavailable(_) => 15,
            Error::IndexOutOfRange { .. } => 20,
            Error::TooFewPrompts(_) => 21,
            Error::EmptyText => 30,
            Error::FingerprintMismatch { .. } => 31,
            Error::NonFiniteLoss { .. } => 32,
            Error::KOutOfRange { .. } => 33,
            Error::UnknownPrompt(_) => 34,
            Error::ExternalFeaturesRequired(_) => 35,
            Error::UnknownTeacher(_) => 40,
            Error::NoFamilyMatch(_) => 41,
            Error::EmptyCalibration => 42,
            Error::MissingBoard(_) => 43,
            Error::Endpoint { .. } => 50,
            Error::TokenizationMismatch(_) => 51,
            Error::VerifierUnavailable => 52,
            Error::MissingGeneration(_) => 60,
            Error::TeacherMismatch { .. } => 61,
            Error::WorldSpec(_) => 70,
        }
    }
}
