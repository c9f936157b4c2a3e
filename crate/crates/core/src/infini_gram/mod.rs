//! Suffix-array ∞-gram language model over a token corpus, plus the
//! rank-correlation machinery used to compare it against model likelihoods.

mod corpus;
mod index;
pub mod memorization;

pub use corpus::TokenCorpus;
pub use index::{JointLikelihood, NgramPrediction, SuffixIndex, LOG_FLOOR};
pub use memorization::{
    average_ranks, distributional_memorization, example_logliks, spearman_rho, CorrelationUnit,
    ProbTrace, TraceRecord,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NgramError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("token {token} at position {position} is not below vocab size {vocab_size}")]
    TokenOutOfRange {
        token: u32,
        position: usize,
        vocab_size: u32,
    },
    #[error("document boundaries must be strictly increasing and end within the corpus")]
    BadBoundaries,
    #[error("could not parse token `{text}` on line {line}")]
    Parse { line: usize, text: String },
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("need at least 2 paired values, got {0}")]
    TooFewPairs(usize),
    #[error("paired sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("value at position {0} is not finite")]
    NonFinite(usize),
    #[error("rank correlation is undefined when one side is constant")]
    ConstantInput,
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("traces are misaligned: {0}")]
    Misaligned(String),
    #[error("need at least 2 examples to correlate per-example likelihoods, got {0}")]
    TooFewExamples(usize),
}

pub type Result<T> = std::result::Result<T, NgramError>;
