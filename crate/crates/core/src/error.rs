use thiserror::Error;

/// A syntax or declaration error with its 1-based source position.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("arithmetic overflow in `{0}`")]
    Overflow(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),

    #[error("empty secret domain")]
    EmptyDomain,
    #[error("negative probability weight {0}")]
    NegativeWeight(String),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(String),
    #[error("malformed rational `{0}`")]
    BadRational(String),
    #[error("conditioning on an event of probability zero")]
    ZeroMassEvent,

    #[error("evaluation error on trace {trace}: {source}")]
    Eval { trace: String, source: EvalError },
    #[error("thread {thread} is not enabled (enabled: {enabled:?})")]
    NotEnabled { thread: usize, enabled: Vec<usize> },
    #[error("step budget of {budget} exhausted on trace {trace}")]
    BudgetExhausted { budget: usize, trace: String },

    #[error("scheduler: {0}")]
    Scheduler(String),

    #[error("PKS: {0}")]
    Pks(String),
}

impl Error {
    /// True for errors caused by a malformed scheduler specification or a
    /// scheduler decision that violates its contract.
    pub fn is_scheduler(&self) -> bool {
        matches!(self, Error::Scheduler(_))
    }
}
