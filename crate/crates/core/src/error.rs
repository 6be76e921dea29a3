use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("problem generation failed after {attempts} attempts: {reason}")]
    Degenerate { attempts: u32, reason: String },

    /// `enumerate_solutions` refuses trees above the cap.
    #[error("tree has {leaves} leaves, above the enumeration cap of {cap}")]
    TooLarge { leaves: u128, cap: u64 },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("scoring failed: {0}")]
    Scoring(String),

    /// A generator or verifier fault inside a search, with the stages
    /// completed before it.
    #[error("search on problem {problem_id} failed at stage {stage}: {message}")]
    SearchFault { problem_id: u64, stage: usize, message: String, trace: Box<crate::search::SearchTrace> },

    /// An instance of a sweep failed; names the failing coordinates.
    #[error("sweep failed at method {method}, point {point}, repeat {repeat}, problem {problem_id}: {source}")]
    SweepFailed { method: String, point: usize, repeat: usize, problem_id: u64, source: Box<Error> },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
