use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("window too short: need at least {needed} samples, got {got}")]
    WindowTooShort { needed: usize, got: usize },

    /// The Hankel matrix would have more rows than columns, so full row rank
    /// is impossible regardless of the data.
    #[error("persistence of excitation impossible: order {order} with input dim {dim} needs T >= (m+1)L-1 = {required}, got T = {got}")]
    PeImpossible {
        order: usize,
        dim: usize,
        required: usize,
        got: usize,
    },

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("excitation lost at step {step}: rank {rank} below {required}")]
    LostExcitation {
        step: usize,
        rank: usize,
        required: usize,
    },

    #[error("no feasible input at step {step}")]
    NoFeasibleInput { step: usize },

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }
}
