use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, delays, grids or scenario settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite or otherwise unusable input value.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("non-finite result from {what} at state {state:?}, input {input:?}")]
    Numeric {
        what: &'static str,
        state: Vec<f64>,
        input: Vec<f64>,
    },

    /// The predictor state left the finite range while marching in x.
    #[error("predictor diverged at x = {x} (t = {t})")]
    PredictorDivergence { t: f64, x: f64 },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
