use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("h' is not finite at node t = {node} (value {value})")]
    NonFiniteNode { node: f64, value: f64 },

    #[error("degenerate schedule `{0}`: h(1) = 0 cannot normalize")]
    Degenerate(String),

    #[error("objective undefined: {0}")]
    ObjectiveUndefined(String),

    #[error("enumeration needs {required} tuples, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    #[error("conditional expectation undefined: p_correct = 0 for prompt `{0}`")]
    UndefinedConditional(String),

    #[error("non-finite parameter after update at step {step}; step size too large?")]
    Diverged { step: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_prob(t: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what}: t = {t} is outside [0, 1]")))
    }
}
