use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Primal or dual half of a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Primal,
    Dual,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Primal => f.write_str("primal"),
            Side::Dual => f.write_str("dual"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, block counts or indices that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// Parameters outside their admissible range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical routine failed to reach its tolerance.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A delay pattern broke the bounded-age contract, or a view block that
    /// was never delivered was read.
    #[error("protocol error at agent {agent}, sender {sender}, iteration {iteration} ({side}): {detail}")]
    Protocol {
        agent: usize,
        sender: usize,
        iteration: usize,
        side: Side,
        detail: String,
    },

    /// The requested theory does not cover this problem instance.
    #[error("inapplicable: {0}")]
    Inapplicable(String),

    #[error("divergence at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
