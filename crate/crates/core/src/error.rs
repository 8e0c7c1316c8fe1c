use thiserror::Error;

use crate::losses::LossReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("class {0} has not been seen")]
    UnseenClass(usize),

    #[error("empty class set")]
    EmptyClassSet,

    #[error("missing required loss term `{0}`")]
    MissingTerm(&'static str),

    #[error("non-finite loss at task {task}, iteration {iteration}: {report}")]
    NonFiniteLoss {
        task: usize,
        iteration: usize,
        report: Box<LossReport>,
    },

    #[error("format error in {source_name}{}: {detail}", location.as_ref().map(|l| format!(" at {l}")).unwrap_or_default())]
    Format {
        source_name: String,
        location: Option<String>,
        detail: String,
    },

    #[error("invalid config field `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(source_name: impl Into<String>, location: Option<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            location,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
