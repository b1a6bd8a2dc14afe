use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed tensor container or checkpoint; `field` names the offending part.
    #[error("format error in `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("class policy error: {0}")]
    Policy(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("metric undefined for subset `{subset}`: no evaluated ground truth")]
    UndefinedMetric { subset: String },

    #[error("training diverged at iteration {iteration}: term `{term}` is {value}")]
    Divergence {
        iteration: usize,
        term: &'static str,
        value: f64,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
