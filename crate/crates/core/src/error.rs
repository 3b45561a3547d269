use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity error: order {order} exceeds table ceiling {ceiling}")]
    Capacity { order: usize, ceiling: usize },

    #[error("index error: component {component} out of range for dimension {dim}")]
    Index { component: usize, dim: usize },

    #[error("conditioning error: Cholesky failed at leading minor {minor} (pivot {pivot:e}) after jitter {jitter:e}")]
    Conditioning { minor: usize, pivot: f64, jitter: f64 },

    #[error("time point {0:?} is not on the path grid")]
    OffGrid(Vec<f64>),

    #[error("unsupported driver: {0}")]
    UnsupportedDriver(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("scan error: {0}")]
    Scan(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
