use std::path::PathBuf;

/// Errors produced anywhere in the medcast pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("grid index ({i}, {j}) outside {n_y}x{n_x} grid")]
    IndexOutOfRange {
        i: usize,
        j: usize,
        n_y: usize,
        n_x: usize,
    },
    #[error("point ({lat:.4}N, {lon:.4}E) is outside the grid domain")]
    OutOfDomain { lat: f64, lon: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("feature '{feature}' leaves the grid at lead hour {lead_hours}")]
    FeatureOutsideGrid { feature: String, lead_hours: u32 },
    #[error("run '{model_id}' lacks lead hour {lead} needed for t={t}, dt={dt}")]
    MissingLead {
        model_id: String,
        t: u32,
        dt: u32,
        lead: u32,
    },
    #[error("degenerate value range: min = max = {0}")]
    DegenerateRange(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(
        "{0} inputs cannot be combined: only powers of two (2, 4, 8, ...) are supported \
         because every pairwise step weights its inputs 1:1"
    )]
    NotPowerOfTwo(usize),
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("rerun did not reproduce the recorded outputs: {}", .0.join(", "))]
    NotReproduced(Vec<String>),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
