use std::path::PathBuf;

/// Errors raised anywhere in the fitting and statistics pipeline.
///
/// Every variant names the stage that failed so that command-line output
/// points at the offending step.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("mesh: parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("mesh: non-manifold edge ({0}, {1}) shared by {2} faces")]
    NonManifold(usize, usize, usize),
    #[error("mesh: open boundary at edge ({0}, {1})")]
    OpenBoundary(usize, usize),
    #[error("mesh: Euler characteristic {0}, expected 2 (genus 0)")]
    Genus(i64),
    #[error("boundary division: {0}")]
    Division(String),
    #[error("cms: {0}")]
    Cms(String),
    #[error("flatten: {0}")]
    Flatten(String),
    #[error("polynomial fit: {0}")]
    Fit(String),
    #[error("gc2d: {0}")]
    Gc2d(String),
    #[error("sweep fit: {0}")]
    Sweep(String),
    #[error("lp-dss-rep: {0}")]
    Rep(String),
    #[error("gof: {0}")]
    Gof(String),
    #[error("stats: {0}")]
    Stats(String),
    #[error("synth: {0}")]
    Synth(String),
    #[error("config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
