use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid has {nodes} nodes but the exact sampler is capped at {cap}")]
    SizeCap { nodes: usize, cap: usize },

    #[error("covariance factorisation failed: {0}")]
    Factorisation(String),

    #[error("circulant embedding rejected: clamped negative mass {clamped:.3e} out of spectrum {total:.3e}")]
    Embedding { clamped: f64, total: f64 },

    #[error("grid alignment: {0}")]
    Alignment(String),

    #[error("reference grid too coarse: {0}")]
    Refinement(String),

    #[error("matrix is ill-conditioned (condition number {cond:.3e})")]
    Conditioning { cond: f64 },

    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("outside theorem scope: {0}")]
    Scope(String),

    #[error("level {level} outside profile coverage [{lo}, {hi}]")]
    Coverage { level: f64, lo: f64, hi: f64 },

    #[error("invalid experiment plan: {0}")]
    Plan(String),

    #[error("rate fit needs at least 3 usable points, got {0}")]
    Fit(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
