use thiserror::Error;

/// Errors raised by the laboratory's numerical kernels and diagnostics.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("{what} out of domain: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("dyadic index q = {q} outside [-1, {q_max}]")]
    BlockIndex { q: i32, q_max: i32 },

    #[error("degenerate vector-field family: I = {value:e} at witness ({}, {})", witness[0], witness[1])]
    Degenerate { value: f64, witness: [f64; 2] },

    #[error("non-finite values in {field} at t = {t}")]
    Divergence { field: &'static str, t: f64 },

    #[error("CFL bound violated at t = {t}: courant {courant:.3} > {cfl_max} after {halvings} halvings")]
    Cfl {
        t: f64,
        courant: f64,
        cfl_max: f64,
        halvings: u32,
    },

    #[error("velocity history covers [{start}, {end}] but [{from}, {to}] was requested")]
    HistoryRange {
        start: f64,
        end: f64,
        from: f64,
        to: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error("malformed dump {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn domain(what: &'static str, detail: impl Into<String>) -> LabError {
    LabError::Domain {
        what,
        detail: detail.into(),
    }
}
