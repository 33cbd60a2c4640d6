use thiserror::Error;

/// Errors raised by the estimation engine, the simulation harness and the
/// input/output layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("mixing proportions of component {} sum to zero", .component + 1)]
    EmptyComponent { component: usize },

    #[error("component {} vanished: its weight column sums to zero", .component + 1)]
    ComponentVanished { component: usize },

    #[error(
        "component {} is effectively empty: target subset size {target} is below 2",
        .component + 1
    )]
    SubsetTooSmall { component: usize, target: usize },

    #[error("degenerate scale: all {count} values are identical")]
    DegenerateScale { count: usize },

    #[error("kernel window [{lo}, {hi}] extends beyond the grid [{grid_lo}, {grid_hi}]")]
    WindowOutsideGrid {
        lo: f64,
        hi: f64,
        grid_lo: f64,
        grid_hi: f64,
    },

    #[error("bandwidth {bandwidth} is too small for grid spacing {dx}: no grid node inside the kernel window")]
    BandwidthBelowGrid { bandwidth: f64, dx: f64 },

    #[error("invalid bandwidth {0}: must be finite and positive")]
    InvalidBandwidth(f64),

    #[error("expected {expected} bandwidths, got {got}")]
    BandwidthCount { expected: usize, got: usize },

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("smoothed log-likelihood is -inf at initialization (observations {rows:?}); the bandwidth is probably too small for the data spacing")]
    InfiniteInitialLikelihood { rows: Vec<usize> },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("line {line}: {message}")]
    Input { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Stable machine-readable identifier used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSample(_) => "invalid_sample",
            Error::EmptyComponent { .. } => "empty_component",
            Error::ComponentVanished { .. } => "component_vanished",
            Error::SubsetTooSmall { .. } => "subset_too_small",
            Error::DegenerateScale { .. } => "degenerate_scale",
            Error::WindowOutsideGrid { .. } => "window_outside_grid",
            Error::BandwidthBelowGrid { .. } => "bandwidth_below_grid",
            Error::InvalidBandwidth(_) => "invalid_bandwidth",
            Error::BandwidthCount { .. } => "bandwidth_count",
            Error::ZeroWeights => "zero_weights",
            Error::InfiniteInitialLikelihood { .. } => "infinite_initial_likelihood",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Shape(_) => "shape",
            Error::Input { .. } => "input",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
