//! Crate-wide error type. Exit-code mapping for the CLI lives in `main`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("simulation diverged at t = {t:.4} s (non-finite state)")]
    SimulationDiverged { t: f64 },

    #[error("calibration failed for {kind}: no amplitude up to {searched:.1} N causes a fall")]
    CalibrationFailed { kind: String, searched: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("shape mismatch in layer `{layer}`: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("non-finite gradient for parameter `{name}` at index {index}")]
    NonFiniteGradient { name: String, index: usize },

    #[error("stratum `{stratum}` too small: has {count} trajectories, needs at least {needed}")]
    StratumTooSmall {
        stratum: String,
        count: usize,
        needed: usize,
    },

    #[error("empty trajectory set")]
    EmptySet,

    #[error("lead-time class {class} absent from training data")]
    ClassMissing { class: usize },

    #[error("no training targets in range [0, 1)")]
    EmptyTargetRange,

    #[error(
        "threshold target FPR {target:.3} unattainable: best achievable is {best_fpr:.3} at p* = {best_p:.2}"
    )]
    ThresholdUnattainable {
        target: f64,
        best_fpr: f64,
        best_p: f64,
    },

    #[error("config error in `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error("bundle format version {found} unsupported (expected {expected})")]
    BundleVersion { found: u32, expected: u32 },

    #[error("bundle integrity check failed: {0}")]
    BundleCorrupt(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
