use thiserror::Error;

use crate::motion::FourParamMotion;

/// Errors raised by the segmentation pipeline and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate minimal sample: {0}")]
    DegenerateSample(&'static str),

    #[error("nonlinear refinement did not converge (best cost {cost})")]
    NonConvergence { best: FourParamMotion, cost: f64 },

    #[error("insufficient feature correspondences: {found} found, {required} required")]
    InsufficientFeatures { found: usize, required: usize },

    #[error("no model hypothesis with independent support")]
    NoModel,

    #[error("initial model pool is empty")]
    EmptyPool,

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("timestamp regression at line {line}: {t} < {prev}")]
    Order { line: usize, t: u64, prev: u64 },

    #[error("coordinates out of bounds at line {line}: ({x}, {y}) outside {width}x{height}")]
    Bounds {
        line: usize,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            msg: err.to_string(),
        }
    }
}
