//! Blind inverse problems with generative priors.
//!
//! Jointly estimates unknown source signals and an unknown measurement
//! process from observations alone: a shallow trainable surrogate of the
//! measurement process and the latent codes of a pre-trained generator are
//! updated in alternation, with the latents projected back into their box
//! after every step. Classical baselines (latent-space projected gradient
//! descent with and without the true operator, Wiener deconvolution, naive
//! additive separation, FastICA) are provided for comparison.
//!
//! Everything is built on a small reverse-mode autodiff tape ([`autodiff`])
//! over dense `f64` tensors ([`tensor`]).

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod gan;
pub mod gradcheck;
pub mod harness;
mod kernels;
pub mod measurement;
pub mod nn;
pub mod rng;
pub mod solver;
pub mod surrogate;
pub mod tensor;

use std::path::PathBuf;

pub use autodiff::{grad_check, Tape, Var};
pub use gan::{Discriminator, Generator};
pub use measurement::{ConvKernel, MixingMatrix, ObservationSet, Operator};
pub use rng::Rng;
pub use solver::{RecoveryResult, SolverConfig};
pub use surrogate::Surrogate;
pub use tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite value during {context}")]
    NonFinite { context: String },
    #[error("underdetermined: {observations} observed mixtures for {sources} sources")]
    Underdetermined { observations: usize, sources: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    /// Process exit status: 2 for bad input, 3 for I/O or file format, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::NonFinite { .. } => 4,
            Error::Tensor(_) | Error::InvalidArgument(_) | Error::Config(_) | Error::Underdetermined { .. } => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
