//! Minimal differentiable computation: a gradient tape over 2-D arrays,
//! dense and recurrent layers, diagonal Gaussians, Adam, and a binary
//! checkpoint container.

pub mod checkpoint;
pub mod dist;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use checkpoint::{Block, BlockData, Checkpoint};
pub use dist::{kl_diag_gauss, DiagonalGaussian};
pub use layers::{GruCell, Linear, Mlp};
pub use params::{clip_global_norm, Adam, Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("non-finite value produced by op `{op}` (node {node})")]
    NonFiniteValue { op: &'static str, node: usize },
    #[error("non-finite gradient produced by op `{op}` (node {node})")]
    NonFiniteGradient { op: &'static str, node: usize },
    #[error("backward requires a 1x1 loss, got {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
