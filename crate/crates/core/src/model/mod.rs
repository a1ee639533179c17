//! Two-branch network assembly, parameter accounting and checkpoints.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, read_header, save_checkpoint, CheckpointHeader,
    TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use config::{ModelConfig, Variant};
pub use network::{Batch, GraphBranch, Model, Network, Output, ParameterCount, SequenceBranch};
