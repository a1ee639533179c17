//! Differentiable layers over channel-last `[batch, length, channels]`
//! tensors, generic over the element type so the same code trains in `f32`
//! and is gradient-checked in `f64`.

mod attention;
pub mod check;
mod conv;
mod dense;
mod forward;
mod graph;
pub mod init;
mod params;
mod recurrent;

pub use attention::{AttentionBlock, MultiHeadAttention};
pub use conv::{spatial_dropout, BatchNorm, BlockCommon, Conv1d, ConvBlock, ConvBlockConfig, PRelu, PoolConfig};
pub use dense::{Dense, DenseSoftmax};
pub use forward::{Forward, Mode, TraceRow};
pub use graph::{Gcn, MinCutPool, Pooled};
pub use init::Builder;
pub use params::{ParamId, ParamStore, Parameter};
pub use recurrent::{BiLstm, Lstm};
