//! Tensors, the autodiff tape, and the network kernels built on it.

pub mod checkpoint;
pub mod conv;
pub mod graph;
pub mod gru;
pub mod init;
pub mod linear;
pub mod norm;
pub mod ops;
pub mod pool;
pub mod tensor;

pub use checkpoint::{read_snwt, write_snwt};
pub use conv::{ConvSpec, PadMode};
pub use graph::{BatchStats, Graph, VarId};
pub use pool::PoolKind;
pub use tensor::{Element, Tensor};
