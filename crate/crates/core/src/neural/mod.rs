//! Dense numerical engine: tensors, a differentiation tape, parameter
//! storage with Adam, and checkpoint serialization.

pub mod checkpoint;
pub mod graph;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_params, load_params_into, save_params};
pub use graph::{Graph, LstmWeights, Var};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;
