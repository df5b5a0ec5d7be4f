pub mod corpus;
pub mod eval;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod train;

pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, TensorError, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
