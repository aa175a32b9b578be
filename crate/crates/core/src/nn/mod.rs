pub mod activation;
pub mod adam;
pub mod gemm;
pub mod mlp;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Linear, Mlp};
pub use tape::{Gradients, Segments, Tape, TriKind, Var};
pub use tensor::Tensor;
