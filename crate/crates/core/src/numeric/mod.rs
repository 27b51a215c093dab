//! Dense tensors, reverse-mode gradients, initialization, losses, ADAM and
//! early stopping. Everything computes in `f64`.

mod container;
mod graph;
mod init;
mod loss;
mod optim;
mod params;
mod tensor;

pub use container::{load_container, read_container, save_container, write_container, ModelFile, MAGIC};
pub use graph::{sigmoid, tanh, BackwardFn, Graph, Var};
pub use init::{glorot_limit, glorot_uniform};
pub use loss::{bce, bce_value, mape_masked, mape_value, BCE_EPS, MAPE_EPS};
pub use optim::{adam_step, early_stop, AdamState, EarlyStopConfig, OptimizerConfig};
pub use params::ParamStore;
pub use tensor::Tensor;
pub(crate) use tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
