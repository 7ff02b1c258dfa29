//! Small eager-tape autodiff over row-major f32 matrices, plus the pieces a
//! deterministic training loop needs: a counter-based RNG, a grouped parameter
//! store, and Adam. Values are computed op-by-op at graph-build time so code
//! can branch on them (nearest-neighbor quantization, samplers), and every
//! reduction runs in a fixed order so repeated runs are bit-identical.

mod ops_attn;
mod ops_basic;
mod ops_linear;
mod params;
mod rng;
mod tape;
mod tensor;

pub mod optim;

pub use ops_linear::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
pub use rng::{hash_str, CounterRng};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
