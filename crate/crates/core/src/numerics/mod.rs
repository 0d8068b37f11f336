//! Dense f64 tensors, reverse-mode autodiff, attention primitives, and
//! the Adam optimizer — the substrate every learnable component runs on.

pub mod adam;
pub mod graph;
pub(crate) mod kernels;
pub mod tensor;

pub use adam::{AdamState, ParamSet};
pub use graph::{Graph, Var, BCE_EPS};
pub use kernels::thread_cap;
pub use tensor::Tensor;

/// Test-only kernel probe.
#[doc(hidden)]
pub fn bench_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    kernels::matmul(a, b, m, k, n, out);
}
