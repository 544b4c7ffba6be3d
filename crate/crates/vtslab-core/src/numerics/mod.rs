//! Dense `f64` tensors, reverse-mode autodiff, seeded RNG, and the
//! finite-difference gradient oracle.
//!
//! The op set is deliberately small and closed: everything the rest of the
//! crate differentiates is built from the primitives on [`Tape`], and every
//! backward rule is validated against [`fd_gradient`] in tests. There is no
//! broadcasting beyond the few explicit row/scalar ops; shape errors are
//! reported eagerly with both shapes.

mod fd;
mod rng;
mod tape;
mod tensor;

pub use fd::{fd_gradient, max_rel_err, rel_err, DEFAULT_FD_STEP};
pub use rng::RngState;
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

/// Xavier/Glorot uniform initialization: draws from `[-a, a]` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut RngState, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(&[rows, cols], |_| rng.uniform(-a, a))
        .expect("xavier_uniform produces finite values")
}
