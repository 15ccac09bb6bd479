//! Numerical kernel: dense and recurrent layers, a reverse-mode tape, Adam and a
//! finite-difference gradient checker. Everything is `f64`.

mod adam;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use adam::{Adam, AdamState};
pub use gradcheck::{grad_check, grad_check_at, DEFAULT_PERTURBATION, GRADIENT_FLOOR};
pub use kernels::{
    activation, dense_forward, dense_forward_rows, dense_forward_sparse, gru_cell, sigmoid,
    Activation, GruParams,
};
pub use tape::{Tape, Var};
pub use tensor::{ParamId, ParamStore, ParamTensor};
