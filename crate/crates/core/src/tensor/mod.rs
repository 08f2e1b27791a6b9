//! Dense arrays and the reverse-mode autodiff tape built on them.

mod array;
pub(crate) mod kernels;
mod tape;

pub use array::Tensor;
pub use tape::{concat, ElementwiseOp, ReduceOp, Tape, Var};

use crate::error::Result;
use crate::scalar::Scalar;

/// Lower Cholesky factor of a plain (unrecorded) matrix.
pub fn cholesky<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let n = kernels::check_square("cholesky", a.shape())?;
    let l = kernels::cholesky(a.data(), n)?;
    Tensor::new(vec![n, n], l)
}

/// Solves `l · x = b` for lower-triangular `l` on plain matrices.
pub fn solve_lower<T: Scalar>(l: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let x = tape.constant(l.clone()).solve_lower(tape.constant(b.clone()))?;
    Ok((*x.value()).clone())
}
