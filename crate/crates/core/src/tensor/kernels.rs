//! Value-level kernels used by the tape's forward and backward rules.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// `c (+)= a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if acc { T::one() } else { T::zero() };
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        beta,
        c,
        n as isize,
        1,
    );
}

/// `c (+)= a[m×k] · bᵀ` where `b` is stored row-major as `[n×k]`.
pub(crate) fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    let beta = if acc { T::one() } else { T::zero() };
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        beta,
        c,
        n as isize,
        1,
    );
}

/// `c (+)= aᵀ · b` where `a` is stored row-major as `[k×m]`.
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T], acc: bool) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    let beta = if acc { T::one() } else { T::zero() };
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        beta,
        c,
        n as isize,
        1,
    );
}

/// Right-aligned (numpy-style) broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when viewed inside the broadcast shape `out`; broadcast
/// dimensions get stride zero.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Flat source index of every output position.
pub(crate) fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, out);
    let total: usize = out.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; out.len()];
    let mut flat = 0usize;
    for _ in 0..total {
        idx.push(flat);
        for d in (0..out.len()).rev() {
            counter[d] += 1;
            flat += strides[d];
            if counter[d] < out[d] {
                break;
            }
            flat -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

/// Sums a broadcast-shaped gradient back down to `shape`.
pub(crate) fn reduce_to_shape<T: Scalar>(grad: &[T], out: &[usize], shape: &[usize]) -> Vec<T> {
    if out == shape {
        return grad.to_vec();
    }
    let n: usize = shape.iter().product();
    let mut acc = vec![T::zero(); n];
    for (g, &i) in grad.iter().zip(broadcast_index(shape, out).iter()) {
        acc[i] += *g;
    }
    acc
}

/// (outer, axis length, inner) decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Lower Cholesky factor of a symmetric positive-definite matrix. Reads only
/// the lower triangle.
pub(crate) fn cholesky<T: Scalar>(a: &[T], n: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > T::zero()) {
            return Err(Error::Decomposition {
                index: j,
                value: d.as_f64(),
            });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `l · x = b` for lower-triangular `l[n×n]`, `b[n×m]`.
pub(crate) fn solve_lower<T: Scalar>(l: &[T], n: usize, b: &[T], m: usize) -> Result<Vec<T>> {
    let mut x = b.to_vec();
    for i in 0..n {
        let d = l[i * n + i];
        if d == T::zero() {
            return Err(Error::Singular { index: i });
        }
        for k in 0..i {
            let lik = l[i * n + k];
            if lik == T::zero() {
                continue;
            }
            for c in 0..m {
                let v = x[k * m + c];
                x[i * m + c] -= lik * v;
            }
        }
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    Ok(x)
}

/// Solves `lᵀ · x = b` for lower-triangular `l[n×n]`, `b[n×m]`.
pub(crate) fn solve_lower_transposed<T: Scalar>(l: &[T], n: usize, b: &[T], m: usize) -> Result<Vec<T>> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let d = l[i * n + i];
        if d == T::zero() {
            return Err(Error::Singular { index: i });
        }
        for k in i + 1..n {
            // (lᵀ)[i][k] = l[k][i]
            let lki = l[k * n + i];
            if lki == T::zero() {
                continue;
            }
            for c in 0..m {
                let v = x[k * m + c];
                x[i * m + c] -= lki * v;
            }
        }
        for c in 0..m {
            x[i * m + c] /= d;
        }
    }
    Ok(x)
}

/// Gathers `[W_out, C_in·kw]` patches for one sample of a `[C_in, W]` signal.
pub(crate) fn im2col<T: Scalar>(x: &[T], c_in: usize, w: usize, kw: usize, out: &mut [T]) {
    let w_out = w - kw + 1;
    for p in 0..w_out {
        let row = &mut out[p * c_in * kw..(p + 1) * c_in * kw];
        for c in 0..c_in {
            row[c * kw..(c + 1) * kw].copy_from_slice(&x[c * w + p..c * w + p + kw]);
        }
    }
}

/// Scatter-adds patch gradients back onto a `[C_in, W]` signal gradient.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c_in: usize, w: usize, kw: usize, dx: &mut [T]) {
    let w_out = w - kw + 1;
    for p in 0..w_out {
        let row = &cols[p * c_in * kw..(p + 1) * c_in * kw];
        for c in 0..c_in {
            for k in 0..kw {
                dx[c * w + p + k] += row[c * kw + k];
            }
        }
    }
}

pub(crate) fn check_square(op: &'static str, shape: &[usize]) -> Result<usize> {
    match shape {
        &[a, b] if a == b => Ok(a),
        s => shape_err(op, format!("expected a square matrix, got {s:?}")),
    }
}
