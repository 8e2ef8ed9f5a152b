//! Plain sequential numeric kernels shared by the differentiable ops.
//!
//! Every reduction runs in a fixed order, so results are bit-identical
//! across runs.

use crate::tensor::Real;

/// Matrix layout of a gemm operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layout {
    /// Stored as `[rows, cols]` of the logical operand.
    Normal,
    /// Stored transposed: `[cols, rows]`.
    Transposed,
}

/// `c[m, n] += op(a)[m, k] * op(b)[k, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Real>(
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    match (la, lb) {
        (Layout::Normal, Layout::Normal) => {
            for i in 0..m {
                let c_row = &mut c[i * n..(i + 1) * n];
                for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                    if av == T::zero() {
                        continue;
                    }
                    axpy(av, &b[p * n..(p + 1) * n], c_row);
                }
            }
        }
        (Layout::Transposed, Layout::Normal) => {
            for p in 0..k {
                let b_row = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let av = a[p * m + i];
                    if av == T::zero() {
                        continue;
                    }
                    axpy(av, b_row, &mut c[i * n..(i + 1) * n]);
                }
            }
        }
        (Layout::Normal, Layout::Transposed) => {
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
                }
            }
        }
        (Layout::Transposed, Layout::Transposed) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = T::zero();
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] += s;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut s = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        s += a * b;
    }
    s
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
