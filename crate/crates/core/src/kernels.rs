//! Row-at-a-time numeric kernels for the inference path.
//!
//! Every output element is reduced in a fixed order that depends only on the
//! row being processed, so folding a batch through a model gives exactly the
//! same bits as folding each row on its own. Training-time products go
//! through ndarray's GEMM instead.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1};

/// Dot product with four interleaved accumulators combined as `(a0+a1)+(a2+a3)`.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn dot_view(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => dot(x, y),
        _ => {
            let x: Vec<f64> = a.iter().copied().collect();
            let y: Vec<f64> = b.iter().copied().collect();
            dot(&x, &y)
        }
    }
}

/// `out = weight · x + bias` where `weight` is `out × in` (rows contiguous).
pub fn affine_row(
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    x: ArrayView1<f64>,
    mut out: ArrayViewMut1<f64>,
) {
    for ((o, row), b) in out.iter_mut().zip(weight.rows()).zip(bias.iter()) {
        *o = dot_view(row, x) + b;
    }
}

/// `out = m · x` for a row-major matrix `m`.
pub fn matvec(m: ArrayView2<f64>, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
    for (o, row) in out.iter_mut().zip(m.rows()) {
        *o = dot_view(row, x);
    }
}

/// `out = mᵀ · x` accumulated row by row of `m` (sequential over rows).
pub fn matvec_t(m: ArrayView2<f64>, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
    out.fill(0.0);
    for (row, &xi) in m.rows().into_iter().zip(x.iter()) {
        out.scaled_add(xi, &row);
    }
}

/// Logits `Z w` for every row of `z`, one row at a time.
pub fn linear_logits(z: ArrayView2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((z.nrows(), w.ncols()));
    for (zr, o) in z.rows().into_iter().zip(out.rows_mut()) {
        matvec_t(w, zr, o);
    }
    out
}

pub fn sq_norm(x: ArrayView1<f64>) -> f64 {
    dot_view(x, x)
}

pub fn norm2(x: ArrayView1<f64>) -> f64 {
    sq_norm(x).sqrt()
}
