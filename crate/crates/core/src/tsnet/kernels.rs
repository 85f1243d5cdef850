//! Dense kernels behind the temporal convolutions.
//!
//! A "same"-padded 1-D convolution over a time-major buffer is a matrix
//! product whose left operand rows are overlapping windows of the padded
//! input: row `r` is `input[r·stride .. r·stride + inner]`. Weights are laid
//! out `[inner][cols]` so the innermost loops run over contiguous memory.

use crate::par;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[r, :] = bias + Σ_i input[r·stride + i] · w[i, :]` for `r < rows`.
pub(crate) fn window_matmul(
    input: &[f64],
    stride: usize,
    rows: usize,
    inner: usize,
    w: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let cols = bias.len();
    debug_assert_eq!(w.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    debug_assert!(input.len() >= (rows - 1) * stride + inner);
    par::for_each_row(out, cols, |r, row| {
        row.copy_from_slice(bias);
        let window = &input[r * stride..r * stride + inner];
        for (i, &a) in window.iter().enumerate() {
            if a != 0.0 {
                axpy(a, &w[i * cols..(i + 1) * cols], row);
            }
        }
    });
}

/// `dw[i, :] += Σ_r input[r·stride + i] · dout[r, :]`.
pub(crate) fn window_matmul_grad_w(
    input: &[f64],
    stride: usize,
    rows: usize,
    inner: usize,
    dout: &[f64],
    dw: &mut [f64],
) {
    let cols = dout.len() / rows;
    debug_assert_eq!(dw.len(), inner * cols);
    par::for_each_row(dw, cols, |i, row| {
        for r in 0..rows {
            let a = input[r * stride + i];
            if a != 0.0 {
                axpy(a, &dout[r * cols..(r + 1) * cols], row);
            }
        }
    });
}

/// Gradient with respect to the padded input buffer:
/// `d_input[q·stride + c] = Σ_{j} Σ_h w[j·stride + c, h] · dout[q − j, h]`
/// over the window offsets `j` that place padded row `q` inside row `q − j`.
/// Requires `inner` to be a multiple of `stride`.
pub(crate) fn window_matmul_grad_input(
    dout: &[f64],
    w: &[f64],
    stride: usize,
    rows: usize,
    inner: usize,
    d_input: &mut [f64],
) {
    let cols = dout.len() / rows;
    let taps = inner / stride;
    debug_assert_eq!(taps * stride, inner);
    debug_assert_eq!(d_input.len(), (rows + taps - 1) * stride);
    par::for_each_row(d_input, stride, |q, row| {
        row.fill(0.0);
        for j in 0..taps {
            let Some(r) = q.checked_sub(j) else { break };
            if r >= rows {
                continue;
            }
            let g = &dout[r * cols..(r + 1) * cols];
            for (c, slot) in row.iter_mut().enumerate() {
                let i = j * stride + c;
                *slot += dot(&w[i * cols..(i + 1) * cols], g);
            }
        }
    });
}

/// Per-column sums of a `rows × cols` buffer, accumulated into `out`.
pub(crate) fn add_column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}
