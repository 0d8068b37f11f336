//! Raw dense kernels shared by the autodiff graph and the no-tape
//! inference path, so both produce bit-identical values.

use rayon::prelude::*;
use std::sync::OnceLock;

/// Work threshold (multiply-adds) above which matmul rows run in parallel.
const PAR_MATMUL_WORK: usize = 1 << 18;

static THREADS: OnceLock<usize> = OnceLock::new();

/// Thread cap from `WORLDSTRING_THREADS` (defaults to the rayon default).
/// The global rayon pool is sized once, on first use.
pub fn thread_cap() -> usize {
    *THREADS.get_or_init(|| {
        let n = std::env::var("WORLDSTRING_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1);
        if let Some(n) = n {
            // Ignore failure: the pool may already be built by another caller.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            n
        } else {
            rayon::current_num_threads()
        }
    })
}

/// C[m,n] += A[m,k] * B[k,n]; `out` must be zeroed by the caller.
/// Row-parallel when large. Every output element accumulates over k in
/// ascending order regardless of blocking or thread count, so results
/// are bit-identical across batch splits and parallelism settings.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m * k * n >= PAR_MATMUL_WORK && thread_cap() > 1 {
        out.par_chunks_mut(RT * n).enumerate().for_each(|(q, rows)| {
            matmul_rows(&a[q * RT * k..], b, k, n, rows);
        });
    } else {
        for (q, rows) in out.chunks_mut(RT * n).enumerate() {
            matmul_rows(&a[q * RT * k..], b, k, n, rows);
        }
    }
}

/// Register-tile width (columns held in accumulators per pass).
const JT: usize = 16;
/// Register-tile height (rows per pass).
const RT: usize = 8;

/// Up to `RT` output rows at once over an RT×16 register tile; each
/// output element still accumulates over p in ascending order.
#[inline]
fn matmul_rows(a: &[f64], b: &[f64], k: usize, n: usize, out: &mut [f64]) {
    let rows = out.len() / n;
    if rows == RT {
        let mut j0 = 0;
        while j0 + JT <= n {
            let mut acc = [[0.0f64; JT]; RT];
            for p in 0..k {
                let bp = &b[p * n + j0..p * n + j0 + JT];
                for (r, accr) in acc.iter_mut().enumerate() {
                    let ar = a[r * k + p];
                    for jj in 0..JT {
                        accr[jj] += ar * bp[jj];
                    }
                }
            }
            for (r, accr) in acc.iter().enumerate() {
                let orow = &mut out[r * n + j0..r * n + j0 + JT];
                for jj in 0..JT {
                    orow[jj] += accr[jj];
                }
            }
            j0 += JT;
        }
        if j0 < n {
            for r in 0..RT {
                for p in 0..k {
                    let ar = a[r * k + p];
                    let bp = &b[p * n..(p + 1) * n];
                    let orow = &mut out[r * n..(r + 1) * n];
                    for j in j0..n {
                        orow[j] += ar * bp[j];
                    }
                }
            }
        }
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            for p in 0..k {
                let av = a[i * k + p];
                let bp = &b[p * n..(p + 1) * n];
                for j in 0..n {
                    row[j] += av * bp[j];
                }
            }
        }
    }
}

pub fn transpose(a: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}

/// Row-wise stabilized softmax over `cols`-wide rows.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let orow = &mut out[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Smooth GELU (tanh form).
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise layer norm: `y = gain ⊙ (x − μ)/sqrt(σ² + eps) + bias`.
pub fn layer_norm_rows(
    x: &[f64],
    rows: usize,
    cols: usize,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    out: &mut [f64],
) {
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let orow = &mut out[r * cols..(r + 1) * cols];
        let (mu, inv_s) = row_moments(row, eps);
        for j in 0..cols {
            orow[j] = gain[j] * (row[j] - mu) * inv_s + bias[j];
        }
    }
}

/// Mean and reciprocal standard deviation (with `eps` inside the sqrt).
pub fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, 1.0 / (var + eps).sqrt())
}
