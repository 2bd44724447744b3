//! Shared dense f64 kernels.
//!
//! Every numeric routine used by the tape ops also backs the no-tape policy
//! forward, so values computed on either path agree bit-for-bit. Keep the
//! accumulation order in each kernel fixed: the incremental sampler in
//! `policy` mirrors it exactly.

/// `a` is `[m, k]`, `b` is `[k, n]`, both row-major. Returns `[m, n]`.
///
/// Accumulates over `k` innermost, in index order.
pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = 0.0;
            for (kk, &av) in row.iter().enumerate() {
                acc += av * b[kk * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// `x` is `[m, n]`, `b` is `[n]`; adds `b` to every row.
pub fn add_bias(x: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(b.len(), n);
    debug_assert_eq!(x.len() % n, 0);
    let mut out = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        out.push(v + b[i % n]);
    }
    out
}

pub fn exp(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.exp()).collect()
}

pub fn ln(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.ln()).collect()
}

pub fn sigmoid(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn clip(a: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    a.iter().map(|x| x.clamp(lo, hi)).collect()
}

pub fn min(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| if x <= y { x } else { y })
        .collect()
}

/// Causal running mean over rows: `out[t] = (x[0] + ... + x[t]) / (t + 1)`.
///
/// `x` is `[t_len, d]`. The running sum accumulates in row order, then each
/// row is divided once; the incremental sampler performs the same two steps.
pub fn prefix_mean(x: &[f64], t_len: usize, d: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), t_len * d);
    let mut out = vec![0.0; t_len * d];
    let mut run = vec![0.0; d];
    for t in 0..t_len {
        for j in 0..d {
            run[j] += x[t * d + j];
        }
        let denom = (t + 1) as f64;
        for j in 0..d {
            out[t * d + j] = run[j] / denom;
        }
    }
    out
}

/// Shifts rows down by one: `out[t] = x[t - 1]`, `out[0] = 0`.
pub fn shift_down(x: &[f64], t_len: usize, d: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), t_len * d);
    let mut out = vec![0.0; t_len * d];
    out[d..].copy_from_slice(&x[..(t_len - 1) * d]);
    out
}

/// Row-wise softmax over the last axis of an `[m, n]` matrix.
pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(x.len() % n, 0);
    let mut out = vec![0.0; x.len()];
    for (row_in, row_out) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let mx = row_max(row_in);
        let mut sum = 0.0;
        for (o, &v) in row_out.iter_mut().zip(row_in) {
            let e = (v - mx).exp();
            *o = e;
            sum += e;
        }
        for o in row_out.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Row-wise log-softmax over the last axis of an `[m, n]` matrix.
pub fn log_softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(x.len() % n, 0);
    let mut out = vec![0.0; x.len()];
    for (row_in, row_out) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        log_softmax_row_into(row_in, row_out);
    }
    out
}

pub fn log_softmax_row_into(row: &[f64], out: &mut [f64]) {
    let mx = row_max(row);
    let mut sum = 0.0;
    for &v in row {
        sum += (v - mx).exp();
    }
    let lse = sum.ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - mx - lse;
    }
}

fn row_max(row: &[f64]) -> f64 {
    let mut mx = f64::NEG_INFINITY;
    for &v in row {
        if v > mx {
            mx = v;
        }
    }
    mx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_2x2() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul(&a, 2, 2, &b, 2), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn prefix_mean_rows() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3 rows of width 2
        let out = prefix_mean(&x, 3, 2);
        assert_eq!(out, vec![1.0, 2.0, 2.0, 3.0, 3.0, 4.0]);
    }

    #[test]
    fn shift_down_rows() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(shift_down(&x, 2, 2), vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = [0.3, -1.2, 4.0, 0.0, 0.0, 0.0];
        let p = softmax_rows(&x, 3);
        for row in p.chunks_exact(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // symmetric row is uniform
        assert!((p[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_matches_softmax_log() {
        let x = [0.5, 2.0, -1.0];
        let lp = log_softmax_rows(&x, 3);
        let p = softmax_rows(&x, 3);
        for (l, q) in lp.iter().zip(&p) {
            assert!((l.exp() - q).abs() < 1e-14);
        }
    }
}
