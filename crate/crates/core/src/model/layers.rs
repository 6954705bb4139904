//! Forward/backward kernels for the transformer building blocks.
//!
//! Each forward returns its output plus whatever the matching backward needs.
//! Backward functions return the input gradient together with owned
//! parameter gradients; the caller adds those into the flat gradient buffer.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn linear(x: &ArrayView2<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Returns `(dx, dW, db)` for `y = x W + b`.
pub(crate) fn linear_backward(
    x: &ArrayView2<f64>,
    w: &ArrayView2<f64>,
    dy: &ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    (dy.dot(&w.t()), x.t().dot(dy), dy.sum_axis(Axis(0)))
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(x: &ArrayView2<f64>, g: &ArrayView1<f64>, b: &ArrayView1<f64>) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let mut y = &xhat * g;
    y += b;
    (y, NormCache { xhat, rstd })
}

/// Returns `(dx, dg, db)`.
pub(crate) fn layer_norm_backward(
    cache: &NormCache,
    g: &ArrayView1<f64>,
    dy: &ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dg = (dy * &cache.xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xh), &r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
        let mean_d = row.sum() / d;
        let mean_dx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xh, |v, &h| *v = r * (*v - mean_d - h * mean_dx));
    }
    (dx, dg, db)
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-head scaled dot-product attention state.
#[derive(Debug, Clone)]
pub(crate) struct AttnCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// One `Tq x Tk` probability matrix per head.
    pub probs: Vec<Array2<f64>>,
    /// Concatenated head outputs before the output projection.
    pub mixed: Array2<f64>,
}

/// Core of multi-head attention given projected `q`, `k`, `v`.
pub(crate) fn attend(q: Array2<f64>, k: Array2<f64>, v: Array2<f64>, n_heads: usize, causal: bool) -> AttnCache {
    let (tq, d) = q.dim();
    let tk = k.nrows();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut mixed = Array2::zeros((tq, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut a = qh.dot(&kh.t());
        for (i, mut row) in a.rows_mut().into_iter().enumerate() {
            row *= scale;
            if causal {
                row.slice_mut(s![(i + 1).min(tk)..]).fill(f64::NEG_INFINITY);
            }
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        mixed.slice_mut(cols).assign(&a.dot(&vh));
        probs.push(a);
    }
    AttnCache { q, k, v, probs, mixed }
}

/// Gradients of `attend` with respect to `q`, `k`, `v`.
pub(crate) fn attend_backward(cache: &AttnCache, dmixed: &ArrayView2<f64>, n_heads: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = cache.q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.dim());
    let mut dk = Array2::zeros(cache.k.dim());
    let mut dv = Array2::zeros(cache.v.dim());
    for (h, a) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout = dmixed.slice(cols);
        let mut da = dout.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&dout));
        for (mut drow, arow) in da.rows_mut().into_iter().zip(a.rows()) {
            let dot: f64 = drow.iter().zip(arow.iter()).map(|(x, y)| x * y).sum();
            drow.zip_mut_with(&arow, |g, &p| *g = p * (*g - dot) * scale);
        }
        dq.slice_mut(cols).assign(&da.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&da.t().dot(&cache.q.slice(cols)));
    }
    (dq, dk, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.3, 2.0] {
            assert!((gelu_grad(x) - fd(gelu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((sigmoid(2.0) - 0.880_797_077_977_882_4).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let x = array![[0.3, -1.2, 2.0, 0.5], [1.0, 1.5, -0.5, 0.0]];
        let g = array![1.1, 0.9, -0.3, 2.0];
        let b = array![0.1, 0.0, -0.2, 0.3];
        let w = array![[0.2, -0.7, 1.3, 0.4], [0.5, 0.1, -0.9, 1.7]];
        let loss = |x: &Array2<f64>| (&layer_norm(&x.view(), &g.view(), &b.view()).0 * &w).sum();
        let (_, cache) = layer_norm(&x.view(), &g.view(), &b.view());
        let (dx, _, _) = layer_norm_backward(&cache, &g.view(), &w.view());
        for i in 0..2 {
            for j in 0..4 {
                let num = fd(
                    |v| {
                        let mut xp = x.clone();
                        xp[[i, j]] = v;
                        loss(&xp)
                    },
                    x[[i, j]],
                );
                assert!((num - dx[[i, j]]).abs() < 1e-7, "{num} vs {}", dx[[i, j]]);
            }
        }
    }

    #[test]
    fn causal_attention_ignores_future() {
        let q = array![[0.1, 0.2], [0.3, -0.1], [0.5, 0.5]];
        let k = q.clone();
        let mut v = array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        let a = attend(q.clone(), k.clone(), v.clone(), 1, true);
        v[[2, 0]] = 50.0;
        let b = attend(q, k, v, 1, true);
        assert_eq!(a.mixed.row(0), b.mixed.row(0));
        assert_eq!(a.mixed.row(1), b.mixed.row(1));
        assert_ne!(a.mixed.row(2), b.mixed.row(2));
        assert_eq!(a.probs[0][[0, 0]], 1.0);
    }
}
