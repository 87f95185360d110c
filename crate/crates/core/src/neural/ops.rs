use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;

use crate::rng::Rng;

/// Row-wise log-softmax.
pub fn log_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Backward of row-wise log-softmax given its output.
pub fn log_softmax_backward(log_y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let sums = dy.sum_axis(Axis(1)).insert_axis(Axis(1));
    dy - &(log_y.mapv(f64::exp) * &sums)
}

pub fn softmax(x: &Array2<f64>) -> Array2<f64> {
    log_softmax(x).mapv(f64::exp)
}

/// Backward of row-wise softmax given its output.
pub fn softmax_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let dots = (y * dy).sum_axis(Axis(1)).insert_axis(Axis(1));
    y * &(dy - &dots)
}

pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Standard Gumbel noise, one draw per logit.
pub fn gumbel_noise(shape: (usize, usize), rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    })
}

/// Relaxed one-hot sample `softmax((logits + g) / temperature)`.
pub fn gumbel_softmax(logits: &Array2<f64>, noise: &Array2<f64>, temperature: f64) -> Array2<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    softmax(&((logits + noise) / temperature))
}

pub fn gumbel_softmax_backward(y: &Array2<f64>, dy: &Array2<f64>, temperature: f64) -> Array2<f64> {
    softmax_backward(y, dy) / temperature
}

/// `KL(q || p)` for normalized log-distributions.
pub fn kl_categorical(log_q: ArrayView1<f64>, log_p: ArrayView1<f64>) -> f64 {
    log_q.iter().zip(log_p.iter()).map(|(&a, &b)| a.exp() * (a - b)).sum()
}

/// Row-wise KL and its gradients with respect to `log_q` and `log_p` taken
/// as free variables.
pub fn kl_rows(log_q: &Array2<f64>, log_p: &Array2<f64>) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
    let q = log_q.mapv(f64::exp);
    let diff = log_q - log_p;
    let kl = (&q * &diff).sum_axis(Axis(1));
    let d_log_q = &q * &(diff + 1.0);
    let d_log_p = -q;
    (kl, d_log_q, d_log_p)
}

/// Draw a class index from a normalized log-distribution.
pub fn sample_categorical(log_p: ArrayView1<f64>, rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &lp) in log_p.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return k;
        }
    }
    log_p.len() - 1
}

pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}
