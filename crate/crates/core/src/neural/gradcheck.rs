//! Central finite-difference checks of the analytic gradients.

use ndarray::Array2;
use rand::Rng as _;

use super::cvae::{Batch, CvaeModel, LossWeights};
use super::layers::{Mlp, Mode};
use super::ops::{gumbel_softmax, gumbel_softmax_backward, kl_rows, log_softmax, log_softmax_backward};
use crate::rng::Rng;

pub const FD_STEP: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the step crossed a ReLU kink.
    pub kinks: usize,
}

impl GradReport {
    fn record(&mut self, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        self.max_rel_err = self.max_rel_err.max(rel);
        self.checked += 1;
    }

    pub fn merge(&mut self, other: GradReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
        self.kinks += other.kinks;
    }
}

fn pick(len: usize, budget: usize, rng: &mut Rng) -> Vec<usize> {
    if len <= budget {
        (0..len).collect()
    } else {
        (0..budget).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Check an MLP's parameter and input gradients under `loss = sum(R * y)`.
pub fn check_mlp(net: &Mlp, x: &Array2<f64>, mode: Mode, budget: usize, rng: &mut Rng) -> GradReport {
    let mut net = net.clone();
    let (y, cache) = net.forward(x, mode);
    let proj = Array2::from_shape_fn(y.raw_dim(), |_| rng.gen_range(-1.0..1.0));
    for p in net.params_mut() {
        p.zero_grad();
    }
    let dx = net.backward(&cache, &proj).as_standard_layout().into_owned();
    let loss = |n: &Mlp, x: &Array2<f64>| {
        let (y, c) = n.forward(x, mode);
        ((&y * &proj).sum(), Mlp::relu_pattern(&c))
    };
    let mut report = GradReport::default();
    let n_params = net.params().len();
    for pi in 0..n_params {
        let len = net.params()[pi].len();
        for idx in pick(len, budget, rng) {
            let analytic = net.params()[pi].grad.as_slice().unwrap()[idx];
            let orig = net.params()[pi].value.as_slice().unwrap()[idx];
            net.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig + FD_STEP;
            let (lp, sp) = loss(&net, x);
            net.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
            let (lm, sm) = loss(&net, x);
            net.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig;
            if sp != sm {
                report.kinks += 1;
                continue;
            }
            report.record(analytic, (lp - lm) / (2.0 * FD_STEP));
        }
    }
    let mut xp = x.clone();
    for idx in pick(x.len(), budget, rng) {
        let orig = x.as_slice().unwrap()[idx];
        xp.as_slice_mut().unwrap()[idx] = orig + FD_STEP;
        let (lp, sp) = loss(&net, &xp);
        xp.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
        let (lm, sm) = loss(&net, &xp);
        xp.as_slice_mut().unwrap()[idx] = orig;
        if sp != sm {
            report.kinks += 1;
            continue;
        }
        report.record(dx.as_slice().unwrap()[idx], (lp - lm) / (2.0 * FD_STEP));
    }
    report
}

/// `KL(softmax(a) || softmax(b))` with respect to both logit rows.
pub fn check_kl(a: &Array2<f64>, b: &Array2<f64>) -> GradReport {
    let f = |a: &Array2<f64>, b: &Array2<f64>| kl_rows(&log_softmax(a), &log_softmax(b)).0.sum();
    let (la, lb) = (log_softmax(a), log_softmax(b));
    let (_, dq, dp) = kl_rows(&la, &lb);
    let ga = log_softmax_backward(&la, &dq);
    let gb = log_softmax_backward(&lb, &dp);
    let mut report = GradReport::default();
    for (which, grad) in [(0, &ga), (1, &gb)] {
        for idx in 0..a.len() {
            let (mut ap, mut am, mut bp, mut bm) = (a.clone(), a.clone(), b.clone(), b.clone());
            if which == 0 {
                ap.as_slice_mut().unwrap()[idx] += FD_STEP;
                am.as_slice_mut().unwrap()[idx] -= FD_STEP;
            } else {
                bp.as_slice_mut().unwrap()[idx] += FD_STEP;
                bm.as_slice_mut().unwrap()[idx] -= FD_STEP;
            }
            let numeric = (f(&ap, &bp) - f(&am, &bm)) / (2.0 * FD_STEP);
            report.record(grad.as_slice().unwrap()[idx], numeric);
        }
    }
    report
}

/// Gumbel-softmax with fixed noise under `loss = sum(R * y)`.
pub fn check_gumbel(logits: &Array2<f64>, noise: &Array2<f64>, temperature: f64, rng: &mut Rng) -> GradReport {
    let proj = Array2::from_shape_fn(logits.raw_dim(), |_| rng.gen_range(-1.0..1.0));
    let y = gumbel_softmax(logits, noise, temperature);
    let g = gumbel_softmax_backward(&y, &proj, temperature);
    let mut report = GradReport::default();
    for idx in 0..logits.len() {
        let (mut p, mut m) = (logits.clone(), logits.clone());
        p.as_slice_mut().unwrap()[idx] += FD_STEP;
        m.as_slice_mut().unwrap()[idx] -= FD_STEP;
        let lp = (&gumbel_softmax(&p, noise, temperature) * &proj).sum();
        let lm = (&gumbel_softmax(&m, noise, temperature) * &proj).sum();
        report.record(g.as_slice().unwrap()[idx], (lp - lm) / (2.0 * FD_STEP));
    }
    report
}

/// The full multi-task loss, through every network, with fixed noise.
pub fn check_model(
    model: &CvaeModel,
    batch: &Batch,
    noise: &Array2<f64>,
    lw: &LossWeights,
    budget: usize,
    rng: &mut Rng,
) -> GradReport {
    let mut model = model.clone();
    model.zero_grad();
    let (_, tape) = model.forward_loss(batch, noise, lw, Mode::Train);
    model.backward(batch, &tape, lw);
    let mut report = GradReport::default();
    let n_params = model.params_mut().len();
    for pi in 0..n_params {
        let len = model.params_mut()[pi].len();
        for idx in pick(len, budget, rng) {
            let analytic = model.params_mut()[pi].grad.as_slice().unwrap()[idx];
            let orig = model.params_mut()[pi].value.as_slice().unwrap()[idx];
            model.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig + FD_STEP;
            let (lp, tp) = model.forward_loss(batch, noise, lw, Mode::Train);
            model.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig - FD_STEP;
            let (lm, tm) = model.forward_loss(batch, noise, lw, Mode::Train);
            model.params_mut()[pi].value.as_slice_mut().unwrap()[idx] = orig;
            if tp.relu_pattern() != tm.relu_pattern() {
                report.kinks += 1;
                continue;
            }
            report.record(analytic, (lp.total - lm.total) / (2.0 * FD_STEP));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ops::gumbel_noise;
    use crate::rng::seeded;

    #[test]
    fn plain_and_normalized_mlps() {
        let mut rng = seeded(1);
        for bn in [false, true] {
            let net = Mlp::new(6, 8, 4, bn, &mut rng);
            let x = Array2::from_shape_fn((5, 6), |_| rng.gen_range(-1.0..1.0));
            let r = check_mlp(&net, &x, Mode::Train, 50, &mut rng);
            assert!(r.max_rel_err < 1e-4, "{r:?}");
            assert!(r.checked > 50);
        }
    }

    #[test]
    fn kl_and_gumbel() {
        let mut rng = seeded(2);
        let a = Array2::from_shape_fn((2, 8), |_| rng.gen_range(-2.0..2.0));
        let b = Array2::from_shape_fn((2, 8), |_| rng.gen_range(-2.0..2.0));
        assert!(check_kl(&a, &b).max_rel_err < 1e-4);
        let noise = gumbel_noise((2, 8), &mut rng);
        assert!(check_gumbel(&a, &noise, 0.7, &mut rng).max_rel_err < 1e-4);
    }
}
