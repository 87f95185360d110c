use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.dim() != self.value.dim() {
            self.grad = Array2::zeros(self.value.raw_dim());
        } else {
            self.grad.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer, `y = x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Uniform fan-in initialization with a zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / inputs.max(1) as f64).sqrt();
        let w = Array2::from_shape_fn((inputs, outputs), |_| rng.gen_range(-bound..bound));
        Self { weight: Param::new(w), bias: Param::new(Array2::zeros((1, outputs))) }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Param::new(Array2::zeros((inputs, outputs))), bias: Param::new(Array2::zeros((1, outputs))) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.weight.grad += &x.t().dot(dy);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.value.t())
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-feature batch normalization with running statistics for eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Param::new(Array2::ones((1, features))),
            beta: Param::new(Array2::zeros((1, features))),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
        }
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, Option<BatchNormCache>) {
        match mode {
            Mode::Eval => {
                let inv_std = self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let x_hat = (x - &self.running_mean) * &inv_std;
                (x_hat * &self.gamma.value + &self.beta.value, None)
            }
            Mode::Train => {
                let mean = x.mean_axis(Axis(0)).expect("batch is nonempty");
                let centered = x - &mean;
                let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let x_hat = centered * &inv_std;
                let y = &x_hat * &self.gamma.value + &self.beta.value;
                (y, Some(BatchNormCache { x_hat, inv_std, mean, var }))
            }
        }
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let n = dy.nrows() as f64;
        self.gamma.grad += &(dy * &cache.x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx_hat = dy * &self.gamma.value;
        let sum_dx_hat = dx_hat.sum_axis(Axis(0));
        let sum_dx_hat_xhat = (&dx_hat * &cache.x_hat).sum_axis(Axis(0));
        let mut dx = dx_hat * n - &sum_dx_hat - &cache.x_hat * &sum_dx_hat_xhat;
        dx *= &(&cache.inv_std / n);
        dx
    }

    pub fn absorb(&mut self, cache: &BatchNormCache) {
        self.running_mean = &self.running_mean * BN_MOMENTUM + &cache.mean * (1.0 - BN_MOMENTUM);
        self.running_var = &self.running_var * BN_MOMENTUM + &cache.var * (1.0 - BN_MOMENTUM);
    }
}

/// Two fully connected layers with a ReLU in between, optionally batch
/// normalized before the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub norm: Option<BatchNorm>,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Array2<f64>,
    norm: Option<BatchNormCache>,
    pre_act: Array2<f64>,
    hidden: Array2<f64>,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, batch_norm: bool, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::new(inputs, hidden, rng),
            norm: batch_norm.then(|| BatchNorm::new(hidden)),
            fc2: Linear::new(hidden, outputs, rng),
        }
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize, batch_norm: bool) -> Self {
        Self {
            fc1: Linear::zeros(inputs, hidden),
            norm: batch_norm.then(|| BatchNorm::new(hidden)),
            fc2: Linear::zeros(hidden, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.fc1.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.fc2.outputs()
    }

    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> (Array2<f64>, MlpCache) {
        let h = self.fc1.forward(x);
        let (pre_act, norm) = match &self.norm {
            Some(bn) => bn.forward(&h, mode),
            None => (h, None),
        };
        let hidden = pre_act.mapv(|v| v.max(0.0));
        let y = self.fc2.forward(&hidden);
        (y, MlpCache { input: x.clone(), norm, pre_act, hidden })
    }

    pub fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x, Mode::Eval).0
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: &Array2<f64>) -> Array2<f64> {
        let mut dh = self.fc2.backward(&cache.hidden, dy);
        dh.zip_mut_with(&cache.pre_act, |g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        if let (Some(bn), Some(c)) = (self.norm.as_mut(), cache.norm.as_ref()) {
            dh = bn.backward(c, &dh);
        }
        self.fc1.backward(&cache.input, &dh)
    }

    /// Fold the batch statistics of a training pass into the running ones.
    pub fn absorb(&mut self, cache: &MlpCache) {
        if let (Some(bn), Some(c)) = (self.norm.as_mut(), cache.norm.as_ref()) {
            bn.absorb(c);
        }
    }

    /// Sign pattern of the ReLU inputs, used to detect kinks.
    pub fn relu_pattern(cache: &MlpCache) -> Vec<bool> {
        cache.pre_act.iter().map(|&v| v > 0.0).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.fc1.weight, &self.fc1.bias];
        if let Some(bn) = &self.norm {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out.push(&self.fc2.weight);
        out.push(&self.fc2.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.fc1.weight, &mut self.fc1.bias];
        if let Some(bn) = &mut self.norm {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.fc2.weight);
        out.push(&mut self.fc2.bias);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    #[test]
    fn zero_net_gives_zero_output() {
        let net = Mlp::zeros(5, 32, 3, false);
        let x = Array2::from_elem((4, 5), 0.7);
        assert!(net.infer(&x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_batch_norm_with_unit_stats_is_affine() {
        let mut bn = BatchNorm::new(2);
        bn.gamma.value = array![[2.0, 3.0]];
        bn.beta.value = array![[0.5, -1.0]];
        let x = array![[1.0, 2.0], [-1.0, 0.0]];
        let (y, _) = bn.forward(&x, Mode::Eval);
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        let want = array![[2.0 * s + 0.5, 6.0 * s - 1.0], [-2.0 * s + 0.5, -1.0]];
        for (a, b) in y.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn train_batch_norm_normalizes_columns() {
        let bn = BatchNorm::new(3);
        let mut rng = seeded(4);
        let x = Array2::from_shape_fn((16, 3), |_| rng.gen_range(-5.0..5.0));
        let (y, _) = bn.forward(&x, Mode::Train);
        for col in y.columns() {
            assert!(col.mean().unwrap().abs() < 1e-12);
            let var = col.mapv(|v| v * v).mean().unwrap();
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn absorb_moves_running_stats() {
        let mut net = Mlp::new(2, 4, 1, true, &mut seeded(1));
        let x = array![[1.0, 2.0], [3.0, 5.0], [0.0, 1.0]];
        let (_, cache) = net.forward(&x, Mode::Train);
        net.absorb(&cache);
        let bn = net.norm.as_ref().unwrap();
        assert!(bn.running_mean.iter().any(|&m| m != 0.0));
    }
}
