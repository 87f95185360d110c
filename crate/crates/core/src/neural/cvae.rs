use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{Mlp, MlpCache, Mode, Param};
use super::ops::{
    argmax, gumbel_softmax, gumbel_softmax_backward, kl_rows, log_softmax, log_softmax_backward, sample_categorical,
};
use crate::features::{Indicator, MotionEncoding, RawFeature, LENGTH_SCALE, NEIGHBOR_SCALARS, SELF_SCALARS};
use crate::geometry::Point2;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub fov_len: usize,
    pub hidden: usize,
    pub env_embedding: usize,
    pub message: usize,
    pub attention: usize,
    pub latent: usize,
    pub use_comm: bool,
    pub use_ind: bool,
}

impl ModelConfig {
    pub fn new(fov_len: usize) -> Self {
        Self {
            fov_len,
            hidden: 32,
            env_embedding: 32,
            message: 32,
            attention: 10,
            latent: 64,
            use_comm: true,
            use_ind: true,
        }
    }

    pub fn goal_dim(&self) -> usize {
        SELF_SCALARS + self.env_embedding
    }

    pub fn x_dim(&self) -> usize {
        self.goal_dim() + self.message + 3
    }
}

/// Loss weights for the multi-task objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kl: f64,
    pub nll: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { kl: 0.1, nll: 0.001, temperature: 1.0 }
    }
}

/// One training record: raw observation, target `xi` of the next motion
/// (magnitude in scaled units), sample weight, and the true indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: RawFeature,
    pub y: [f64; 3],
    pub weight: f64,
    pub ind: Indicator,
}

/// Dense tensors for a minibatch; neighbor rows of sample `b` occupy
/// `offsets[b]..offsets[b + 1]`, the first being the sample's own entry.
#[derive(Debug, Clone)]
pub struct Batch {
    pub self_scalars: Array2<f64>,
    pub self_fov: Array2<f64>,
    pub nb_scalars: Array2<f64>,
    pub nb_fov: Array2<f64>,
    pub offsets: Vec<usize>,
    pub y: Array2<f64>,
    pub weight: Array1<f64>,
    pub ind: Vec<usize>,
}

impl Batch {
    pub fn from_features(xs: &[&RawFeature]) -> Self {
        let b = xs.len();
        let fov = xs[0].self_fov().len();
        let m: usize = xs.iter().map(|x| x.neighbors.len()).sum();
        let mut self_scalars = Array2::zeros((b, SELF_SCALARS));
        let mut self_fov = Array2::zeros((b, fov));
        let mut nb_scalars = Array2::zeros((m, NEIGHBOR_SCALARS));
        let mut nb_fov = Array2::zeros((m, fov));
        let mut offsets = Vec::with_capacity(b + 1);
        let mut row = 0;
        for (k, x) in xs.iter().enumerate() {
            offsets.push(row);
            for (c, &v) in x.self_scalars.iter().enumerate() {
                self_scalars[[k, c]] = v as f64;
            }
            for (c, &v) in x.self_fov().iter().enumerate() {
                self_fov[[k, c]] = v as f64;
            }
            for n in &x.neighbors {
                for (c, &v) in n.scalars.iter().enumerate() {
                    nb_scalars[[row, c]] = v as f64;
                }
                for (c, &v) in n.fov.iter().enumerate() {
                    nb_fov[[row, c]] = v as f64;
                }
                row += 1;
            }
        }
        offsets.push(row);
        Self {
            self_scalars,
            self_fov,
            nb_scalars,
            nb_fov,
            offsets,
            y: Array2::zeros((b, 3)),
            weight: Array1::zeros(b),
            ind: vec![Indicator::Straight.index(); b],
        }
    }

    pub fn from_samples(samples: &[&Sample]) -> Self {
        let xs: Vec<&RawFeature> = samples.iter().map(|s| &s.x).collect();
        let mut batch = Self::from_features(&xs);
        for (k, s) in samples.iter().enumerate() {
            for c in 0..3 {
                batch.y[[k, c]] = s.y[c];
            }
            batch.weight[k] = s.weight;
            batch.ind[k] = s.ind.index();
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Enc (theta), Enc' (psi), Dec (phi) and the four feature networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub cfg: ModelConfig,
    pub nn_self_env: Mlp,
    pub nn_other_env: Mlp,
    pub nn_comm: Mlp,
    pub nn_ind: Mlp,
    pub enc_theta: Mlp,
    pub enc_prime_psi: Mlp,
    pub dec_phi: Mlp,
}

/// Forward intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    batch_len: usize,
    self_env: MlpCache,
    comm: Option<CommTape>,
    ind: MlpCache,
    ind_log: Array2<f64>,
    enc_theta: MlpCache,
    log_p: Array2<f64>,
    enc_psi: MlpCache,
    log_q: Array2<f64>,
    z: Array2<f64>,
    dec: MlpCache,
    y_pred: Array2<f64>,
}

#[derive(Debug, Clone)]
struct CommTape {
    other_env: MlpCache,
    comm: MlpCache,
    alpha: Array2<f64>,
    msg: Array2<f64>,
    w: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub nll: f64,
}

pub const GROUP_NAMES: [&str; 7] =
    ["enc_theta", "enc_prime_psi", "dec_phi", "nn_self_env", "nn_other_env", "nn_comm", "nn_ind"];

impl CvaeModel {
    pub fn new(cfg: ModelConfig, rng: &mut Rng) -> Self {
        let h = cfg.hidden;
        let x = cfg.x_dim();
        Self {
            nn_self_env: Mlp::new(cfg.fov_len, h, cfg.env_embedding, false, rng),
            nn_other_env: Mlp::new(cfg.fov_len, h, cfg.env_embedding, false, rng),
            nn_comm: Mlp::new(NEIGHBOR_SCALARS + cfg.env_embedding, h, cfg.attention + cfg.message, false, rng),
            nn_ind: Mlp::new(cfg.goal_dim() + cfg.message, h, 3, false, rng),
            enc_theta: Mlp::new(x, h, cfg.latent, true, rng),
            enc_prime_psi: Mlp::new(x + 3, h, cfg.latent, true, rng),
            dec_phi: Mlp::new(x + cfg.latent, h, 3, true, rng),
            cfg,
        }
    }

    pub fn groups(&self) -> [(&'static str, &Mlp); 7] {
        [
            ("enc_theta", &self.enc_theta),
            ("enc_prime_psi", &self.enc_prime_psi),
            ("dec_phi", &self.dec_phi),
            ("nn_self_env", &self.nn_self_env),
            ("nn_other_env", &self.nn_other_env),
            ("nn_comm", &self.nn_comm),
            ("nn_ind", &self.nn_ind),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut Mlp); 7] {
        [
            ("enc_theta", &mut self.enc_theta),
            ("enc_prime_psi", &mut self.enc_prime_psi),
            ("dec_phi", &mut self.dec_phi),
            ("nn_self_env", &mut self.nn_self_env),
            ("nn_other_env", &mut self.nn_other_env),
            ("nn_comm", &mut self.nn_comm),
            ("nn_ind", &mut self.nn_ind),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (_, g) in self.groups_mut() {
            out.extend(g.params_mut());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().flat_map(|(_, g)| g.params()).map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// `x_goal` and `x_comm` blocks plus the intermediates behind them.
    fn context(&self, batch: &Batch, mode: Mode) -> (Array2<f64>, Array2<f64>, MlpCache, Option<CommTape>) {
        let (e_self, self_cache) = self.nn_self_env.forward(&batch.self_fov, mode);
        let x_goal = concatenate![Axis(1), batch.self_scalars, e_self];
        let b = batch.len();
        if !self.cfg.use_comm {
            return (x_goal, Array2::zeros((b, self.cfg.message)), self_cache, None);
        }
        let (e_other, other_cache) = self.nn_other_env.forward(&batch.nb_fov, mode);
        let xnb = concatenate![Axis(1), batch.nb_scalars, e_other];
        let (out, comm_cache) = self.nn_comm.forward(&xnb, mode);
        let na = self.cfg.attention;
        let alpha = out.slice(s![.., ..na]).to_owned();
        let msg = out.slice(s![.., na..]).to_owned();
        let mut w = vec![0.0; alpha.nrows()];
        let mut x_comm = Array2::zeros((b, self.cfg.message));
        for k in 0..b {
            let (lo, hi) = (batch.offsets[k], batch.offsets[k + 1]);
            let me = alpha.row(lo);
            let scores: Vec<f64> = (lo..hi).map(|j| -(&alpha.row(j) - &me).mapv(|v| v * v).sum()).collect();
            let ws = super::ops::softmax_vec(&scores);
            for (j, wj) in (lo..hi).zip(ws) {
                w[j] = wj;
                x_comm.row_mut(k).scaled_add(wj, &msg.row(j));
            }
        }
        (x_goal, x_comm, self_cache, Some(CommTape { other_env: other_cache, comm: comm_cache, alpha, msg, w }))
    }

    fn ind_block(&self, rows: impl Iterator<Item = usize>, b: usize) -> Array2<f64> {
        let mut x_ind = Array2::zeros((b, 3));
        if self.cfg.use_ind {
            for (k, c) in rows.enumerate() {
                x_ind[[k, c]] = 1.0;
            }
        }
        x_ind
    }

    /// Training-mode (or eval-mode, for validation) loss with fixed Gumbel
    /// noise. The true indicator is fed into the condition vector.
    pub fn forward_loss(&self, batch: &Batch, noise: &Array2<f64>, lw: &LossWeights, mode: Mode) -> (LossParts, Tape) {
        let b = batch.len();
        let (x_goal, x_comm, self_env, comm) = self.context(batch, mode);
        let u = concatenate![Axis(1), x_goal, x_comm];
        let (ind_logits, ind) = self.nn_ind.forward(&u, mode);
        let ind_log = log_softmax(&ind_logits);
        let x_ind = self.ind_block(batch.ind.iter().copied(), b);
        let x = concatenate![Axis(1), u, x_ind];

        let (pl, enc_theta) = self.enc_theta.forward(&x, mode);
        let log_p = log_softmax(&pl);
        let xy = concatenate![Axis(1), x, batch.y];
        let (ql, enc_psi) = self.enc_prime_psi.forward(&xy, mode);
        let log_q = log_softmax(&ql);
        let z = gumbel_softmax(&log_q, noise, lw.temperature);
        let xz = concatenate![Axis(1), x, z];
        let (y_pred, dec) = self.dec_phi.forward(&xz, mode);

        let (kl, _, _) = kl_rows(&log_q, &log_p);
        let mut parts = LossParts::default();
        for k in 0..b {
            let rec: f64 = (&y_pred.row(k) - &batch.y.row(k)).mapv(|v| v * v).sum();
            let w = batch.weight[k];
            parts.reconstruction += w * rec;
            parts.kl += w * kl[k];
            if self.cfg.use_ind {
                parts.nll -= ind_log[[k, batch.ind[k]]];
            }
        }
        let n = b as f64;
        parts.reconstruction /= n;
        parts.kl /= n;
        parts.nll /= n;
        parts.total = parts.reconstruction + lw.kl * parts.kl + lw.nll * parts.nll;
        let tape = Tape { batch_len: b, self_env, comm, ind, ind_log, enc_theta, log_p, enc_psi, log_q, z, dec, y_pred };
        (parts, tape)
    }

    /// Accumulate gradients of the total loss into every parameter.
    pub fn backward(&mut self, batch: &Batch, tape: &Tape, lw: &LossWeights) {
        let b = tape.batch_len;
        let n = b as f64;
        let xd = self.cfg.x_dim();
        let gd = self.cfg.goal_dim();
        let w = batch.weight.view().insert_axis(Axis(1));

        let dy = (&tape.y_pred - &batch.y) * &w * (2.0 / n);
        let dxz = self.dec_phi.backward(&tape.dec, &dy);
        let mut dx = dxz.slice(s![.., ..xd]).to_owned();
        let dz = dxz.slice(s![.., xd..]).to_owned();

        let (_, dkl_q, dkl_p) = kl_rows(&tape.log_q, &tape.log_p);
        let scale = &w * (lw.kl / n);
        let d_log_q = gumbel_softmax_backward(&tape.z, &dz, lw.temperature) + dkl_q * &scale;
        let d_log_p = dkl_p * &scale;

        let dql = log_softmax_backward(&tape.log_q, &d_log_q);
        let dxy = self.enc_prime_psi.backward(&tape.enc_psi, &dql);
        dx += &dxy.slice(s![.., ..xd]);
        let dpl = log_softmax_backward(&tape.log_p, &d_log_p);
        dx += &self.enc_theta.backward(&tape.enc_theta, &dpl);

        let mut du = dx.slice(s![.., ..gd + self.cfg.message]).to_owned();
        if self.cfg.use_ind {
            let mut d_ind = Array2::zeros((b, 3));
            for k in 0..b {
                d_ind[[k, batch.ind[k]]] = -lw.nll / n;
            }
            let d_logits = log_softmax_backward(&tape.ind_log, &d_ind);
            du += &self.nn_ind.backward(&tape.ind, &d_logits);
        }

        if let Some(ct) = &tape.comm {
            let dcomm = du.slice(s![.., gd..]);
            let na = self.cfg.attention;
            let mut dalpha = Array2::zeros(ct.alpha.raw_dim());
            let mut dmsg = Array2::zeros(ct.msg.raw_dim());
            for k in 0..b {
                let (lo, hi) = (batch.offsets[k], batch.offsets[k + 1]);
                let g = dcomm.row(k);
                let dw: Vec<f64> = (lo..hi).map(|j| g.dot(&ct.msg.row(j))).collect();
                let avg: f64 = (lo..hi).zip(&dw).map(|(j, d)| ct.w[j] * d).sum();
                for (idx, j) in (lo..hi).enumerate() {
                    dmsg.row_mut(j).scaled_add(ct.w[j], &g);
                    let ds = ct.w[j] * (dw[idx] - avg);
                    let diff = &ct.alpha.row(j) - &ct.alpha.row(lo);
                    dalpha.row_mut(j).scaled_add(-2.0 * ds, &diff);
                    dalpha.row_mut(lo).scaled_add(2.0 * ds, &diff);
                }
            }
            let mut dout = Array2::zeros((ct.alpha.nrows(), na + self.cfg.message));
            dout.slice_mut(s![.., ..na]).assign(&dalpha);
            dout.slice_mut(s![.., na..]).assign(&dmsg);
            let dxnb = self.nn_comm.backward(&ct.comm, &dout);
            let de_other = dxnb.slice(s![.., NEIGHBOR_SCALARS..]).to_owned();
            self.nn_other_env.backward(&ct.other_env, &de_other);
        }
        let de_self = du.slice(s![.., SELF_SCALARS..gd]).to_owned();
        self.nn_self_env.backward(&tape.self_env, &de_self);
    }

    /// Fold a training pass's batch statistics into the running ones.
    pub fn absorb(&mut self, tape: &Tape) {
        self.enc_theta.absorb(&tape.enc_theta);
        self.enc_prime_psi.absorb(&tape.enc_psi);
        self.dec_phi.absorb(&tape.dec);
    }

    /// Condition vectors in eval mode with the predicted (argmax) indicator.
    pub fn condition(&self, batch: &Batch) -> Array2<f64> {
        let (x_goal, x_comm, _, _) = self.context(batch, Mode::Eval);
        let u = concatenate![Axis(1), x_goal, x_comm];
        let logits = self.nn_ind.infer(&u);
        let b = batch.len();
        let x_ind = self.ind_block((0..b).map(|k| argmax(logits.row(k))), b);
        concatenate![Axis(1), u, x_ind]
    }

    pub fn predict_indicator(&self, xs: &[&RawFeature]) -> Vec<Indicator> {
        let batch = Batch::from_features(xs);
        let (x_goal, x_comm, _, _) = self.context(&batch, Mode::Eval);
        let logits = self.nn_ind.infer(&concatenate![Axis(1), x_goal, x_comm]);
        logits.rows().into_iter().map(|r| Indicator::from_index(argmax(r))).collect()
    }

    /// Prior `log p(z | x)` and the decoder output for every latent class.
    pub fn enumerate_latents(&self, x: &RawFeature) -> (Array1<f64>, Array2<f64>) {
        let batch = Batch::from_features(&[x]);
        let cond = self.condition(&batch);
        let log_p = log_softmax(&self.enc_theta.infer(&cond)).row(0).to_owned();
        let l = self.cfg.latent;
        let xs = cond.broadcast((l, cond.ncols())).unwrap().to_owned();
        let zs = Array2::eye(l);
        (log_p, self.dec_phi.infer(&concatenate![Axis(1), xs, zs]))
    }

    /// Raw decoder outputs `y'` (scaled magnitude, direction) for a batch,
    /// one hard latent draw from the prior per row.
    pub fn sample_raw(&self, xs: &[&RawFeature], rng: &mut Rng) -> Array2<f64> {
        let batch = Batch::from_features(xs);
        let cond = self.condition(&batch);
        let log_p = log_softmax(&self.enc_theta.infer(&cond));
        let mut z = Array2::zeros((batch.len(), self.cfg.latent));
        for k in 0..batch.len() {
            z[[k, sample_categorical(log_p.row(k), rng)]] = 1.0;
        }
        self.dec_phi.infer(&concatenate![Axis(1), cond, z])
    }

    /// The learned vertex sampler: one next-motion draw per observation.
    pub fn sample_motion(&self, xs: &[&RawFeature], rng: &mut Rng) -> Vec<MotionEncoding> {
        self.sample_raw(xs, rng).rows().into_iter().map(|r| output_to_motion([r[0], r[1], r[2]])).collect()
    }
}

impl Tape {
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut caches = vec![&self.self_env, &self.ind, &self.enc_theta, &self.enc_psi, &self.dec];
        if let Some(c) = &self.comm {
            caches.push(&c.other_env);
            caches.push(&c.comm);
        }
        caches.into_iter().flat_map(Mlp::relu_pattern).collect()
    }
}

/// Convert a decoder output into a motion with non-negative magnitude.
pub fn output_to_motion(y: [f64; 3]) -> MotionEncoding {
    MotionEncoding { magnitude: y[0].max(0.0) / LENGTH_SCALE, direction: Point2::new(y[1], y[2]) }
}

/// Training target for a motion `v`.
pub fn motion_target(v: Point2) -> [f64; 3] {
    crate::features::xi(v).to_array(LENGTH_SCALE)
}
