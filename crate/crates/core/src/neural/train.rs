use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::cvae::{Batch, CvaeModel, LossWeights, Sample};
use super::layers::Mode;
use super::ops::gumbel_noise;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss: LossWeights,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper(seed: u64) -> Self {
        Self { batch_size: 50, epochs: 1000, learning_rate: 0.001, loss: LossWeights::default(), seed }
    }

    pub fn desk(seed: u64) -> Self {
        Self { epochs: 200, ..Self::paper(seed) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub indicator_accuracy_before: f64,
    pub indicator_accuracy_after: f64,
}

/// Mean loss over `samples` in eval mode with Gumbel noise from `seed`.
pub fn evaluate_loss(model: &CvaeModel, samples: &[Sample], batch_size: usize, lw: &LossWeights, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = Batch::from_samples(&refs);
        let noise = gumbel_noise((batch.len(), model.cfg.latent), &mut rng);
        let (parts, _) = model.forward_loss(&batch, &noise, lw, Mode::Eval);
        total += parts.total * chunk.len() as f64;
    }
    total / samples.len().max(1) as f64
}

/// Fraction of samples whose predicted indicator matches the truth.
pub fn indicator_accuracy(model: &CvaeModel, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut hits = 0;
    for chunk in samples.chunks(256) {
        let xs: Vec<_> = chunk.iter().map(|s| &s.x).collect();
        let pred = model.predict_indicator(&xs);
        hits += pred.iter().zip(chunk).filter(|(p, s)| **p == s.ind).count();
    }
    hits as f64 / samples.len() as f64
}

/// Shuffled minibatch Adam; returns the snapshot with the lowest validation
/// loss.
pub fn train(mut model: CvaeModel, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> (CvaeModel, TrainReport) {
    assert!(!train.is_empty() && !val.is_empty(), "training needs nonempty train and validation sets");
    let mut rng = seeded(derive_seed(cfg.seed, &[1]));
    let val_seed = derive_seed(cfg.seed, &[2]);
    let mut opt = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = TrainReport {
        indicator_accuracy_before: indicator_accuracy(&model, val),
        best_val_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best = model.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            // Batch statistics are undefined for a single row.
            if chunk.len() < 2 {
                continue;
            }
            let refs: Vec<&Sample> = chunk.iter().map(|&k| &train[k]).collect();
            let batch = Batch::from_samples(&refs);
            let noise = gumbel_noise((batch.len(), model.cfg.latent), &mut rng);
            model.zero_grad();
            let (parts, tape) = model.forward_loss(&batch, &noise, &cfg.loss, Mode::Train);
            model.backward(&batch, &tape, &cfg.loss);
            opt.step(&mut model.params_mut());
            model.absorb(&tape);
            epoch_loss += parts.total * chunk.len() as f64;
            seen += chunk.len();
        }
        report.train_loss.push(epoch_loss / seen.max(1) as f64);
        let v = evaluate_loss(&model, val, cfg.batch_size, &cfg.loss, val_seed);
        report.val_loss.push(v);
        if v < report.best_val_loss {
            report.best_val_loss = v;
            report.best_epoch = epoch;
            best = model.clone();
        }
        log::debug!("epoch {epoch}: train {:.5} val {v:.5}", report.train_loss[epoch]);
    }
    report.indicator_accuracy_after = indicator_accuracy(&best, val);
    (best, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureConfig, FeatureContext, Indicator};
    use crate::geometry::Point2;
    use crate::instance::{generate_seeded, Profile, Scenario, ScenarioConfig};
    use crate::neural::cvae::{motion_target, ModelConfig};
    use rand::Rng as _;

    /// Targets are a fixed function of the goal direction.
    fn toy(n: usize, seed: u64) -> (ModelConfig, Vec<Sample>) {
        let fc = FeatureConfig { grid_resolution: 32, fov_size: 3, neighbors: 4 };
        let mut rng = seeded(seed);
        let mut out = Vec::new();
        let mut k = 0;
        while out.len() < n {
            let inst = generate_seeded(&ScenarioConfig::new(Scenario::Basic, Profile::Desk), seed * 1000 + k).unwrap();
            k += 1;
            let ctx = FeatureContext::new(&inst, fc);
            for i in 0..inst.num_agents() {
                let d = inst.goals[i] - inst.starts[i];
                let step = Point2::new(-d.y, d.x) * (1.0 / 32.0 / d.norm());
                out.push(Sample {
                    x: ctx.extract(&inst, i, &inst.starts, &inst.starts),
                    y: motion_target(step),
                    weight: rng.gen_range(0.5..1.0),
                    ind: Indicator::TurnCounterClockwise,
                });
            }
        }
        out.truncate(n);
        (ModelConfig::new(fc.fov_len()), out)
    }

    #[test]
    fn loss_halves_on_toy_data() {
        let (mc, data) = toy(120, 1);
        let model = CvaeModel::new(mc, &mut seeded(3));
        let cfg = TrainConfig { batch_size: 20, epochs: 100, ..TrainConfig::paper(7) };
        let (_, report) = train(model, &data[..100], &data[100..], &cfg);
        assert!(report.train_loss[99] < 0.5 * report.train_loss[0], "{:?}", report.train_loss);
        assert!(report.best_val_loss <= *report.val_loss.last().unwrap());
        assert!(report.indicator_accuracy_after >= report.indicator_accuracy_before);
    }

    #[test]
    fn training_is_reproducible() {
        let (mc, data) = toy(60, 2);
        let cfg = TrainConfig { batch_size: 16, epochs: 5, ..TrainConfig::paper(9) };
        let a = train(CvaeModel::new(mc, &mut seeded(1)), &data[..40], &data[40..], &cfg);
        let b = train(CvaeModel::new(mc, &mut seeded(1)), &data[..40], &data[40..], &cfg);
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }
}
