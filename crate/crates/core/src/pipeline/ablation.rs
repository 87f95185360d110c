use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bench::{run_benchmark, BenchInstance, Method, MetricsRecord, ModelEntry, Timing};
use crate::features::FeatureConfig;
use crate::neural::{train, CvaeModel, ModelConfig, Sample, TrainConfig, TrainReport};
use crate::par::Execution;
use crate::planner::PlanLimits;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoComm,
    NoInd,
    NoRandomWalk,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] =
        [AblationVariant::Full, AblationVariant::NoComm, AblationVariant::NoInd, AblationVariant::NoRandomWalk];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoComm => "no_comm",
            AblationVariant::NoInd => "no_ind",
            AblationVariant::NoRandomWalk => "no_random_walk",
        }
    }

    /// The model this variant samples from; the random-walk ablation reuses
    /// the full model.
    pub fn model_label(self) -> &'static str {
        match self {
            AblationVariant::NoComm => "no_comm",
            AblationVariant::NoInd => "no_ind",
            _ => "full",
        }
    }

    pub fn model_config(self, fov_len: usize) -> ModelConfig {
        let mut c = ModelConfig::new(fov_len);
        c.use_comm = self != AblationVariant::NoComm;
        c.use_ind = self != AblationVariant::NoInd;
        c
    }

    pub fn method(self, n_traj: usize) -> Method {
        Method::Ctrm {
            n_traj,
            model: self.model_label().into(),
            random_walk: self != AblationVariant::NoRandomWalk,
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown ablation variant `{s}`"))
    }
}

/// Train the model a variant samples from.
pub fn train_variant(
    variant: AblationVariant,
    features: FeatureConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> (ModelEntry, TrainReport) {
    let mc = variant.model_config(features.fov_len());
    let init = CvaeModel::new(mc, &mut seeded(derive_seed(cfg.seed, &[0])));
    let (model, report) = train(init, train_set, val_set, cfg);
    (ModelEntry { label: variant.model_label().into(), model, features }, report)
}

/// The benchmark protocol for one variant; records carry the variant name.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    variant: AblationVariant,
    suite: &[BenchInstance],
    models: &[ModelEntry],
    n_traj: usize,
    limits: &PlanLimits,
    seed: u64,
    timing: Timing,
    exec: Execution,
) -> Vec<MetricsRecord> {
    let mut out = run_benchmark(suite, &[variant.method(n_traj)], models, limits, seed, timing, exec);
    for r in &mut out {
        r.method = variant.name().into();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.name().parse::<AblationVariant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<AblationVariant>(&json).unwrap(), v);
        }
        assert!("no_such".parse::<AblationVariant>().is_err());
    }

    #[test]
    fn variant_models() {
        let c = AblationVariant::NoComm.model_config(18);
        assert!(!c.use_comm && c.use_ind);
        let c = AblationVariant::NoInd.model_config(18);
        assert!(c.use_comm && !c.use_ind);
        assert_eq!(AblationVariant::NoRandomWalk.model_label(), "full");
        assert_eq!(
            AblationVariant::NoRandomWalk.method(25),
            Method::Ctrm { n_traj: 25, model: "full".into(), random_walk: false }
        );
    }
}
