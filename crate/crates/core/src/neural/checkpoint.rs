use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cvae::{CvaeModel, ModelConfig, GROUP_NAMES};
use super::layers::Mlp;

pub const CHECKPOINT_FORMAT: &str = "ctrm-cvae";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint {0} version {1}")]
    Version(String, u32),
    #[error("parameter group `{0}` is missing")]
    MissingGroup(String),
    #[error("tensor {group}[{index}] has shape {found:?}, expected {expected:?}")]
    Shape { group: String, index: usize, found: [usize; 2], expected: [usize; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    fn from2(a: &Array2<f64>) -> Self {
        Self { shape: [a.nrows(), a.ncols()], data: a.iter().copied().collect() }
    }

    fn from1(a: &Array1<f64>) -> Self {
        Self { shape: [1, a.len()], data: a.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Group {
    name: String,
    tensors: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: ModelConfig,
    #[serde(default)]
    training: serde_json::Value,
    groups: Vec<Group>,
}

/// Weights, then batch-norm affine parameters and running statistics.
fn tensors(m: &Mlp) -> Vec<Tensor> {
    let mut out = vec![Tensor::from2(&m.fc1.weight.value), Tensor::from2(&m.fc1.bias.value)];
    if let Some(bn) = &m.norm {
        out.push(Tensor::from2(&bn.gamma.value));
        out.push(Tensor::from2(&bn.beta.value));
        out.push(Tensor::from1(&bn.running_mean));
        out.push(Tensor::from1(&bn.running_var));
    }
    out.push(Tensor::from2(&m.fc2.weight.value));
    out.push(Tensor::from2(&m.fc2.bias.value));
    out
}

fn restore(m: &mut Mlp, name: &str, ts: &[Tensor]) -> Result<(), CheckpointError> {
    let expected = tensors(m);
    if ts.len() != expected.len() {
        return Err(CheckpointError::Shape { group: name.into(), index: ts.len(), found: [0, 0], expected: [0, 0] });
    }
    for (index, (t, e)) in ts.iter().zip(&expected).enumerate() {
        if t.shape != e.shape || t.data.len() != e.data.len() {
            return Err(CheckpointError::Shape { group: name.into(), index, found: t.shape, expected: e.shape });
        }
    }
    let a2 = |t: &Tensor| Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone()).unwrap();
    let mut it = ts.iter();
    m.fc1.weight.value = a2(it.next().unwrap());
    m.fc1.bias.value = a2(it.next().unwrap());
    if let Some(bn) = &mut m.norm {
        bn.gamma.value = a2(it.next().unwrap());
        bn.beta.value = a2(it.next().unwrap());
        bn.running_mean = Array1::from(it.next().unwrap().data.clone());
        bn.running_var = Array1::from(it.next().unwrap().data.clone());
    }
    m.fc2.weight.value = a2(it.next().unwrap());
    m.fc2.bias.value = a2(it.next().unwrap());
    for p in m.params_mut() {
        p.zero_grad();
    }
    Ok(())
}

pub fn save_checkpoint(model: &CvaeModel, training: serde_json::Value) -> String {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        model: model.cfg,
        training,
        groups: model.groups().iter().map(|(n, m)| Group { name: (*n).into(), tensors: tensors(m) }).collect(),
    };
    serde_json::to_string(&file).expect("checkpoints always serialize")
}

/// Load a checkpoint, optionally insisting on a model configuration.
pub fn load_checkpoint(text: &str, expect: Option<&ModelConfig>) -> Result<(CvaeModel, serde_json::Value), CheckpointError> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(file.format, file.version));
    }
    if let Some(e) = expect {
        if e.fov_len != file.model.fov_len || e.x_dim() != file.model.x_dim() || e.latent != file.model.latent {
            return Err(CheckpointError::Shape {
                group: "model".into(),
                index: 0,
                found: [file.model.fov_len, file.model.x_dim()],
                expected: [e.fov_len, e.x_dim()],
            });
        }
    }
    let mut model = CvaeModel::new(file.model, &mut crate::rng::seeded(0));
    for name in GROUP_NAMES {
        let g = file.groups.iter().find(|g| g.name == name).ok_or_else(|| CheckpointError::MissingGroup(name.into()))?;
        let (_, mlp) = model.groups_mut().into_iter().find(|(n, _)| *n == name).unwrap();
        restore(mlp, name, &g.tensors)?;
    }
    Ok((model, file.training))
}
