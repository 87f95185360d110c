//! Small dense networks with hand-written backpropagation, and the CVAE
//! vertex sampler built from them.

mod adam;
mod checkpoint;
mod cvae;
pub mod gradcheck;
mod layers;
mod ops;
mod train;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use cvae::{
    motion_target, output_to_motion, Batch, CvaeModel, LossParts, LossWeights, ModelConfig, Sample, Tape, GROUP_NAMES,
};
pub use layers::{BatchNorm, Linear, Mlp, MlpCache, Mode, Param, BN_EPS, BN_MOMENTUM};
pub use ops::{
    argmax, gumbel_noise, gumbel_softmax, gumbel_softmax_backward, kl_categorical, kl_rows, log_softmax,
    log_softmax_backward, sample_categorical, softmax, softmax_backward, softmax_vec,
};
pub use train::{evaluate_loss, indicator_accuracy, train, TrainConfig, TrainReport};
