//! Losses, the toy linear per-pixel segmenter and its trainer.

mod augment;
mod features;
mod loss;
mod model;
mod trainer;

pub use augment::{augment, AugmentConfig};
pub use features::{pixel_features, PixelFeatures};
pub use loss::{
    cross_entropy_loss, dice_loss, dice_loss_prob_grad, joint_loss, softmax, softmax_backward,
    LossOutput, LossWeights, SoftPrediction, DICE_EPS, PROB_FLOOR,
};
pub use model::{forward, read_params, write_params, ModelParams, SEGW_MAGIC};
pub use trainer::{train, train_on_frames, LabeledFrame, TrainConfig, TrainOutcome};
