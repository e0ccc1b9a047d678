//! From-scratch MLP training and inference.

mod checkpoint;
mod loss;
mod matrix;
mod model;
mod train;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{argmax, cross_entropy_loss, smoothed_target, softmax, PROB_FLOOR};
pub use matrix::RealMatrix;
pub use model::{DenseLayer, DropoutMasks, ForwardTrace, GradientSet, LayerGradient, MlpModel};
pub use train::{
    dp_sgd_step, evaluate, holdout_validation, train, train_with_observer, DpConfig, DpStepStats, EarlyStopping, EpochStats,
    Evaluation, PredictionRecord, TrainConfig, TrainHistory,
};
