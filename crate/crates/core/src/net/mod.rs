//! Segmentation network, soft Dice training and sliding-window inference.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod ops;
pub mod predict;
pub mod tensor;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use loss::soft_dice;
pub use model::{forward, loss_and_gradient, LayerSpec, NetConfig, Network};
pub use predict::{predict_probabilities, predict_volume};
pub use tensor::Tensor;
pub use train::{train, Case, Dataset, LossRecord, Phase, TrainOptions, TrainSchedule, Trainer};
