//! Losses, the optimizer, the training loop and finite-difference gradient
//! checks.

pub mod fit;
pub mod gradcheck;
pub mod loss;
pub mod optim;

pub use fit::{fit, fit_examples, prepare_examples, Example, EpochStats, F1Source, TrainConfig, TrainReport};
pub use loss::{cross_entropy, mean_cross_entropy, BatchLoss, LossTerm};
pub use optim::AdamW;
