//! Loss kernel, optimizer, epoch loop and learning-rate/size grid search.

pub mod adam;
pub mod grid;
pub mod loss;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, Moments};
pub use grid::{grid_search, GridTable};
pub use loss::{compute_loss, entry_loss, LossKind, MAPE_FLOOR};
pub use trainer::{batch_gradient, fit_with, mean_loss, train, EpochRecord, TrainConfig, TrainReport, Trainer};
