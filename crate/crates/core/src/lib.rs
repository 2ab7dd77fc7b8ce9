//! Relationship-aware adversarial domain adaptation on small dense networks.
//!
//! A feature extractor `G_f` feeds a label predictor `G_y` and a class-conditional
//! domain discriminator `G_d` through a gradient reversal layer. Besides the
//! adversarial game, the precision matrices implied by the output layers of `G_y`
//! and `G_d` are pulled together so both heads agree on how classes relate.
//!
//! Modules, bottom up:
//!
//! * [`linalg`]: dense matrices, Cholesky, Jacobi eigen-decomposition, shrinkage.
//! * [`autonet`]: feedforward networks with exact reverse mode.
//! * [`structure`]: precision estimation, divergences and the structure regularizer.
//! * [`adversarial`]: the three-part model and the composite objective.
//! * [`datagen`]: synthetic Gaussian-mixture domains with controlled shift.
//! * [`trainer`]: SGD with momentum, schedules, checkpoints, gradient checks.
//! * [`eval`]: accuracy, confusion, proxy A-distance, structure reports, CSV.
//! * [`experiment`]: methods, config files, ablations and the `rada` commands.

pub mod adversarial;
pub mod autonet;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod linalg;
pub mod structure;
pub mod trainer;

pub use adversarial::{ModelShape, RadaModel};
pub use datagen::{GenConfig, LabeledDataset};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use structure::StructureDirection;
pub use trainer::{fit, TrainConfig, TrainReport};
