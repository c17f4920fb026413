//! Feature-balanced loss (FBL) for long-tailed classification.
//!
//! The crate bundles everything needed to study the loss at desk scale:
//!
//! - [`data`]: exponential long-tail class profiles and Gaussian-cluster datasets.
//! - [`model`]: a two-layer ReLU network with an explicit embedding feature and
//!   hand-written backward pass, trained by momentum SGD.
//! - [`loss`]: softmax cross-entropy, the feature-balanced loss with its
//!   curriculum schedules, and simplified logit-adjustment baselines.
//! - [`trainer`]: the epoch loop.
//! - [`metrics`]: per-class accuracy, feature-norm and weight-norm diagnostics.
//! - [`verify`] and [`gradcheck`]: numerical invariant suites.
//! - [`experiment`]: seeded paired runs and schedule sweeps.
//! - [`cli`]: the `fbl` command-line front end.
//!
//! ```
//! use fbl::data::{synth_dataset, SynthSpec};
//! use fbl::loss::{LossConfig, ScheduleKind};
//! use fbl::trainer::{train, TrainConfig};
//!
//! let ds = synth_dataset(&SynthSpec { n_max: 60, imbalance_factor: 6.0, num_classes: 3, test_per_class: 10, ..Default::default() })?;
//! let cfg = TrainConfig { epochs: 3, loss: LossConfig::fbl(ScheduleKind::ParabolicIncrease), ..Default::default() };
//! let run = train(&ds, cfg.init_model(&ds), &cfg)?;
//! assert_eq!(run.metrics.len(), 3);
//! # Ok::<(), fbl::FblError>(())
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod verify;

pub use error::{FblError, Result};
