//! Fitting and evaluating binomial decision models for perceptual distances
//! from raw two-alternative forced choice (2AFC) judgements.
//!
//! The pipeline is: load triplet records, uniformise the distance marginals,
//! estimate the choice probability surface by kernel density estimation (or
//! train a small MLP baseline), then score distances with NLL, AJ and 2AFC.

pub mod data;
pub mod density;
pub mod distances;
pub mod error;
pub mod metrics;
pub mod mlp;
pub mod par;
pub mod rng;
pub mod surface;
pub mod synthetic;
pub mod uniformise;

pub use data::{JudgementDataset, TripletRecord};
pub use density::{binary_surface, fit_auto, fit_surface, DensityConfig};
pub use error::{Error, Result};
pub use metrics::{full_report, EvalReport};
pub use mlp::{train_mlp, MlpConfig, MlpModel};
pub use surface::{ChoiceModel, DecisionSurface};
pub use uniformise::{fit_uniformiser, UniformiserMap};
