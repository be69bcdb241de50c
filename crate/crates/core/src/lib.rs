//! Multi-future pedestrian trajectory forecasting toolkit.
//!
//! * [`grid`]: the Manhattan grid, belief maps and regression offsets.
//! * [`gridnet`]: the learnable coarse/fine grid predictor with
//!   diverse beam search.
//! * [`simaug`]: multi-view adversarial mixup augmentation for gridnet.
//! * [`metrics`], [`baselines`]: evaluation and non-learned predictors.
//! * [`fusion`]: focal attention and box relation features.
//! * [`multiview`]: homographies, Hungarian assignment, cross-camera
//!   tracklet association and smoothing.
//! * [`scenario`]: seeded synthetic forking-paths data.
//! * [`io`], [`pipeline`]: file formats and the end-to-end experiment steps.

pub mod baselines;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod gridnet;
pub mod io;
pub mod metrics;
pub mod multiview;
pub mod pipeline;
pub mod scenario;
pub mod simaug;
pub mod types;

pub use error::{Error, Result};
pub use grid::{BeliefMap, CellIndex, GridSpec, OffsetMap};
pub use types::{
    validate_dataset, CameraModel, DatasetMeta, Horizon, MultiFutureSample, PredictionSet, SceneClassMap,
    SceneFeatures, TrajPoint, Trajectory, ValidationReport,
};
