//! Multi-camera trajectory construction: plane-induced homographies,
//! Hungarian assignment, cross-camera tracklet association and smoothing of
//! the fused ground-plane tracks.

mod associate;
mod homography;
mod hungarian;
mod smooth;

pub use associate::{associate_tracklets, pair_cost, AssociationConfig, GlobalTrack, Tracklet};
pub use homography::{apply_homography, homography_between, Homography, DET_TOL, W_TOL};
pub use hungarian::{hungarian_solve, Assignment};
pub use smooth::{moving_average, smooth_global, DEFAULT_WINDOW};
