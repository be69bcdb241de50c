//! Learnable two-stage grid predictor.
//!
//! The coarse stage is a first-order Markov transition over grid cells:
//! from the current cell, the next-cell logits are a translation-invariant
//! kernel over relative moves within a `(2r+1) x (2r+1)` neighbourhood plus a
//! learned per-class bias of the destination cell's scene features. Belief
//! states are propagated by the chain, so mass only ever diffuses to nearby
//! cells. The fine stage maps the last observed velocity through an affine
//! map to an offset added to the selected cell's center.
//!
//! Gradients are derived by hand (see [`loss`]) and checked against finite
//! differences in the tests.

mod beam;
pub mod loss;
mod train;
mod transition;

pub use beam::{decode_cells, diverse_beam_search, BeamConfig, BeamOutput};
pub use loss::{
    cls_loss, cls_loss_and_feature_grad, loss_and_gradients, mean_loss_and_gradients, smooth_l1, Gradients, LossBreakdown,
    LossConfig, RegressionTarget, SceneBatch, SoftLabel, TrainExample, TrainSet,
};
pub use train::{train, train_with, Checkpoint, TrainConfig, TrainOutput};
pub use transition::{rollout_beliefs, rollout_from, transition_logits, Transitions};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::types::Trajectory;

pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub grid: GridSpec,
    #[serde(rename = "r")]
    pub radius: usize,
    /// Logits over relative moves, row-major over `(d_row + r, d_col + r)`.
    pub kernel: Vec<f64>,
    pub scene_bias: Vec<f64>,
    #[serde(rename = "A")]
    pub offset_a: [[f64; 2]; 2],
    #[serde(rename = "c")]
    pub offset_c: [f64; 2],
}

impl ModelParams {
    /// All-zero parameters: uniform transitions and zero offsets.
    pub fn zeros(grid: GridSpec, radius: usize, num_classes: usize) -> Result<Self> {
        grid.validate()?;
        if radius < 1 {
            return Err(Error::InvalidArgument("neighbourhood radius must be >= 1".into()));
        }
        if num_classes < 1 {
            return Err(Error::InvalidArgument("need at least one scene class".into()));
        }
        let side = 2 * radius + 1;
        Ok(ModelParams {
            grid,
            radius,
            kernel: vec![0.0; side * side],
            scene_bias: vec![0.0; num_classes],
            offset_a: [[0.0; 2]; 2],
            offset_c: [0.0; 2],
        })
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn num_classes(&self) -> usize {
        self.scene_bias.len()
    }

    /// Kernel slot for a relative move; `None` if outside the neighbourhood.
    pub fn move_index(&self, d_row: isize, d_col: isize) -> Option<usize> {
        let r = self.radius as isize;
        if d_row.abs() > r || d_col.abs() > r {
            return None;
        }
        Some(((d_row + r) * (2 * r + 1) + (d_col + r)) as usize)
    }

    pub fn kernel_at(&self, d_row: isize, d_col: isize) -> f64 {
        self.move_index(d_row, d_col).map_or(f64::NEG_INFINITY, |m| self.kernel[m])
    }

    pub fn set_kernel(&mut self, d_row: isize, d_col: isize, value: f64) {
        let m = self.move_index(d_row, d_col).expect("move inside neighbourhood");
        self.kernel[m] = value;
    }

    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.scene_bias.len() + 6
    }

    /// Parameters as one vector: kernel, scene bias, A (row-major), c.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.kernel);
        v.extend_from_slice(&self.scene_bias);
        v.extend(self.offset_a.iter().flatten());
        v.extend_from_slice(&self.offset_c);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.num_params());
        let nk = self.kernel.len();
        let ns = self.scene_bias.len();
        self.kernel.copy_from_slice(&v[..nk]);
        self.scene_bias.copy_from_slice(&v[nk..nk + ns]);
        let rest = &v[nk + ns..];
        self.offset_a = [[rest[0], rest[1]], [rest[2], rest[3]]];
        self.offset_c = [rest[4], rest[5]];
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.to_flat().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("model parameters".into()))
        }
    }

    /// Offset for an observed velocity: `A v + c`.
    pub fn offset_for(&self, v: (f64, f64)) -> (f64, f64) {
        let a = &self.offset_a;
        (
            a[0][0] * v.0 + a[0][1] * v.1 + self.offset_c[0],
            a[1][0] * v.0 + a[1][1] * v.1 + self.offset_c[1],
        )
    }
}

/// Per-step fine offsets for the next `steps` predictions. The same offset
/// applies at every step.
pub fn predict_offsets(obs: &Trajectory, params: &ModelParams, steps: usize) -> Result<Vec<(f64, f64)>> {
    if obs.is_empty() {
        return Err(Error::Empty("observation".into()));
    }
    Ok(vec![params.offset_for(obs.last_velocity()); steps])
}
