//! Domain types shared across the toolkit.
//!
//! All of these are plain data: cheap to clone, immutable once built, and
//! `Send + Sync`, so evaluation workers can share them freely.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BeliefMap, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub t: i64,
    pub x: f64,
    pub y: f64,
}

impl TrajPoint {
    pub fn new(t: i64, x: f64, y: f64) -> Self {
        TrajPoint { t, x, y }
    }

    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn dist(&self, other: &TrajPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Time-ordered positions of one agent.
///
/// `Trajectory::new` enforces the invariants (non-empty, finite, strictly
/// increasing frames). Deserialization does not, so that ingested files can
/// be loaded and then reported on by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub agent_id: String,
    pub points: Vec<TrajPoint>,
}

impl Trajectory {
    pub fn new(agent_id: impl Into<String>, points: Vec<TrajPoint>) -> Result<Self> {
        let traj = Trajectory {
            agent_id: agent_id.into(),
            points,
        };
        if let Some(problem) = traj.problems().into_iter().next() {
            return Err(Error::InvalidArgument(problem));
        }
        Ok(traj)
    }

    /// Builds a trajectory with consecutive frames starting at `start_frame`.
    pub fn from_xy(agent_id: impl Into<String>, start_frame: i64, xy: &[(f64, f64)]) -> Result<Self> {
        let points = xy
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| TrajPoint::new(start_frame + k as i64, x, y))
            .collect();
        Trajectory::new(agent_id, points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> &TrajPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TrajPoint {
        &self.points[self.points.len() - 1]
    }

    pub fn xy(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(TrajPoint::xy).collect()
    }

    /// Last observed per-frame displacement, zero for a single point.
    pub fn last_velocity(&self) -> (f64, f64) {
        let n = self.points.len();
        if n < 2 {
            return (0.0, 0.0);
        }
        let (a, b) = (&self.points[n - 2], &self.points[n - 1]);
        (b.x - a.x, b.y - a.y)
    }

    /// First `n` points (or all of them if shorter).
    pub fn truncated(&self, n: usize) -> Trajectory {
        Trajectory {
            agent_id: self.agent_id.clone(),
            points: self.points[..n.min(self.points.len())].to_vec(),
        }
    }

    pub fn map_xy(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Trajectory {
        Trajectory {
            agent_id: self.agent_id.clone(),
            points: self
                .points
                .iter()
                .map(|p| {
                    let (x, y) = f(p.x, p.y);
                    TrajPoint::new(p.t, x, y)
                })
                .collect(),
        }
    }

    /// Human-readable invariant violations; empty when well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            out.push(format!("trajectory {} is empty", self.agent_id));
            return out;
        }
        if self.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            out.push(format!("trajectory {} has non-finite coordinates", self.agent_id));
        }
        if self.points.windows(2).any(|w| w[1].t <= w[0].t) {
            out.push(format!("trajectory {} frames not strictly increasing", self.agent_id));
        }
        out
    }
}

/// One observed history with one or more ground-truth continuations.
/// Single-future datasets simply carry one entry in `futures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFutureSample {
    pub sample_id: String,
    pub observation: Trajectory,
    pub futures: Vec<Trajectory>,
    pub scene_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub obs: usize,
    pub pred: usize,
}

impl Horizon {
    pub const SHORT: Horizon = Horizon { obs: 8, pred: 12 };
    pub const LONG: Horizon = Horizon { obs: 12, pred: 30 };

    /// From `(h, T)`: observation length and total sequence length.
    pub fn from_total(obs: usize, total: usize) -> Result<Self> {
        if obs < 1 || total <= obs {
            return Err(Error::InvalidArgument(format!("bad horizon ({obs}, {total})")));
        }
        Ok(Horizon { obs, pred: total - obs })
    }

    pub fn total(&self) -> usize {
        self.obs + self.pred
    }
}

/// Dataset-level metadata. Coordinates are in `unit`; frame indices follow
/// whatever convention `frame_note` records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub unit: String,
    pub grid: GridSpec,
    pub horizon: Horizon,
    #[serde(default)]
    pub frame_note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub sample_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reports every horizon, frame-ordering and scene-reference problem.
/// `scenes`, when given, is the set of known scene maps.
pub fn validate_dataset(
    samples: &[MultiFutureSample],
    horizon: Horizon,
    scenes: Option<&BTreeMap<String, SceneClassMap>>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |id: &str, message: String| {
        violations.push(Violation {
            sample_id: id.to_string(),
            message,
        })
    };
    for s in samples {
        let id = s.sample_id.as_str();
        for p in s.observation.problems() {
            push(id, format!("observation: {p}"));
        }
        if s.observation.len() != horizon.obs {
            push(
                id,
                format!("observation length {} != {}", s.observation.len(), horizon.obs),
            );
        }
        if s.futures.is_empty() {
            push(id, "no futures".to_string());
        }
        for (j, f) in s.futures.iter().enumerate() {
            for p in f.problems() {
                push(id, format!("future {j}: {p}"));
            }
            if f.len() > horizon.pred {
                push(id, format!("future {j} length {} > {}", f.len(), horizon.pred));
            }
            if let (Some(first), Some(last)) = (f.points.first(), s.observation.points.last()) {
                if first.t != last.t + 1 {
                    push(
                        id,
                        format!("future {j} starts at frame {} but observation ends at {}", first.t, last.t),
                    );
                }
            }
        }
        if let Some(known) = scenes {
            if !known.contains_key(&s.scene_ref) {
                push(id, format!("unknown scene_ref {}", s.scene_ref));
            }
        }
    }
    ValidationReport { violations }
}

/// Per-cell semantic class labels for a scene, row-major like the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneClassMap {
    rows: usize,
    cols: usize,
    num_classes: usize,
    classes: Vec<u16>,
}

impl SceneClassMap {
    pub fn new(rows: usize, cols: usize, num_classes: usize, classes: Vec<u16>) -> Result<Self> {
        if rows == 0 || cols == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument("scene map dimensions must be positive".into()));
        }
        if classes.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {rows}x{cols} scene",
                classes.len()
            )));
        }
        if let Some(bad) = classes.iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "class {bad} out of range [0, {num_classes})"
            )));
        }
        Ok(SceneClassMap {
            rows,
            cols,
            num_classes,
            classes,
        })
    }

    pub fn uniform(rows: usize, cols: usize, num_classes: usize, class: u16) -> Result<Self> {
        SceneClassMap::new(rows, cols, num_classes, vec![class; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &[u16] {
        &self.classes
    }

    pub fn class_at(&self, cell: usize) -> usize {
        self.classes[cell] as usize
    }

    pub fn set(&mut self, cell: usize, class: u16) {
        assert!((class as usize) < self.num_classes);
        self.classes[cell] = class;
    }

    pub fn matches(&self, grid: &GridSpec) -> bool {
        self.rows == grid.rows && self.cols == grid.cols
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.matches(grid) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "scene {}x{} vs grid {}x{}",
                self.rows, self.cols, grid.rows, grid.cols
            )))
        }
    }

    pub fn to_features(&self) -> SceneFeatures {
        let k = self.num_classes;
        let mut values = vec![0.0; self.classes.len() * k];
        for (cell, &c) in self.classes.iter().enumerate() {
            values[cell * k + c as usize] = 1.0;
        }
        SceneFeatures {
            cells: self.classes.len(),
            channels: k,
            values,
        }
    }
}

/// Real-valued per-cell scene features, `cells x channels`, cell-major.
/// A class map becomes a one-hot feature map; augmentation perturbs these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFeatures {
    pub cells: usize,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl SceneFeatures {
    pub fn zeros(cells: usize, channels: usize) -> Self {
        SceneFeatures {
            cells,
            channels,
            values: vec![0.0; cells * channels],
        }
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &SceneFeatures) -> bool {
        self.cells == other.cells && self.channels == other.channels
    }
}

/// Extrinsics of a pinhole camera (`X_cam = R X_world + t`) together with a
/// ground plane `n . X_cam + d = 0` expressed in this camera's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub plane_normal: Vector3<f64>,
    pub plane_distance: f64,
}

impl CameraModel {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        plane_normal: Vector3<f64>,
        plane_distance: f64,
    ) -> Result<Self> {
        let ortho = rotation * rotation.transpose() - Matrix3::identity();
        if ortho.abs().max() > 1e-9 {
            return Err(Error::InvalidArgument("rotation is not orthonormal".into()));
        }
        if !(plane_distance > 0.0) {
            return Err(Error::InvalidArgument("plane distance must be positive".into()));
        }
        Ok(CameraModel {
            rotation,
            translation,
            plane_normal,
            plane_distance,
        })
    }
}

/// K predicted futures for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub trajectories: Vec<Trajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beliefs: Option<Vec<BeliefMap>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_probs: Option<Vec<f64>>,
}

impl PredictionSet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Empty("prediction set".into()));
        }
        let n = trajectories[0].len();
        if trajectories.iter().any(|t| t.len() != n) {
            return Err(Error::LengthMismatch("predicted trajectories differ in length".into()));
        }
        Ok(PredictionSet {
            trajectories,
            beliefs: None,
            log_probs: None,
        })
    }

    pub fn k(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }
}
