use std::ops::Range;

use crate::error::{Error, Result};
use crate::grid::{BeliefMap, CellIndex, GridSpec};
use crate::types::{SceneClassMap, SceneFeatures};

use super::ModelParams;

/// Sparse next-cell distributions for every source cell, for one set of
/// parameters and one scene. Rows are stored contiguously; within a row the
/// destinations are in increasing cell order.
#[derive(Debug, Clone)]
pub struct Transitions {
    pub(crate) grid: GridSpec,
    row_start: Vec<usize>,
    pub(crate) dest: Vec<usize>,
    pub(crate) mv: Vec<usize>,
    pub(crate) prob: Vec<f64>,
    pub(crate) log_prob: Vec<f64>,
}

pub(crate) fn check_features(params: &ModelParams, features: &SceneFeatures) -> Result<()> {
    if features.cells != params.grid.num_cells() || features.channels != params.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "features {}x{} vs model {} cells x {} classes",
            features.cells,
            features.channels,
            params.grid.num_cells(),
            params.num_classes()
        )));
    }
    Ok(())
}

/// Per-cell logit contribution of the scene: `sum_k bias[k] * F(i, k)`.
pub(crate) fn cell_bias(params: &ModelParams, features: &SceneFeatures) -> Vec<f64> {
    (0..features.cells)
        .map(|i| {
            features
                .cell(i)
                .iter()
                .zip(&params.scene_bias)
                .map(|(f, b)| f * b)
                .sum()
        })
        .collect()
}

impl Transitions {
    pub fn new(params: &ModelParams, features: &SceneFeatures) -> Result<Self> {
        check_features(params, features)?;
        let grid = params.grid;
        let bias = cell_bias(params, features);
        let r = params.radius as isize;
        let n = grid.num_cells();
        let per_row = params.side() * params.side();
        let mut row_start = Vec::with_capacity(n + 1);
        let mut dest = Vec::with_capacity(n * per_row);
        let mut mv = Vec::with_capacity(n * per_row);
        let mut prob = Vec::with_capacity(n * per_row);
        let mut log_prob = Vec::with_capacity(n * per_row);
        let mut logits = Vec::with_capacity(per_row);
        for j in 0..n {
            row_start.push(dest.len());
            let (row, col) = grid.row_col(CellIndex(j));
            logits.clear();
            for dr in -r..=r {
                let rr = row as isize + dr;
                if rr < 0 || rr >= grid.rows as isize {
                    continue;
                }
                for dc in -r..=r {
                    let cc = col as isize + dc;
                    if cc < 0 || cc >= grid.cols as isize {
                        continue;
                    }
                    let i = rr as usize * grid.cols + cc as usize;
                    let m = params.move_index(dr, dc).expect("inside neighbourhood");
                    dest.push(i);
                    mv.push(m);
                    logits.push(params.kernel[m] + bias[i]);
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let log_total = total.ln();
            for (z, e) in logits.iter().zip(&exps) {
                prob.push(e / total);
                log_prob.push(z - max - log_total);
            }
        }
        row_start.push(dest.len());
        Ok(Transitions {
            grid,
            row_start,
            dest,
            mv,
            prob,
            log_prob,
        })
    }

    pub fn from_scene(params: &ModelParams, scene: &SceneClassMap) -> Result<Self> {
        scene.check_grid(&params.grid)?;
        Transitions::new(params, &scene.to_features())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn row(&self, source: usize) -> Range<usize> {
        self.row_start[source]..self.row_start[source + 1]
    }

    pub fn num_cells(&self) -> usize {
        self.row_start.len() - 1
    }

    /// Dense next-cell distribution from one source cell.
    pub fn dense_row(&self, source: CellIndex) -> Vec<f64> {
        let mut out = vec![0.0; self.num_cells()];
        for s in self.row(source.0) {
            out[self.dest[s]] = self.prob[s];
        }
        out
    }

    /// `log p(dest | source)`, `-inf` outside the neighbourhood.
    pub fn log_prob(&self, source: CellIndex, dest: CellIndex) -> f64 {
        self.row(source.0)
            .find(|&s| self.dest[s] == dest.0)
            .map_or(f64::NEG_INFINITY, |s| self.log_prob[s])
    }

    /// One step of belief propagation: `C'(i) = sum_j C(j) p(i | j)`.
    pub fn propagate(&self, belief: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; belief.len()];
        for (j, &c) in belief.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for s in self.row(j) {
                out[self.dest[s]] += c * self.prob[s];
            }
        }
        out
    }
}

/// Next-cell belief from `prev` under the model and scene.
pub fn transition_logits(prev: CellIndex, params: &ModelParams, scene: &SceneClassMap) -> Result<BeliefMap> {
    params.grid.check(prev)?;
    let trans = Transitions::from_scene(params, scene)?;
    Ok(BeliefMap::from_normalized(trans.dense_row(prev)))
}

/// Beliefs for `steps` future steps, starting from an arbitrary initial
/// distribution (not included in the output).
pub fn rollout_from(start: &[f64], trans: &Transitions, steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(steps);
    let mut current = start.to_vec();
    for _ in 0..steps {
        current = trans.propagate(&current);
        out.push(current.clone());
    }
    out
}

/// Beliefs for `steps` future steps starting from the one-hot last
/// observed cell.
pub fn rollout_beliefs(
    obs_last_cell: CellIndex,
    params: &ModelParams,
    scene: &SceneClassMap,
    steps: usize,
) -> Result<Vec<BeliefMap>> {
    if steps < 1 {
        return Err(Error::InvalidArgument("rollout needs at least one step".into()));
    }
    let start = params.grid.one_hot(obs_last_cell)?;
    let trans = Transitions::from_scene(params, scene)?;
    Ok(rollout_from(start.values(), &trans, steps)
        .into_iter()
        .map(BeliefMap::from_normalized)
        .collect())
}
