//! Training objective and its hand-derived gradients.
//!
//! For one example with start distribution `C_0`, transition matrix `P` and
//! per-step soft labels `y_t`, the classification loss is
//!
//! ```text
//! C_t   = C_{t-1} P
//! L_cls = -(1/T) sum_t sum_c y_t(c) ln C_t(c)
//! ```
//!
//! Backpropagation runs the adjoint `a_t = dL/dC_t` backwards
//! (`a_t = g_t + P a_{t+1}`), accumulates `dL/dP(j,i) = sum_t C_{t-1}(j) a_t(i)`,
//! and pushes that through the row-wise softmax into the kernel and the
//! per-cell scene bias. The scene bias is linear in the scene features, which
//! also gives the exact gradient with respect to those features.
//!
//! The regression loss is the smoothed L1 distance between `A v + c` and the
//! true offset from the ground-truth cell's center, averaged over steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridSpec, BELIEF_SUM_TOL};
use crate::metrics::NLL_FLOOR;
use crate::types::{MultiFutureSample, SceneClassMap, SceneFeatures, Trajectory};

use super::transition::{check_features, rollout_from, Transitions};
use super::ModelParams;

/// A sparse probability distribution over cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftLabel(pub Vec<(CellIndex, f64)>);

impl SoftLabel {
    pub fn hard(cell: CellIndex) -> Self {
        SoftLabel(vec![(cell, 1.0)])
    }

    /// `lambda * a + (1 - lambda) * b`, merging equal cells.
    pub fn mix(a: &SoftLabel, b: &SoftLabel, lambda: f64) -> Self {
        let mut acc: BTreeMap<CellIndex, f64> = BTreeMap::new();
        for &(c, w) in &a.0 {
            *acc.entry(c).or_default() += lambda * w;
        }
        for &(c, w) in &b.0 {
            *acc.entry(c).or_default() += (1.0 - lambda) * w;
        }
        SoftLabel(acc.into_iter().filter(|&(_, w)| w != 0.0).collect())
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, w)| w).sum()
    }

    pub fn validate(&self, num_cells: usize) -> Result<()> {
        for &(c, w) in &self.0 {
            if c.0 >= num_cells {
                return Err(Error::IndexOutOfRange { index: c.0, len: num_cells });
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidDistribution(format!("weight {w} on cell {}", c.0)));
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > BELIEF_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("label mass {total}")));
        }
        Ok(())
    }

    pub fn dense(&self, num_cells: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_cells];
        for &(c, w) in &self.0 {
            v[c.0] += w;
        }
        v
    }

    pub fn argmax(&self) -> Option<CellIndex> {
        let mut best: Option<(CellIndex, f64)> = None;
        for &(c, w) in &self.0 {
            match best {
                Some((bc, bw)) if w < bw || (w == bw && c > bc) => {}
                _ => best = Some((c, w)),
            }
        }
        best.map(|(c, _)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    /// Last observed displacement, the input of the offset head.
    pub velocity: (f64, f64),
    /// Per future step: true location minus the true cell's center.
    pub offsets: Vec<(f64, f64)>,
}

/// One training target: where the chain starts, where it should go, and
/// optionally what offsets the fine head should produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub start: SoftLabel,
    pub labels: Vec<SoftLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionTarget>,
}

impl TrainExample {
    /// Hard labels from an observed history and one ground-truth future.
    pub fn from_trajectories(obs: &Trajectory, future: &Trajectory, grid: &GridSpec) -> Result<Self> {
        if obs.is_empty() || future.is_empty() {
            return Err(Error::Empty("observation or future".into()));
        }
        let start = grid.cell_of(obs.last().xy())?;
        let mut labels = Vec::with_capacity(future.len());
        let mut offsets = Vec::with_capacity(future.len());
        for p in &future.points {
            let cell = grid.cell_of(p.xy())?;
            labels.push(SoftLabel::hard(cell));
            offsets.push(grid.offset_target(p.xy(), cell)?);
        }
        Ok(TrainExample {
            start: SoftLabel::hard(start),
            labels,
            regression: Some(RegressionTarget {
                velocity: obs.last_velocity(),
                offsets,
            }),
        })
    }

    pub fn validate(&self, num_cells: usize) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Empty("label sequence".into()));
        }
        self.start.validate(num_cells)?;
        for l in &self.labels {
            l.validate(num_cells)?;
        }
        if let Some(reg) = &self.regression {
            if reg.offsets.len() != self.labels.len() {
                return Err(Error::LengthMismatch("regression targets vs labels".into()));
            }
        }
        Ok(())
    }
}

/// Examples sharing one scene, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct SceneBatch<'a> {
    pub features: &'a SceneFeatures,
    pub examples: &'a [TrainExample],
}

/// Owned training data grouped by scene, in a deterministic order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSet {
    pub scenes: Vec<(SceneFeatures, Vec<TrainExample>)>,
}

impl TrainSet {
    /// One example per (sample, future) pair, grouped by `scene_ref` in sorted
    /// order.
    pub fn from_samples(
        samples: &[MultiFutureSample],
        scenes: &BTreeMap<String, SceneClassMap>,
        grid: &GridSpec,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<&str, Vec<TrainExample>> = BTreeMap::new();
        for s in samples {
            let scene = scenes
                .get(&s.scene_ref)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {}", s.scene_ref)))?;
            scene.check_grid(grid)?;
            for f in &s.futures {
                grouped
                    .entry(s.scene_ref.as_str())
                    .or_default()
                    .push(TrainExample::from_trajectories(&s.observation, f, grid)?);
            }
        }
        Ok(TrainSet {
            scenes: grouped
                .into_iter()
                .map(|(name, ex)| (scenes[name].to_features(), ex))
                .collect(),
        })
    }

    pub fn batches(&self) -> Vec<SceneBatch<'_>> {
        self.scenes
            .iter()
            .map(|(features, examples)| SceneBatch { features, examples })
            .collect()
    }

    pub fn num_examples(&self) -> usize {
        self.scenes.iter().map(|(_, e)| e.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the regression loss.
    pub lambda_reg: f64,
    /// L2 weight decay on all parameters.
    pub weight_decay: f64,
    /// Break point of the smoothed L1 loss, in scene units.
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_reg: 0.1,
            weight_decay: 0.0,
            smooth_l1_beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub kernel: Vec<f64>,
    pub scene_bias: Vec<f64>,
    pub offset_a: [[f64; 2]; 2],
    pub offset_c: [f64; 2],
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            kernel: vec![0.0; params.kernel.len()],
            scene_bias: vec![0.0; params.scene_bias.len()],
            offset_a: [[0.0; 2]; 2],
            offset_c: [0.0; 2],
        }
    }

    /// Same layout as [`ModelParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.kernel.clone();
        v.extend_from_slice(&self.scene_bias);
        v.extend(self.offset_a.iter().flatten());
        v.extend_from_slice(&self.offset_c);
        v
    }

    fn scale(&mut self, s: f64) {
        self.kernel.iter_mut().for_each(|g| *g *= s);
        self.scene_bias.iter_mut().for_each(|g| *g *= s);
        self.offset_a.iter_mut().flatten().for_each(|g| *g *= s);
        self.offset_c.iter_mut().for_each(|g| *g *= s);
    }

    fn add_decay(&mut self, params: &ModelParams, weight_decay: f64) -> f64 {
        if weight_decay == 0.0 {
            return 0.0;
        }
        let theta = params.to_flat();
        let mut flat = self.to_flat();
        for (g, p) in flat.iter_mut().zip(&theta) {
            *g += 2.0 * weight_decay * p;
        }
        let nk = self.kernel.len();
        let ns = self.scene_bias.len();
        self.kernel.copy_from_slice(&flat[..nk]);
        self.scene_bias.copy_from_slice(&flat[nk..nk + ns]);
        let r = &flat[nk + ns..];
        self.offset_a = [[r[0], r[1]], [r[2], r[3]]];
        self.offset_c = [r[4], r[5]];
        weight_decay * theta.iter().map(|p| p * p).sum::<f64>()
    }
}

/// Smoothed L1 on one coordinate difference; returns `(value, derivative)`.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

/// Classification loss of one example; with `slot_grad`, also accumulates
/// `dL/dP` for every transition slot.
fn cls_example(trans: &Transitions, ex: &TrainExample, slot_grad: Option<&mut [f64]>) -> f64 {
    let n = trans.num_cells();
    let steps = ex.labels.len();
    let inv_t = 1.0 / steps as f64;
    let start = ex.start.dense(n);
    let beliefs = rollout_from(&start, trans, steps);

    let mut loss = 0.0;
    for (label, belief) in ex.labels.iter().zip(&beliefs) {
        for &(c, w) in &label.0 {
            loss -= w * belief[c.0].max(NLL_FLOOR).ln();
        }
    }
    loss *= inv_t;

    let Some(slot_grad) = slot_grad else {
        return loss;
    };

    let mut adjoint = vec![0.0; n];
    for t in (0..steps).rev() {
        let mut a = if t + 1 < steps {
            (0..n)
                .map(|j| {
                    trans
                        .row(j)
                        .map(|s| trans.prob[s] * adjoint[trans.dest[s]])
                        .sum()
                })
                .collect()
        } else {
            vec![0.0; n]
        };
        for &(c, w) in &ex.labels[t].0 {
            let p = beliefs[t][c.0];
            // the floored branch is constant
            if p > NLL_FLOOR {
                a[c.0] -= w * inv_t / p;
            }
        }
        let prev = if t == 0 { &start } else { &beliefs[t - 1] };
        for (j, &cj) in prev.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            for s in trans.row(j) {
                slot_grad[s] += cj * a[trans.dest[s]];
            }
        }
        adjoint = a;
    }
    loss
}

/// Pushes `dL/dP` through each row's softmax, giving `dL/dz` per slot, and
/// reduces it to the kernel and the per-cell bias.
fn softmax_backward(trans: &Transitions, slot_grad: &[f64], kernel_grad: &mut [f64], cell_bias_grad: &mut [f64]) {
    for j in 0..trans.num_cells() {
        let row = trans.row(j);
        let inner: f64 = row.clone().map(|s| trans.prob[s] * slot_grad[s]).sum();
        for s in row {
            let dz = trans.prob[s] * (slot_grad[s] - inner);
            kernel_grad[trans.mv[s]] += dz;
            cell_bias_grad[trans.dest[s]] += dz;
        }
    }
}

fn reg_example(params: &ModelParams, reg: &RegressionTarget, beta: f64, grads: Option<&mut Gradients>) -> f64 {
    let steps = reg.offsets.len();
    if steps == 0 {
        return 0.0;
    }
    let inv_t = 1.0 / steps as f64;
    let o = params.offset_for(reg.velocity);
    let mut loss = 0.0;
    let mut d_o = [0.0; 2];
    for &(tx, ty) in &reg.offsets {
        let (lx, gx) = smooth_l1(tx - o.0, beta);
        let (ly, gy) = smooth_l1(ty - o.1, beta);
        loss += lx + ly;
        d_o[0] -= gx;
        d_o[1] -= gy;
    }
    if let Some(g) = grads {
        let v = [reg.velocity.0, reg.velocity.1];
        for r in 0..2 {
            let d = d_o[r] * inv_t;
            g.offset_c[r] += d;
            for s in 0..2 {
                g.offset_a[r][s] += d * v[s];
            }
        }
    }
    loss * inv_t
}

fn accumulate(batches: &[SceneBatch<'_>], params: &ModelParams, cfg: &LossConfig) -> Result<(LossBreakdown, Gradients)> {
    params.check_finite()?;
    let n = params.grid.num_cells();
    let mut grads = Gradients::zeros_like(params);
    let mut out = LossBreakdown::default();
    for batch in batches {
        check_features(params, batch.features)?;
        let trans = Transitions::new(params, batch.features)?;
        let mut slot_grad = vec![0.0; trans.prob.len()];
        for ex in batch.examples {
            ex.validate(n)?;
            out.cls += cls_example(&trans, ex, Some(&mut slot_grad));
            if let Some(reg) = &ex.regression {
                let mut g = Gradients::zeros_like(params);
                out.reg += reg_example(params, reg, cfg.smooth_l1_beta, Some(&mut g));
                for r in 0..2 {
                    grads.offset_c[r] += cfg.lambda_reg * g.offset_c[r];
                    for s in 0..2 {
                        grads.offset_a[r][s] += cfg.lambda_reg * g.offset_a[r][s];
                    }
                }
            }
        }
        let mut cell_bias_grad = vec![0.0; n];
        softmax_backward(&trans, &slot_grad, &mut grads.kernel, &mut cell_bias_grad);
        let f = batch.features;
        for (i, db) in cell_bias_grad.iter().enumerate() {
            if *db != 0.0 {
                for (k, fv) in f.cell(i).iter().enumerate() {
                    grads.scene_bias[k] += db * fv;
                }
            }
        }
    }
    out.total = out.cls + cfg.lambda_reg * out.reg;
    Ok((out, grads))
}

/// `L = sum_batch (L_cls + lambda_reg L_reg) + weight_decay |theta|^2` and its
/// exact gradient with respect to every parameter.
pub fn loss_and_gradients(
    batches: &[SceneBatch<'_>],
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let (mut loss, mut grads) = accumulate(batches, params, cfg)?;
    loss.decay = grads.add_decay(params, cfg.weight_decay);
    loss.total += loss.decay;
    Ok((loss, grads))
}

/// As [`loss_and_gradients`], but the data terms are averaged over examples
/// instead of summed.
pub fn mean_loss_and_gradients(
    batches: &[SceneBatch<'_>],
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let count: usize = batches.iter().map(|b| b.examples.len()).sum();
    if count == 0 {
        return Err(Error::Empty("training batch".into()));
    }
    let (mut loss, mut grads) = accumulate(batches, params, cfg)?;
    let s = 1.0 / count as f64;
    grads.scale(s);
    loss.cls *= s;
    loss.reg *= s;
    loss.total *= s;
    loss.decay = grads.add_decay(params, cfg.weight_decay);
    loss.total += loss.decay;
    Ok((loss, grads))
}

/// Classification loss of one example and its gradient with respect to the
/// scene features (`cells x channels`, cell-major).
pub fn cls_loss_and_feature_grad(
    params: &ModelParams,
    features: &SceneFeatures,
    example: &TrainExample,
) -> Result<(f64, Vec<f64>)> {
    example.validate(params.grid.num_cells())?;
    let trans = Transitions::new(params, features)?;
    let mut slot_grad = vec![0.0; trans.prob.len()];
    let loss = cls_example(&trans, example, Some(&mut slot_grad));
    let mut kernel_grad = vec![0.0; params.kernel.len()];
    let mut cell_bias_grad = vec![0.0; params.grid.num_cells()];
    softmax_backward(&trans, &slot_grad, &mut kernel_grad, &mut cell_bias_grad);
    let k = features.channels;
    let mut out = vec![0.0; features.values.len()];
    for (i, db) in cell_bias_grad.iter().enumerate() {
        for (c, b) in params.scene_bias.iter().enumerate() {
            out[i * k + c] = db * b;
        }
    }
    Ok((loss, out))
}

/// Classification loss of one example, without gradients.
pub fn cls_loss(params: &ModelParams, features: &SceneFeatures, example: &TrainExample) -> Result<f64> {
    example.validate(params.grid.num_cells())?;
    let trans = Transitions::new(params, features)?;
    Ok(cls_example(&trans, example, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_step_example(from: CellIndex, to: CellIndex) -> TrainExample {
        TrainExample {
            start: SoftLabel::hard(from),
            labels: vec![SoftLabel::hard(to)],
            regression: None,
        }
    }

    #[test]
    fn zero_params_uniform_cross_entropy() {
        let grid = GridSpec::unit_cells(5, 5).unwrap();
        let params = ModelParams::zeros(grid, 1, 2).unwrap();
        let scene = SceneClassMap::uniform(5, 5, 2, 0).unwrap().to_features();
        let ex = one_step_example(CellIndex(12), CellIndex(13));
        let batch = [SceneBatch { features: &scene, examples: std::slice::from_ref(&ex) }];
        let (loss, _) = loss_and_gradients(&batch, &params, &LossConfig::default()).unwrap();
        assert!((loss.cls - 9f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn exact_offset_has_zero_regression_loss() {
        let grid = GridSpec::unit_cells(3, 3).unwrap();
        let mut params = ModelParams::zeros(grid, 1, 1).unwrap();
        params.offset_c = [0.2, -0.1];
        let reg = RegressionTarget {
            velocity: (1.0, 0.0),
            offsets: vec![(0.2, -0.1), (0.2, -0.1)],
        };
        assert_eq!(reg_example(&params, &reg, 1.0, None), 0.0);
    }

    #[test]
    fn invalid_soft_label_is_rejected() {
        let grid = GridSpec::unit_cells(3, 3).unwrap();
        let params = ModelParams::zeros(grid, 1, 1).unwrap();
        let scene = SceneClassMap::uniform(3, 3, 1, 0).unwrap().to_features();
        let ex = TrainExample {
            start: SoftLabel::hard(CellIndex(4)),
            labels: vec![SoftLabel(vec![(CellIndex(4), 0.5), (CellIndex(5), 0.4)])],
            regression: None,
        };
        let batch = [SceneBatch { features: &scene, examples: std::slice::from_ref(&ex) }];
        assert!(matches!(
            loss_and_gradients(&batch, &params, &LossConfig::default()),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn soft_label_mixing() {
        let a = SoftLabel::hard(CellIndex(1));
        let b = SoftLabel::hard(CellIndex(2));
        let m = SoftLabel::mix(&a, &b, 0.5);
        assert_eq!(m.0, vec![(CellIndex(1), 0.5), (CellIndex(2), 0.5)]);
        assert_eq!(SoftLabel::mix(&a, &a, 0.3).0, vec![(CellIndex(1), 1.0)]);
        assert_eq!(SoftLabel::mix(&a, &b, 1.0).0, vec![(CellIndex(1), 1.0)]);
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.5, 1.0), (0.125, 0.5));
        assert_eq!(smooth_l1(-2.0, 1.0), (1.5, -1.0));
        assert_eq!(smooth_l1(0.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = GridSpec::unit_cells(4, 4).unwrap();
        let mut params = ModelParams::zeros(grid, 1, 3).unwrap();
        for k in params.kernel.iter_mut() {
            *k = rng.random_range(-1.0..1.0);
        }
        for b in params.scene_bias.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        let mut features = SceneFeatures::zeros(16, 3);
        for v in features.values.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let ex = TrainExample {
            start: SoftLabel::hard(grid.index(1, 1)),
            labels: vec![
                SoftLabel::mix(&SoftLabel::hard(grid.index(1, 2)), &SoftLabel::hard(grid.index(2, 2)), 0.3),
                SoftLabel::hard(grid.index(2, 2)),
            ],
            regression: None,
        };
        let (_, grad) = cls_loss_and_feature_grad(&params, &features, &ex).unwrap();
        let h = 1e-6;
        for idx in 0..features.values.len() {
            let mut fp = features.clone();
            fp.values[idx] += h;
            let mut fm = features.clone();
            fm.values[idx] -= h;
            let num = (cls_loss(&params, &fp, &ex).unwrap() - cls_loss(&params, &fm, &ex).unwrap()) / (2.0 * h);
            assert!((num - grad[idx]).abs() < 1e-7, "feature {idx}: {num} vs {}", grad[idx]);
        }
    }
}
