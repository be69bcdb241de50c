//! Displacement, multi-future, grid and diversity metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BeliefMap, CellIndex, GridSpec};
use crate::types::{PredictionSet, Trajectory};

/// Probability floor applied before taking logs in [`nll_grid`].
pub const NLL_FLOOR: f64 = 1e-12;

fn step_errors<'a>(pred: &'a Trajectory, gt: &'a Trajectory) -> Result<impl Iterator<Item = f64> + 'a> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "prediction has {} steps, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.points.iter().zip(&gt.points).map(|(p, g)| p.dist(g)))
}

/// Mean L2 error over all timesteps.
pub fn ade(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let n = gt.len() as f64;
    Ok(step_errors(pred, gt)?.sum::<f64>() / n)
}

/// L2 error at the final timestep.
pub fn fde(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    Ok(step_errors(pred, gt)?.last().unwrap_or(0.0))
}

fn min_over(preds: &PredictionSet, f: impl Fn(&Trajectory) -> Result<f64>) -> Result<f64> {
    if preds.trajectories.is_empty() {
        return Err(Error::Empty("prediction set".into()));
    }
    let mut best = f64::INFINITY;
    for p in &preds.trajectories {
        best = best.min(f(p)?);
    }
    Ok(best)
}

pub fn min_ade_k(preds: &PredictionSet, gt: &Trajectory) -> Result<f64> {
    min_over(preds, |p| ade(p, gt))
}

pub fn min_fde_k(preds: &PredictionSet, gt: &Trajectory) -> Result<f64> {
    min_over(preds, |p| fde(p, gt))
}

fn check_truncatable(preds: &PredictionSet, future: &Trajectory) -> Result<()> {
    if future.is_empty() || preds.horizon() < future.len() {
        return Err(Error::LengthMismatch(format!(
            "future of {} steps vs predictions of {}",
            future.len(),
            preds.horizon()
        )));
    }
    Ok(())
}

/// Multi-future minADE: for each ground-truth future, the best prediction
/// (truncated to that future's length), then the mean over futures.
pub fn min_ade_multi(preds: &PredictionSet, futures: &[Trajectory]) -> Result<f64> {
    multi(preds, futures, ade)
}

/// Multi-future minFDE, measured at each future's own final step.
pub fn min_fde_multi(preds: &PredictionSet, futures: &[Trajectory]) -> Result<f64> {
    multi(preds, futures, fde)
}

fn multi(
    preds: &PredictionSet,
    futures: &[Trajectory],
    dist: fn(&Trajectory, &Trajectory) -> Result<f64>,
) -> Result<f64> {
    if futures.is_empty() {
        return Err(Error::Empty("ground-truth futures".into()));
    }
    let mut total = 0.0;
    for fut in futures {
        check_truncatable(preds, fut)?;
        total += min_over(preds, |p| dist(&p.truncated(fut.len()), fut))?;
    }
    Ok(total / futures.len() as f64)
}

/// Negative log-likelihood of the true cells under per-step beliefs.
pub fn nll_grid(beliefs: &[BeliefMap], gt_cells: &[CellIndex]) -> Result<f64> {
    if beliefs.len() != gt_cells.len() || beliefs.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} beliefs vs {} cells",
            beliefs.len(),
            gt_cells.len()
        )));
    }
    let mut acc = 0.0;
    for (b, c) in beliefs.iter().zip(gt_cells) {
        if c.0 >= b.len() {
            return Err(Error::IndexOutOfRange { index: c.0, len: b.len() });
        }
        acc += b.prob(*c).max(NLL_FLOOR).ln();
    }
    Ok(-acc / beliefs.len() as f64)
}

/// Fraction of timesteps whose predicted cell equals the true one.
pub fn grid_acc(pred_cells: &[CellIndex], gt_cells: &[CellIndex]) -> Result<f64> {
    if pred_cells.len() != gt_cells.len() || gt_cells.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted cells vs {} true cells",
            pred_cells.len(),
            gt_cells.len()
        )));
    }
    let hits = pred_cells.iter().zip(gt_cells).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / gt_cells.len() as f64)
}

/// Diversity: each prediction's average distance to its closest other
/// prediction, averaged over predictions.
pub fn min_asd(preds: &PredictionSet) -> Result<f64> {
    self_distance(preds, ade)
}

/// As [`min_asd`] but measured at the final step.
pub fn min_fsd(preds: &PredictionSet) -> Result<f64> {
    self_distance(preds, fde)
}

fn self_distance(preds: &PredictionSet, dist: fn(&Trajectory, &Trajectory) -> Result<f64>) -> Result<f64> {
    let k = preds.k();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("self distance needs K >= 2, got {k}")));
    }
    let mut total = 0.0;
    for (a, pa) in preds.trajectories.iter().enumerate() {
        let mut nearest = f64::INFINITY;
        for (b, pb) in preds.trajectories.iter().enumerate() {
            if a != b {
                nearest = nearest.min(dist(pa, pb)?);
            }
        }
        total += nearest;
    }
    Ok(total / k as f64)
}

/// Converts a set of sampled trajectories into per-step beliefs by
/// histogramming cells with add-one smoothing.
pub fn beliefs_from_samples(preds: &PredictionSet, grid: &GridSpec) -> Result<Vec<BeliefMap>> {
    let n = grid.num_cells();
    let total = (preds.k() + n) as f64;
    let mut out = Vec::with_capacity(preds.horizon());
    for t in 0..preds.horizon() {
        let mut counts = vec![1.0; n];
        for traj in &preds.trajectories {
            counts[grid.cell_of(traj.points[t].xy())?.0] += 1.0;
        }
        out.push(BeliefMap::from_normalized(counts.into_iter().map(|c| c / total).collect()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub per_sample: BTreeMap<String, f64>,
}

impl MetricSummary {
    pub fn from_values(per_sample: BTreeMap<String, f64>) -> Self {
        let mean = if per_sample.is_empty() {
            0.0
        } else {
            per_sample.values().sum::<f64>() / per_sample.len() as f64
        };
        MetricSummary { mean, per_sample }
    }
}

/// Metric name -> summary. Samples are keyed (and therefore aggregated) in
/// sorted `sample_id` order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricReport {
    pub fn insert(&mut self, name: &str, per_sample: BTreeMap<String, f64>) {
        self.metrics
            .insert(name.to_string(), MetricSummary::from_values(per_sample));
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(xy: &[(f64, f64)]) -> Trajectory {
        Trajectory::from_xy("a", 0, xy).unwrap()
    }

    fn set(ts: Vec<Trajectory>) -> PredictionSet {
        PredictionSet::new(ts).unwrap()
    }

    #[test]
    fn ade_fde_examples() {
        let g = traj(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(ade(&g, &g).unwrap(), 0.0);
        assert_eq!(fde(&g, &g).unwrap(), 0.0);
        assert_eq!(ade(&traj(&[(0.0, 0.0)]), &traj(&[(3.0, 4.0)])).unwrap(), 5.0);
        let first_off = traj(&[(3.0, 4.0), (1.0, 1.0)]);
        assert_eq!(ade(&first_off, &g).unwrap(), 2.5);
        assert_eq!(fde(&first_off, &g).unwrap(), 0.0);
        let last_off = traj(&[(0.0, 0.0), (4.0, 5.0)]);
        assert_eq!(fde(&last_off, &g).unwrap(), 5.0);
        assert!(ade(&traj(&[(0.0, 0.0)]), &g).is_err());
    }

    #[test]
    fn min_k_examples() {
        let gt = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        let p = traj(&[(0.0, 1.0), (1.0, 2.0)]);
        let dup = set(vec![p.clone(), p.clone(), p.clone()]);
        assert_eq!(min_ade_k(&dup, &gt).unwrap(), ade(&p, &gt).unwrap());
        let with_gt = set(vec![p.clone(), gt.clone()]);
        assert_eq!(min_ade_k(&with_gt, &gt).unwrap(), 0.0);
        assert_eq!(min_fde_k(&with_gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn multi_future_truncates_to_each_future() {
        let long = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let short = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        let preds = set(vec![long.clone()]);
        assert_eq!(min_ade_multi(&preds, &[long.clone(), short.clone()]).unwrap(), 0.0);
        assert_eq!(min_fde_multi(&preds, &[short]).unwrap(), 0.0);
        assert!(min_ade_multi(&preds, &[]).is_err());
        let too_long = traj(&[(0.0, 0.0); 4]);
        assert!(min_ade_multi(&preds, &[too_long]).is_err());
    }

    #[test]
    fn multi_with_one_future_equals_min_k() {
        let gt = traj(&[(0.0, 0.0), (1.0, 0.5)]);
        let preds = set(vec![traj(&[(0.3, 0.0), (1.0, 2.0)]), traj(&[(1.0, 1.0), (0.0, 0.0)])]);
        assert_eq!(
            min_ade_multi(&preds, std::slice::from_ref(&gt)).unwrap(),
            min_ade_k(&preds, &gt).unwrap()
        );
        assert_eq!(
            min_fde_multi(&preds, std::slice::from_ref(&gt)).unwrap(),
            min_fde_k(&preds, &gt).unwrap()
        );
    }

    #[test]
    fn nll_examples() {
        let g = GridSpec::unit_cells(18, 36).unwrap();
        let exact = g.one_hot(CellIndex(5)).unwrap();
        assert_eq!(nll_grid(&[exact.clone(), exact], &[CellIndex(5), CellIndex(5)]).unwrap(), 0.0);
        let uniform = BeliefMap::uniform(648);
        let v = nll_grid(&[uniform], &[CellIndex(17)]).unwrap();
        assert!((v - 648f64.ln()).abs() < 1e-12);
        assert!((v - 6.4739).abs() < 1e-4);
        // zero mass hits the floor instead of -inf
        let miss = g.one_hot(CellIndex(0)).unwrap();
        assert!((nll_grid(&[miss], &[CellIndex(1)]).unwrap() + NLL_FLOOR.ln()).abs() < 1e-12);
        assert!(nll_grid(&[], &[CellIndex(0)]).is_err());
    }

    #[test]
    fn nll_mixed_case_direct_formula() {
        let b1 = BeliefMap::from_probs(vec![0.5, 0.25, 0.25]).unwrap();
        let b2 = BeliefMap::from_probs(vec![0.1, 0.2, 0.7]).unwrap();
        let v = nll_grid(&[b1, b2], &[CellIndex(1), CellIndex(2)]).unwrap();
        let expect = -(0.25f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((v - expect).abs() < 1e-15);
    }

    #[test]
    fn grid_acc_examples() {
        let c = |v: &[usize]| v.iter().map(|&i| CellIndex(i)).collect::<Vec<_>>();
        assert_eq!(grid_acc(&c(&[1, 2, 3]), &c(&[1, 2, 3])).unwrap(), 1.0);
        assert_eq!(grid_acc(&c(&[1, 2, 3]), &c(&[4, 5, 6])).unwrap(), 0.0);
        assert_eq!(grid_acc(&c(&[1, 2, 3, 4]), &c(&[1, 2, 3, 0])).unwrap(), 0.75);
        assert!(grid_acc(&c(&[1]), &c(&[1, 2])).is_err());
    }

    #[test]
    fn self_distance_examples() {
        let a = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let b = traj(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]);
        assert_eq!(min_asd(&set(vec![a.clone(), a.clone()])).unwrap(), 0.0);
        assert_eq!(min_asd(&set(vec![a.clone(), b.clone()])).unwrap(), 1.0);
        assert_eq!(min_fsd(&set(vec![a.clone(), b])).unwrap(), 1.0);
        assert!(min_asd(&set(vec![a])).is_err());
    }

    #[test]
    fn histogram_beliefs_are_normalized() {
        let g = GridSpec::unit_cells(2, 2).unwrap();
        let preds = set(vec![traj(&[(0.5, 0.5)]), traj(&[(0.5, 0.5)]), traj(&[(1.5, 1.5)])]);
        let b = beliefs_from_samples(&preds, &g).unwrap();
        assert_eq!(b[0].values(), &[3.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0]);
    }

    #[test]
    fn report_mean_is_arithmetic_mean() {
        let mut r = MetricReport::default();
        r.insert("ade", [("b".to_string(), 1.0), ("a".to_string(), 2.0)].into());
        assert_eq!(r.mean("ade"), Some(1.5));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"ade":{"mean":1.5,"per_sample":{"a":2.0,"b":1.0}}}"#);
    }
}
