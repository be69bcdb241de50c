//! End-to-end experiment steps over on-disk datasets: train, predict,
//! evaluate. The CLI is a thin layer over these.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::baselines::{constant_velocity, linear_extrapolate, nearest_neighbor, TrainBank};
use crate::error::{Error, Result};
use crate::grid::CellIndex;
use crate::gridnet::{
    decode_cells, diverse_beam_search, rollout_beliefs, train, BeamConfig, Checkpoint, ModelParams, TrainConfig,
    TrainExample, TrainSet, Transitions,
};
use crate::io::{DatasetView, PredictionFile};
use crate::metrics::{
    ade, beliefs_from_samples, fde, grid_acc, min_ade_k, min_ade_multi, min_asd, min_fde_k, min_fde_multi, min_fsd,
    nll_grid, MetricReport,
};
use crate::simaug::{train_simaug, AugConfig, MultiViewItem, ViewSample};
use crate::types::{MultiFutureSample, PredictionSet, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gridnet,
    Cv,
    Linear,
    Nn,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gridnet" => Ok(ModelKind::Gridnet),
            "cv" => Ok(ModelKind::Cv),
            "linear" => Ok(ModelKind::Linear),
            "nn" => Ok(ModelKind::Nn),
            _ => Err(Error::InvalidArgument(format!("unknown model {s} (gridnet, cv, linear, nn)"))),
        }
    }
}

pub enum Predictor<'a> {
    Gridnet(&'a ModelParams),
    ConstantVelocity,
    Linear,
    NearestNeighbor(&'a TrainBank),
}

fn num_classes(view: &DatasetView) -> Result<usize> {
    let mut it = view.scenes.values().map(|s| s.num_classes());
    let k = it.next().ok_or_else(|| Error::Empty(format!("scenes of {}", view.view_id)))?;
    if it.any(|c| c != k) {
        return Err(Error::DimensionMismatch("scenes disagree on the number of classes".into()));
    }
    Ok(k)
}

pub fn train_set(view: &DatasetView) -> Result<TrainSet> {
    TrainSet::from_samples(&view.samples, &view.scenes, &view.meta.grid)
}

pub fn train_gridnet(view: &DatasetView, cfg: &TrainConfig) -> Result<Checkpoint> {
    let out = train(&train_set(view)?, view.meta.grid, num_classes(view)?, cfg)?;
    Ok(Checkpoint {
        params: out.params,
        train_config: cfg.clone(),
        loss_trace: out.loss_trace,
    })
}

/// One item per (sample, future) of the anchor view, with the same sample
/// and future taken from every view. Samples are matched by id.
pub fn simaug_items(views: &[DatasetView], anchor: usize) -> Result<Vec<MultiViewItem>> {
    let a = views.get(anchor).ok_or(Error::IndexOutOfRange { index: anchor, len: views.len() })?;
    let grid = a.meta.grid;
    let by_id: Vec<BTreeMap<&str, &MultiFutureSample>> = views
        .iter()
        .map(|v| v.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect())
        .collect();
    let mut items = Vec::new();
    for s in &a.samples {
        for j in 0..s.futures.len() {
            let mut vs = Vec::with_capacity(views.len());
            for (v, index) in views.iter().zip(&by_id) {
                v.meta.grid.validate()?;
                if v.meta.grid != grid {
                    return Err(Error::DimensionMismatch(format!("{} uses a different grid", v.view_id)));
                }
                let vs_sample = index
                    .get(s.sample_id.as_str())
                    .ok_or_else(|| Error::InvalidArgument(format!("{} lacks sample {}", v.view_id, s.sample_id)))?;
                let future = vs_sample
                    .futures
                    .get(j)
                    .ok_or_else(|| Error::LengthMismatch(format!("{} sample {} futures", v.view_id, s.sample_id)))?;
                let scene = v
                    .scenes
                    .get(&vs_sample.scene_ref)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {}", vs_sample.scene_ref)))?;
                vs.push(ViewSample {
                    view_id: v.view_id.clone(),
                    features: scene.to_features(),
                    example: TrainExample::from_trajectories(&vs_sample.observation, future, &grid)?,
                });
            }
            items.push(MultiViewItem { anchor, views: vs });
        }
    }
    Ok(items)
}

pub fn train_gridnet_simaug(
    views: &[DatasetView],
    anchor: usize,
    cfg: &TrainConfig,
    aug: &AugConfig,
) -> Result<Checkpoint> {
    let items = simaug_items(views, anchor)?;
    let a = &views[anchor];
    let out = train_simaug(&items, a.meta.grid, num_classes(a)?, cfg, aug)?;
    Ok(Checkpoint {
        params: out.params,
        train_config: cfg.clone(),
        loss_trace: out.loss_trace,
    })
}

/// Every (observation, future) pair of a view, for nearest-neighbour lookup.
pub fn build_bank(view: &DatasetView) -> Result<TrainBank> {
    let mut bank = TrainBank::new();
    for s in &view.samples {
        for f in &s.futures {
            bank.push(&s.observation, f)?;
        }
    }
    Ok(bank)
}

/// Predicts `view.meta.horizon.pred` steps for every sample. Gridnet returns
/// `beam.k` futures with its chain beliefs; the baselines return one future
/// and histogram beliefs.
pub fn predict(view: &DatasetView, predictor: &Predictor<'_>, beam: &BeamConfig) -> Result<PredictionFile> {
    let grid = view.meta.grid;
    let steps = view.meta.horizon.pred;
    let mut out = BTreeMap::new();
    for s in &view.samples {
        let set = match predictor {
            Predictor::Gridnet(params) => {
                let scene = view
                    .scenes
                    .get(&s.scene_ref)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {}", s.scene_ref)))?;
                let mut set = diverse_beam_search(&s.observation, params, scene, steps, beam)?.set;
                let start = grid.cell_of(s.observation.last().xy())?;
                set.beliefs = Some(rollout_beliefs(start, params, scene, steps)?);
                set
            }
            other => {
                let traj = match other {
                    Predictor::ConstantVelocity => constant_velocity(&s.observation, steps)?,
                    Predictor::Linear => linear_extrapolate(&s.observation, steps)?,
                    Predictor::NearestNeighbor(bank) => nearest_neighbor(&s.observation, bank, steps)?,
                    Predictor::Gridnet(_) => unreachable!(),
                };
                let mut set = PredictionSet::new(vec![traj])?;
                set.beliefs = Some(beliefs_from_samples(&set, &grid)?);
                set
            }
        };
        out.insert(s.sample_id.clone(), set);
    }
    Ok(PredictionFile { samples: out })
}

fn truncate(t: &Trajectory, n: usize) -> Trajectory {
    t.truncated(n.min(t.len()))
}

/// Metrics per sample, keyed by sample id:
///
/// * `ade`, `fde`: top-ranked prediction against the first future
/// * `min_ade_k`, `min_fde_k`: best of K against the first future
/// * `min_ade_multi`, `min_fde_multi`: best of K per future, averaged
/// * `grid_acc`: top-ranked prediction's cells against the first future's
/// * `nll`: first future's cells under the predicted beliefs
/// * `min_asd`, `min_fsd`: only when every sample has K >= 2
pub fn evaluate(view: &DatasetView, preds: &PredictionFile) -> Result<MetricReport> {
    let grid = view.meta.grid;
    let mut cols: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    let mut diverse = true;
    for s in &view.samples {
        let set = preds
            .samples
            .get(&s.sample_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no prediction for sample {}", s.sample_id)))?;
        let gt = s
            .futures
            .first()
            .ok_or_else(|| Error::Empty(format!("futures of {}", s.sample_id)))?;
        let n = gt.len();
        if set.horizon() < n {
            return Err(Error::LengthMismatch(format!(
                "sample {}: {} predicted steps for a {n}-step future",
                s.sample_id,
                set.horizon()
            )));
        }
        let trunc = PredictionSet::new(set.trajectories.iter().map(|t| truncate(t, n)).collect())?;
        let top = &trunc.trajectories[0];
        let id = s.sample_id.clone();
        let mut put = |name: &'static str, v: f64| {
            cols.entry(name).or_default().insert(id.clone(), v);
        };
        put("ade", ade(top, gt)?);
        put("fde", fde(top, gt)?);
        put("min_ade_k", min_ade_k(&trunc, gt)?);
        put("min_fde_k", min_fde_k(&trunc, gt)?);
        put("min_ade_multi", min_ade_multi(set, &s.futures)?);
        put("min_fde_multi", min_fde_multi(set, &s.futures)?);
        let gt_cells: Vec<CellIndex> = gt.points.iter().map(|p| grid.cell_of(p.xy())).collect::<Result<_>>()?;
        let top_cells: Vec<CellIndex> = top.points.iter().map(|p| grid.cell_of(p.xy())).collect::<Result<_>>()?;
        put("grid_acc", grid_acc(&top_cells, &gt_cells)?);
        if let Some(b) = &set.beliefs {
            if b.len() < n {
                return Err(Error::LengthMismatch(format!("sample {}: too few belief maps", s.sample_id)));
            }
            put("nll", nll_grid(&b[..n], &gt_cells)?);
        }
        if set.k() >= 2 {
            put("min_asd", min_asd(set)?);
            put("min_fsd", min_fsd(set)?);
        } else {
            diverse = false;
        }
    }
    if !diverse {
        cols.remove("min_asd");
        cols.remove("min_fsd");
    }
    let mut report = MetricReport::default();
    for (name, per_sample) in cols {
        report.insert(name, per_sample);
    }
    Ok(report)
}

/// Greedy-decoded grid accuracy of a gridnet model on every sample's
/// first future, averaged over samples.
pub fn greedy_grid_acc(view: &DatasetView, params: &ModelParams) -> Result<f64> {
    let grid = view.meta.grid;
    let mut total = 0.0;
    let mut count = 0usize;
    for s in &view.samples {
        let scene = view
            .scenes
            .get(&s.scene_ref)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scene {}", s.scene_ref)))?;
        let Some(gt) = s.futures.first() else { continue };
        let trans = Transitions::from_scene(params, scene)?;
        let start = grid.cell_of(s.observation.last().xy())?;
        let (cells, _, _) = decode_cells(&trans, start, gt.len(), &BeamConfig::greedy())?;
        let gt_cells: Vec<CellIndex> = gt.points.iter().map(|p| grid.cell_of(p.xy())).collect::<Result<_>>()?;
        total += grid_acc(&cells[0], &gt_cells)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("evaluation samples".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::io::{read_view, write_scenario};
    use crate::scenario::{generate, ScenarioConfig};
    use crate::types::Horizon;

    fn dataset(n_views: usize) -> (tempfile::TempDir, Vec<DatasetView>) {
        let cfg = ScenarioConfig {
            grid: GridSpec::unit_cells(12, 14).unwrap(),
            horizon: Horizon { obs: 3, pred: 4 },
            n_agents: 6,
            destinations_per_agent: 2,
            futures_per_agent: 2,
            walkways: true,
            n_views,
            ..ScenarioConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        write_scenario(dir.path(), &generate(&cfg).unwrap()).unwrap();
        let views = (0..n_views)
            .map(|k| read_view(dir.path(), &format!("view_{k}")).unwrap())
            .collect();
        (dir, views)
    }

    #[test]
    fn ground_truth_predictions_score_zero() {
        let (_d, views) = dataset(1);
        let v = &views[0];
        let preds = PredictionFile {
            samples: v
                .samples
                .iter()
                .map(|s| (s.sample_id.clone(), PredictionSet::new(s.futures.clone()).unwrap()))
                .collect(),
        };
        let r = evaluate(v, &preds).unwrap();
        for m in ["ade", "fde", "min_ade_k", "min_ade_multi", "min_fde_multi"] {
            assert_eq!(r.mean(m), Some(0.0), "{m}");
        }
        assert_eq!(r.mean("grid_acc"), Some(1.0));
        assert!(r.mean("min_asd").is_some());
        assert!(r.mean("nll").is_none());
    }

    #[test]
    fn every_model_predicts_and_evaluates() {
        let (_d, views) = dataset(1);
        let v = &views[0];
        let ckpt = train_gridnet(
            v,
            &TrainConfig {
                epochs: 20,
                radius: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let bank = build_bank(v).unwrap();
        let beam = BeamConfig::new(2, 1.0);
        for p in [
            Predictor::Gridnet(&ckpt.params),
            Predictor::ConstantVelocity,
            Predictor::Linear,
            Predictor::NearestNeighbor(&bank),
        ] {
            let preds = predict(v, &p, &beam).unwrap();
            assert_eq!(preds.samples.len(), v.samples.len());
            let r = evaluate(v, &preds).unwrap();
            assert!(r.mean("nll").unwrap().is_finite());
        }
        let g = greedy_grid_acc(v, &ckpt.params).unwrap();
        assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn simaug_items_pair_views() {
        let (_d, views) = dataset(2);
        let items = simaug_items(&views, 0).unwrap();
        assert_eq!(items.len(), views[0].samples.len() * 2);
        assert!(items.iter().all(|it| it.views.len() == 2 && it.anchor == 0));
        let ck = train_gridnet_simaug(
            &views,
            0,
            &TrainConfig {
                epochs: 3,
                radius: 1,
                ..TrainConfig::default()
            },
            &AugConfig::default(),
        )
        .unwrap();
        assert_eq!(ck.loss_trace.len(), 3);
    }

    #[test]
    fn model_names() {
        assert_eq!("nn".parse::<ModelKind>().unwrap(), ModelKind::Nn);
        assert!("lstm".parse::<ModelKind>().is_err());
    }
}
