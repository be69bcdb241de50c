use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellIndex;
use crate::types::{PredictionSet, SceneClassMap, TrajPoint, Trajectory};

use super::transition::Transitions;
use super::{predict_offsets, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    /// Number of futures returned.
    pub k: usize,
    /// Diversity penalty per higher-ranked beam already on the same cell.
    pub gamma0: f64,
    /// Beams kept per step; defaults to `k`. Widening the beam trades speed
    /// for search exactness, `k = width = 1` is greedy decoding.
    #[serde(default)]
    pub width: Option<usize>,
}

impl BeamConfig {
    pub fn new(k: usize, gamma0: f64) -> Self {
        BeamConfig { k, gamma0, width: None }
    }

    pub fn greedy() -> Self {
        BeamConfig::new(1, 0.0)
    }

    pub fn beam_width(&self) -> usize {
        self.width.unwrap_or(self.k).max(self.k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutput {
    /// Cell sequences, best first.
    pub cells: Vec<Vec<CellIndex>>,
    /// Accumulated log-probability of each sequence, without the penalty.
    pub log_probs: Vec<f64>,
    pub set: PredictionSet,
    /// Fewer than `k` sequences were reachable; all of them were returned.
    pub exhausted: bool,
}

#[derive(Debug, Clone)]
struct Beam {
    cells: Vec<CellIndex>,
    log_prob: f64,
}

/// Cell-level diverse beam search from `start`.
///
/// Each step scores every extension `(beam, cell)` by the beam's
/// log-probability plus `log p(cell | beam's last cell)`, then fills the new
/// beam one slot at a time, charging `gamma0` for every already selected
/// (higher-ranked) extension that ended on the same cell. Ties go to the
/// lower beam index, then the lower cell index.
pub fn decode_cells(trans: &Transitions, start: CellIndex, steps: usize, cfg: &BeamConfig) -> Result<(Vec<Vec<CellIndex>>, Vec<f64>, bool)> {
    if cfg.k < 1 {
        return Err(Error::InvalidArgument("beam search needs K >= 1".into()));
    }
    if !(cfg.gamma0 >= 0.0) {
        return Err(Error::InvalidArgument("diversity penalty must be non-negative".into()));
    }
    if steps < 1 {
        return Err(Error::InvalidArgument("beam search needs at least one step".into()));
    }
    trans.grid().check(start)?;
    let width = cfg.beam_width();
    let mut beams = vec![Beam {
        cells: Vec::with_capacity(steps),
        log_prob: 0.0,
    }];
    let mut penalty = vec![0usize; trans.num_cells()];
    for _ in 0..steps {
        // (beam index, cell, accumulated log-prob)
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for (b, beam) in beams.iter().enumerate() {
            let last = beam.cells.last().copied().unwrap_or(start);
            for s in trans.row(last.0) {
                cands.push((b, trans.dest[s], beam.log_prob + trans.log_prob[s]));
            }
        }
        let take = width.min(cands.len());
        let mut chosen = vec![false; cands.len()];
        let mut next = Vec::with_capacity(take);
        penalty.iter_mut().for_each(|p| *p = 0);
        for _ in 0..take {
            let mut best: Option<(usize, f64)> = None;
            for (idx, &(_, cell, lp)) in cands.iter().enumerate() {
                if chosen[idx] {
                    continue;
                }
                let score = lp - cfg.gamma0 * penalty[cell] as f64;
                // candidates are generated in (beam, cell) order, so strict
                // comparison keeps the tie rule
                if best.is_none_or(|(_, bs)| score > bs) {
                    best = Some((idx, score));
                }
            }
            let (idx, _) = best.expect("candidate remains");
            chosen[idx] = true;
            let (b, cell, lp) = cands[idx];
            penalty[cell] += 1;
            let mut cells = beams[b].cells.clone();
            cells.push(CellIndex(cell));
            next.push(Beam { cells, log_prob: lp });
        }
        beams = next;
    }
    let exhausted = beams.len() < cfg.k;
    beams.truncate(cfg.k);
    let log_probs = beams.iter().map(|b| b.log_prob).collect();
    Ok((beams.into_iter().map(|b| b.cells).collect(), log_probs, exhausted))
}

/// Decodes `cfg.k` futures for an observed history: cell sequences from
/// [`decode_cells`], placed at cell centers plus the predicted offset.
pub fn diverse_beam_search(
    obs: &Trajectory,
    params: &ModelParams,
    scene: &SceneClassMap,
    steps: usize,
    cfg: &BeamConfig,
) -> Result<BeamOutput> {
    let trans = Transitions::from_scene(params, scene)?;
    decode_with(obs, params, &trans, steps, cfg)
}

pub(crate) fn decode_with(
    obs: &Trajectory,
    params: &ModelParams,
    trans: &Transitions,
    steps: usize,
    cfg: &BeamConfig,
) -> Result<BeamOutput> {
    if obs.is_empty() {
        return Err(Error::Empty("observation".into()));
    }
    let grid = params.grid;
    let start = grid.cell_of(obs.last().xy())?;
    let (cells, log_probs, exhausted) = decode_cells(trans, start, steps, cfg)?;
    let offsets = predict_offsets(obs, params, steps)?;
    let t0 = obs.last().t;
    let trajectories = cells
        .iter()
        .map(|seq| {
            let points = seq
                .iter()
                .zip(&offsets)
                .enumerate()
                .map(|(k, (&c, &(dx, dy)))| {
                    let (cx, cy) = grid.center_unchecked(c);
                    TrajPoint::new(t0 + 1 + k as i64, cx + dx, cy + dy)
                })
                .collect();
            Trajectory {
                agent_id: obs.agent_id.clone(),
                points,
            }
        })
        .collect();
    let mut set = PredictionSet::new(trajectories)?;
    set.log_probs = Some(log_probs.clone());
    Ok(BeamOutput {
        cells,
        log_probs,
        set,
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn setup(rows: usize, cols: usize) -> (ModelParams, SceneClassMap) {
        let grid = GridSpec::unit_cells(rows, cols).unwrap();
        (
            ModelParams::zeros(grid, 1, 1).unwrap(),
            SceneClassMap::uniform(rows, cols, 1, 0).unwrap(),
        )
    }

    #[test]
    fn k1_is_stepwise_argmax() {
        let (mut p, scene) = setup(5, 7);
        p.set_kernel(0, 1, 1.0);
        p.set_kernel(1, 1, 0.5);
        let trans = Transitions::from_scene(&p, &scene).unwrap();
        let start = p.grid.index(1, 1);
        let (cells, lp, _) = decode_cells(&trans, start, 4, &BeamConfig::greedy()).unwrap();
        let mut cur = start;
        let mut acc = 0.0;
        for c in &cells[0] {
            let row = trans.dense_row(cur);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            assert_eq!(c.0, best);
            acc += row[best].ln();
            cur = *c;
        }
        assert!((lp[0] - acc).abs() < 1e-12);
    }

    #[test]
    fn penalty_splits_symmetric_peaks() {
        let (mut p, scene) = setup(5, 5);
        p.set_kernel(-1, 0, 3.0);
        p.set_kernel(1, 0, 3.0);
        let trans = Transitions::from_scene(&p, &scene).unwrap();
        let start = p.grid.index(2, 2);
        let up = p.grid.index(3, 2);
        let down = p.grid.index(1, 2);
        let (cells, _, _) = decode_cells(&trans, start, 1, &BeamConfig::new(2, 100.0)).unwrap();
        let mut firsts = vec![cells[0][0], cells[1][0]];
        firsts.sort();
        assert_eq!(firsts, vec![down, up]);
    }

    #[test]
    fn penalty_changes_selection_when_beams_collide() {
        // "right" beats "stay": after one step the beams sit on (2,1) and
        // (2,0), and at step two both can reach (2,1)
        let (mut p, scene) = setup(5, 5);
        p.set_kernel(0, 1, 4.0);
        p.set_kernel(0, 0, 3.0);
        let trans = Transitions::from_scene(&p, &scene).unwrap();
        let start = p.grid.index(2, 0);
        let ends = |cells: &Vec<Vec<CellIndex>>| cells.iter().map(|c| c[1]).collect::<Vec<_>>();
        let (plain, _, _) = decode_cells(&trans, start, 2, &BeamConfig::new(3, 0.0)).unwrap();
        let plain_ends = ends(&plain);
        assert_eq!(plain_ends[0], p.grid.index(2, 2));
        assert_eq!(plain_ends[1], plain_ends[2]);
        let (diverse, lp, _) = decode_cells(&trans, start, 2, &BeamConfig::new(3, 1e3)).unwrap();
        let mut d = ends(&diverse);
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 3);
        assert!(lp.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn exhausted_when_k_exceeds_sequences() {
        let (p, scene) = setup(1, 2);
        let trans = Transitions::from_scene(&p, &scene).unwrap();
        let (cells, lp, exhausted) = decode_cells(&trans, CellIndex(0), 1, &BeamConfig::new(5, 0.0)).unwrap();
        assert!(exhausted);
        assert_eq!(cells.len(), 2);
        assert_eq!(lp.len(), 2);
    }

    #[test]
    fn trajectories_are_centers_plus_offsets() {
        let (mut p, scene) = setup(4, 4);
        p.set_kernel(0, 1, 5.0);
        p.offset_c = [0.1, -0.2];
        let obs = Trajectory::from_xy("a", 10, &[(0.5, 1.5), (0.6, 1.5)]).unwrap();
        let out = diverse_beam_search(&obs, &p, &scene, 2, &BeamConfig::greedy()).unwrap();
        let t = &out.set.trajectories[0];
        assert_eq!(t.points[0].t, 12);
        assert!((t.points[0].x - 1.6).abs() < 1e-12 && (t.points[0].y - 1.3).abs() < 1e-12);
        assert!((t.points[1].x - 2.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        let (p, scene) = setup(2, 2);
        let trans = Transitions::from_scene(&p, &scene).unwrap();
        assert!(decode_cells(&trans, CellIndex(0), 1, &BeamConfig::new(0, 0.0)).is_err());
        assert!(decode_cells(&trans, CellIndex(0), 1, &BeamConfig::new(1, -1.0)).is_err());
        assert!(decode_cells(&trans, CellIndex(9), 1, &BeamConfig::new(1, 0.0)).is_err());
    }
}
