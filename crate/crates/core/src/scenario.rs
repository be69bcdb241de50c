//! Seeded synthetic forking-paths data.
//!
//! Each agent walks straight from a spawn point to a fork during the
//! observation window, then along one of several branches to a destination.
//! Branch directions are spread evenly over `[-branch_angle, branch_angle]`
//! around the heading (plus an optional common `bend`); future `j` goes to
//! destination `j mod D`. Waypoints (fork, destinations) get Gaussian noise
//! and points are interpolated between them at one step per frame.
//!
//! Extra views are mirror images of the base world, with trajectories
//! transformed and scenes resampled to match.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellIndex, GridSpec};
use crate::multiview::Homography;
use crate::types::{DatasetMeta, Horizon, MultiFutureSample, SceneClassMap, TrajPoint, Trajectory};

pub const CLASS_GROUND: u16 = 0;
pub const CLASS_WALKWAY: u16 = 1;
pub const CLASS_OBSTACLE: u16 = 2;
pub const NUM_CLASSES: usize = 3;

const MAX_ATTEMPTS: usize = 200;
/// Sub-steps per frame when checking and painting path segments.
const SEGMENT_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heading {
    East,
    West,
    North,
    South,
    /// One of the four, drawn per agent.
    Random,
}

impl Heading {
    fn vector(self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        match self {
            Heading::East => (1.0, 0.0),
            Heading::West => (-1.0, 0.0),
            Heading::North => (0.0, 1.0),
            Heading::South => (0.0, -1.0),
            Heading::Random => [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)][rng.random_range(0..4)],
        }
    }
}

/// Axis-aligned block of obstacle cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub grid: GridSpec,
    pub horizon: Horizon,
    pub n_agents: usize,
    pub destinations_per_agent: usize,
    pub futures_per_agent: usize,
    pub noise_sigma: f64,
    #[serde(default)]
    pub obstacles: Vec<CellRect>,
    /// Paint each agent's paths as walkway in a scene of its own.
    #[serde(default)]
    pub walkways: bool,
    pub n_views: usize,
    pub seed: u64,
    /// Distance per frame, in scene units.
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default = "default_heading")]
    pub heading: Heading,
    /// Half-spread of the branch directions, degrees.
    #[serde(default = "default_branch_angle")]
    pub branch_angle_deg: f64,
    /// Rotation added to every branch, degrees.
    #[serde(default)]
    pub bend_deg: f64,
}

fn default_speed() -> f64 {
    1.0
}

fn default_heading() -> Heading {
    Heading::East
}

fn default_branch_angle() -> f64 {
    45.0
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid: GridSpec::unit_cells(24, 32).expect("valid grid"),
            horizon: Horizon::SHORT,
            n_agents: 20,
            destinations_per_agent: 3,
            futures_per_agent: 6,
            noise_sigma: 0.1,
            obstacles: Vec::new(),
            walkways: false,
            n_views: 1,
            seed: 0,
            speed: default_speed(),
            heading: default_heading(),
            branch_angle_deg: default_branch_angle(),
            bend_deg: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.horizon.obs < 1 || self.horizon.pred < 1 {
            return Err(Error::InvalidArgument("horizon lengths must be >= 1".into()));
        }
        if self.destinations_per_agent < 1 || self.futures_per_agent < 1 {
            return Err(Error::InvalidArgument("need at least one destination and one future".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise sigma must be non-negative".into()));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::InvalidArgument("speed must be positive".into()));
        }
        let spread = if self.destinations_per_agent > 1 { self.branch_angle_deg.abs() } else { 0.0 };
        if !(spread + self.bend_deg.abs() < 90.0) {
            return Err(Error::InvalidArgument("branch directions must stay within 90 degrees of the heading".into()));
        }
        if !(1..=4).contains(&self.n_views) {
            return Err(Error::InvalidArgument("between 1 and 4 views are supported".into()));
        }
        for r in &self.obstacles {
            if r.row + r.rows > self.grid.rows || r.col + r.cols > self.grid.cols {
                return Err(Error::InvalidArgument(format!("obstacle {r:?} outside the grid")));
            }
        }
        Ok(())
    }
}

/// Ground truth the generator knows about one agent, in base-view
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub agent_id: String,
    pub sample_id: String,
    pub scene_ref: String,
    pub fork: (f64, f64),
    /// Noise-free destination of each branch.
    pub destinations: Vec<(f64, f64)>,
    pub destination_cells: Vec<CellIndex>,
    /// Branch taken by each future.
    pub future_destinations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub agents: Vec<AgentTruth>,
    /// Agents for which no obstacle-free layout was found.
    pub infeasible: Vec<String>,
}

/// One view: base-to-view transform, samples and scenes in view coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewData {
    pub view_id: String,
    pub transform: Homography,
    pub samples: Vec<MultiFutureSample>,
    pub scenes: BTreeMap<String, SceneClassMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub meta: DatasetMeta,
    pub views: Vec<ViewData>,
    pub truth: Truth,
}

fn base_scene(cfg: &ScenarioConfig) -> Result<SceneClassMap> {
    let mut scene = SceneClassMap::uniform(cfg.grid.rows, cfg.grid.cols, NUM_CLASSES, CLASS_GROUND)?;
    for r in &cfg.obstacles {
        for row in r.row..r.row + r.rows {
            for col in r.col..r.col + r.cols {
                scene.set(cfg.grid.index(row, col).0, CLASS_OBSTACLE);
            }
        }
    }
    Ok(scene)
}

/// Points on the segment `a -> b` at `SEGMENT_SAMPLES` sub-steps, both ends
/// included.
fn segment(a: (f64, f64), b: (f64, f64)) -> impl Iterator<Item = (f64, f64)> {
    (0..=SEGMENT_SAMPLES).map(move |k| {
        let s = k as f64 / SEGMENT_SAMPLES as f64;
        (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1))
    })
}

fn path_points(traj: &Trajectory, prefix: Option<&TrajPoint>) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = prefix.map(|p| p.xy()).into_iter().collect();
    pts.extend(traj.points.iter().map(|p| p.xy()));
    let mut out = Vec::new();
    for w in pts.windows(2) {
        out.extend(segment(w[0], w[1]));
    }
    if pts.len() == 1 {
        out.push(pts[0]);
    }
    out
}

fn path_is_clear(grid: &GridSpec, scene: &SceneClassMap, pts: &[(f64, f64)]) -> bool {
    pts.iter().all(|&p| match grid.quantize(p) {
        Ok(q) => !q.clamped && scene.class_at(q.cell.0) != CLASS_OBSTACLE as usize,
        Err(_) => false,
    })
}

struct Agent {
    sample: MultiFutureSample,
    truth: AgentTruth,
}

fn lerp(a: (f64, f64), b: (f64, f64), s: f64) -> (f64, f64) {
    (a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1))
}

fn try_agent(cfg: &ScenarioConfig, index: usize, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Result<Agent> {
    let grid = &cfg.grid;
    let h = cfg.heading.vector(rng);
    let perp = (-h.1, h.0);
    let cell = CellIndex(rng.random_range(0..grid.num_cells()));
    let spawn = grid.cell_center(cell)?;
    let v = cfg.speed;
    let (obs, pred) = (cfg.horizon.obs, cfg.horizon.pred);
    let mut jitter = |p: (f64, f64)| (p.0 + noise.sample(rng), p.1 + noise.sample(rng));

    let clean_fork = (spawn.0 + (obs - 1) as f64 * v * h.0, spawn.1 + (obs - 1) as f64 * v * h.1);
    let fork = if obs > 1 { jitter(clean_fork) } else { spawn };
    let observation: Vec<(f64, f64)> = (0..obs)
        .map(|k| if obs == 1 { spawn } else { lerp(spawn, fork, k as f64 / (obs - 1) as f64) })
        .collect();

    let d = cfg.destinations_per_agent;
    let spread = cfg.branch_angle_deg.to_radians();
    let bend = cfg.bend_deg.to_radians();
    let destinations: Vec<(f64, f64)> = (0..d)
        .map(|i| {
            let theta = if d == 1 {
                bend
            } else {
                bend - spread + 2.0 * spread * i as f64 / (d - 1) as f64
            };
            let tan = theta.tan();
            let reach = pred as f64 * v;
            (
                fork.0 + reach * (h.0 + tan * perp.0),
                fork.1 + reach * (h.1 + tan * perp.1),
            )
        })
        .collect();

    let agent_id = format!("agent{index:04}");
    let sample_id = format!("s{index:04}");
    let obs_traj = Trajectory::from_xy(&agent_id, 0, &observation)?;
    let mut futures = Vec::with_capacity(cfg.futures_per_agent);
    let mut future_destinations = Vec::with_capacity(cfg.futures_per_agent);
    for j in 0..cfg.futures_per_agent {
        let di = j % d;
        let dest = jitter(destinations[di]);
        let pts: Vec<(f64, f64)> = (1..=pred).map(|k| lerp(fork, dest, k as f64 / pred as f64)).collect();
        futures.push(Trajectory::from_xy(&agent_id, obs as i64, &pts)?);
        future_destinations.push(di);
    }
    let destination_cells = destinations.iter().map(|&p| grid.quantize(p).map(|q| q.cell)).collect::<Result<_>>()?;
    let scene_ref = if cfg.walkways { format!("scene_{index:04}") } else { "scene".to_string() };
    Ok(Agent {
        sample: MultiFutureSample {
            sample_id: sample_id.clone(),
            observation: obs_traj,
            futures,
            scene_ref: scene_ref.clone(),
        },
        truth: AgentTruth {
            agent_id,
            sample_id,
            scene_ref,
            fork,
            destinations,
            destination_cells,
            future_destinations,
        },
    })
}

/// Base-to-view transform for view `k`: identity, then mirrors about the
/// vertical axis, the horizontal axis, and both.
pub fn view_transform(grid: &GridSpec, k: usize) -> Result<Homography> {
    let (ox, oy) = grid.origin;
    let (w, h) = grid.extent;
    let (sx, sy) = match k {
        0 => (false, false),
        1 => (true, false),
        2 => (false, true),
        3 => (true, true),
        _ => return Err(Error::InvalidArgument(format!("no view {k}"))),
    };
    let row = |flip: bool, o: f64, e: f64| if flip { (-1.0, 2.0 * o + e) } else { (1.0, 0.0) };
    let (ax, bx) = row(sx, ox, w);
    let (ay, by) = row(sy, oy, h);
    Homography::from_row_slice(&[ax, 0.0, bx, 0.0, ay, by, 0.0, 0.0, 1.0])
}

/// Scene as seen through `transform`: each view cell takes the class of the
/// base cell under its center's preimage.
pub fn resample_scene(scene: &SceneClassMap, grid: &GridSpec, transform: &Homography) -> Result<SceneClassMap> {
    let inv = transform.inverse()?;
    let mut out = SceneClassMap::uniform(grid.rows, grid.cols, scene.num_classes(), 0)?;
    for i in 0..grid.num_cells() {
        let c = grid.cell_center(CellIndex(i))?;
        let src = grid.cell_of(inv.apply(c)?)?;
        out.set(i, scene.class_at(src.0) as u16);
    }
    Ok(out)
}

pub fn transform_trajectory(traj: &Trajectory, transform: &Homography) -> Result<Trajectory> {
    let mut points = Vec::with_capacity(traj.len());
    for p in &traj.points {
        let (x, y) = transform.apply(p.xy())?;
        points.push(TrajPoint::new(p.t, x, y));
    }
    Ok(Trajectory {
        agent_id: traj.agent_id.clone(),
        points,
    })
}

pub fn transform_sample(sample: &MultiFutureSample, transform: &Homography) -> Result<MultiFutureSample> {
    Ok(MultiFutureSample {
        sample_id: sample.sample_id.clone(),
        observation: transform_trajectory(&sample.observation, transform)?,
        futures: sample
            .futures
            .iter()
            .map(|f| transform_trajectory(f, transform))
            .collect::<Result<_>>()?,
        scene_ref: sample.scene_ref.clone(),
    })
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let grid = cfg.grid;
    let base = base_scene(cfg)?;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut samples = Vec::new();
    let mut agents = Vec::new();
    let mut infeasible = Vec::new();
    let mut scenes = BTreeMap::new();
    if !cfg.walkways {
        scenes.insert("scene".to_string(), base.clone());
    }
    for index in 0..cfg.n_agents {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let agent = try_agent(cfg, index, &mut rng, &noise)?;
            let obs = &agent.sample.observation;
            let mut clear = path_is_clear(&grid, &base, &path_points(obs, None));
            for f in &agent.sample.futures {
                clear = clear && path_is_clear(&grid, &base, &path_points(f, obs.points.last()));
            }
            if clear {
                placed = Some(agent);
                break;
            }
        }
        let Some(agent) = placed else {
            infeasible.push(format!("agent{index:04}"));
            continue;
        };
        if cfg.walkways {
            let mut scene = base.clone();
            let obs = &agent.sample.observation;
            let mut pts = path_points(obs, None);
            for f in &agent.sample.futures {
                pts.extend(path_points(f, obs.points.last()));
            }
            for p in pts {
                let c = grid.cell_of(p)?;
                scene.set(c.0, CLASS_WALKWAY);
            }
            scenes.insert(agent.sample.scene_ref.clone(), scene);
        }
        samples.push(agent.sample);
        agents.push(agent.truth);
    }

    let mut views = Vec::with_capacity(cfg.n_views);
    for k in 0..cfg.n_views {
        let transform = view_transform(&grid, k)?;
        let (v_samples, v_scenes) = if k == 0 {
            (samples.clone(), scenes.clone())
        } else {
            (
                samples.iter().map(|s| transform_sample(s, &transform)).collect::<Result<_>>()?,
                scenes
                    .iter()
                    .map(|(name, s)| Ok((name.clone(), resample_scene(s, &grid, &transform)?)))
                    .collect::<Result<_>>()?,
            )
        };
        views.push(ViewData {
            view_id: format!("view_{k}"),
            transform,
            samples: v_samples,
            scenes: v_scenes,
        });
    }
    Ok(Scenario {
        meta: DatasetMeta {
            unit: "cell".to_string(),
            grid,
            horizon: cfg.horizon,
            frame_note: "frames start at 0 for every sample; futures continue the observation".to_string(),
        },
        views,
        truth: Truth { agents, infeasible },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_dataset;
    use proptest::prelude::*;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            grid: GridSpec::unit_cells(20, 24).unwrap(),
            horizon: Horizon { obs: 4, pred: 6 },
            n_agents: 6,
            destinations_per_agent: 2,
            futures_per_agent: 4,
            noise_sigma: 0.05,
            n_views: 2,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.views[0].samples, generate(&small(4)).unwrap().views[0].samples);
    }

    #[test]
    fn noiseless_single_destination_is_straight() {
        let cfg = ScenarioConfig {
            noise_sigma: 0.0,
            destinations_per_agent: 1,
            futures_per_agent: 3,
            ..small(1)
        };
        let s = generate(&cfg).unwrap();
        for (sample, truth) in s.views[0].samples.iter().zip(&s.truth.agents) {
            let last = sample.observation.last().xy();
            for f in &sample.futures {
                assert_eq!(f.last().xy(), truth.destinations[0]);
                let n = f.len() as f64;
                for (k, p) in f.points.iter().enumerate() {
                    let s = (k + 1) as f64 / n;
                    let want = lerp(last, truth.destinations[0], s);
                    assert!((p.x - want.0).abs() < 1e-12 && (p.y - want.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn both_destinations_reached() {
        let s = generate(&small(5)).unwrap();
        for (sample, truth) in s.views[0].samples.iter().zip(&s.truth.agents) {
            let ends: Vec<CellIndex> = sample
                .futures
                .iter()
                .map(|f| s.meta.grid.cell_of(f.last().xy()).unwrap())
                .collect();
            for d in &truth.destination_cells {
                assert!(ends.iter().any(|e| s.meta.grid.cell_distance(*e, *d) == 0), "{ends:?} vs {d:?}");
            }
        }
    }

    #[test]
    fn generated_data_validates() {
        let cfg = small(2);
        let s = generate(&cfg).unwrap();
        for v in &s.views {
            let r = validate_dataset(&v.samples, cfg.horizon, Some(&v.scenes));
            assert!(r.is_empty(), "{r:?}");
        }
    }

    #[test]
    fn obstacles_are_avoided_or_reported() {
        let cfg = ScenarioConfig {
            obstacles: vec![CellRect { row: 0, col: 10, rows: 20, cols: 2 }],
            n_agents: 10,
            walkways: true,
            ..small(9)
        };
        let s = generate(&cfg).unwrap();
        let grid = cfg.grid;
        for sample in &s.views[0].samples {
            let scene = &s.views[0].scenes[&sample.scene_ref];
            let obs = &sample.observation;
            assert!(path_is_clear(&grid, scene, &path_points(obs, None)));
            for f in &sample.futures {
                assert!(path_is_clear(&grid, scene, &path_points(f, obs.points.last())));
            }
        }
        assert_eq!(s.views[0].samples.len() + s.truth.infeasible.len(), 10);

        let wall = ScenarioConfig {
            obstacles: vec![CellRect { row: 0, col: 0, rows: 20, cols: 24 }],
            ..small(9)
        };
        let s = generate(&wall).unwrap();
        assert!(s.views[0].samples.is_empty());
        assert_eq!(s.truth.infeasible.len(), wall.n_agents);
    }

    #[test]
    fn walkways_cover_the_paths() {
        let cfg = ScenarioConfig {
            walkways: true,
            ..small(6)
        };
        let s = generate(&cfg).unwrap();
        for sample in &s.views[0].samples {
            let scene = &s.views[0].scenes[&sample.scene_ref];
            for p in sample.futures.iter().flat_map(|f| &f.points) {
                let c = cfg.grid.cell_of(p.xy()).unwrap();
                assert_eq!(scene.class_at(c.0), CLASS_WALKWAY as usize);
            }
        }
    }

    #[test]
    fn mirrored_view_scene_matches() {
        let cfg = ScenarioConfig {
            walkways: true,
            ..small(8)
        };
        let s = generate(&cfg).unwrap();
        let grid = cfg.grid;
        let (a, b) = (&s.views[0], &s.views[1]);
        for name in a.scenes.keys() {
            for r in 0..grid.rows {
                for c in 0..grid.cols {
                    let i = grid.index(r, c).0;
                    let j = grid.index(r, grid.cols - 1 - c).0;
                    assert_eq!(a.scenes[name].class_at(i), b.scenes[name].class_at(j));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn views_map_back_to_base(seed in 0u64..1000, k in 1usize..4) {
            let cfg = ScenarioConfig { n_views: 4, ..small(seed) };
            let s = generate(&cfg).unwrap();
            let inv = s.views[k].transform.inverse().unwrap();
            for (base, view) in s.views[0].samples.iter().zip(&s.views[k].samples) {
                let back = transform_trajectory(&view.observation, &inv).unwrap();
                for (p, q) in back.points.iter().zip(&base.observation.points) {
                    prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
                }
                for (f, g) in view.futures.iter().zip(&base.futures) {
                    let back = transform_trajectory(f, &inv).unwrap();
                    for (p, q) in back.points.iter().zip(&g.points) {
                        prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
                    }
                }
            }
        }

        #[test]
        fn futures_share_the_prefix(seed in 0u64..1000) {
            let s = generate(&small(seed)).unwrap();
            for sample in &s.views[0].samples {
                let t0 = sample.observation.last().t;
                for f in &sample.futures {
                    prop_assert_eq!(f.first().t, t0 + 1);
                }
            }
        }
    }
}
