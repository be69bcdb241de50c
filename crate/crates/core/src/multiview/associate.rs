use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{TrajPoint, Trajectory};

use super::homography::Homography;
use super::hungarian::hungarian_solve;

/// One camera's track of one person, in that camera's image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub camera_id: String,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    /// Largest admissible ground-plane distance.
    pub max_dist: f64,
    /// Largest admissible frame gap between disjoint tracklets.
    pub max_time_gap: i64,
    pub w_spatial: f64,
    pub w_appearance: f64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        AssociationConfig {
            max_dist: 1.0,
            max_time_gap: 30,
            w_spatial: 1.0,
            w_appearance: 0.0,
        }
    }
}

/// Tracklets judged to be one person, with their fused ground-plane path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTrack {
    pub global_id: usize,
    /// Indices into the input tracklet list, ascending.
    pub members: Vec<usize>,
    pub trajectory: Trajectory,
}

fn overlap_mean_dist(a: &Trajectory, b: &Trajectory) -> Option<f64> {
    let bt: BTreeMap<i64, &TrajPoint> = b.points.iter().map(|p| (p.t, p)).collect();
    let (mut sum, mut n) = (0.0, 0usize);
    for p in &a.points {
        if let Some(q) = bt.get(&p.t) {
            sum += p.dist(q);
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Spatial distance and gating for two ground-plane tracks: mean distance
/// over shared frames, or the gap between the earlier one's end and the later
/// one's start. `None` if a gate fails.
fn spatial_cost(a: &Trajectory, b: &Trajectory, cfg: &AssociationConfig) -> Option<f64> {
    let d = match overlap_mean_dist(a, b) {
        Some(d) => d,
        None => {
            let (early, late) = if a.last().t < b.first().t { (a, b) } else { (b, a) };
            if late.first().t - early.last().t > cfg.max_time_gap {
                return None;
            }
            early.last().dist(late.first())
        }
    };
    (d <= cfg.max_dist).then_some(d)
}

fn frames_overlap(a: &Trajectory, b: &Trajectory) -> bool {
    a.first().t <= b.last().t && b.first().t <= a.last().t
}

/// Cost of linking two projected tracklets; infinite when gated or when both
/// come from the same camera over overlapping frames.
pub fn pair_cost(
    a: &Tracklet,
    b: &Tracklet,
    ground_a: &Trajectory,
    ground_b: &Trajectory,
    appearance: f64,
    cfg: &AssociationConfig,
) -> f64 {
    if a.camera_id == b.camera_id && frames_overlap(&a.trajectory, &b.trajectory) {
        return f64::INFINITY;
    }
    match spatial_cost(ground_a, ground_b, cfg) {
        Some(d) => cfg.w_spatial * d + cfg.w_appearance * appearance,
        None => f64::INFINITY,
    }
}

fn fuse(members: &[usize], ground: &[Trajectory], agent_id: String) -> Trajectory {
    let mut by_frame: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for &i in members {
        for p in &ground[i].points {
            let e = by_frame.entry(p.t).or_insert((0.0, 0.0, 0));
            e.0 += p.x;
            e.1 += p.y;
            e.2 += 1;
        }
    }
    Trajectory {
        agent_id,
        points: by_frame
            .into_iter()
            .map(|(t, (x, y, n))| TrajPoint::new(t, x / n as f64, y / n as f64))
            .collect(),
    }
}

/// Groups tracklets into global tracks.
///
/// Tracklets are projected to the ground plane with their camera's
/// homography. Starting from singletons, each round solves a Hungarian
/// assignment over the current groups (group cost: mean member-pair cost,
/// infinite if any member pair is), then merges the admissible assigned
/// pairs in increasing cost, each group at most once per round. Rounds repeat
/// until nothing merges.
pub fn associate_tracklets(
    tracklets: &[Tracklet],
    homographies: &BTreeMap<String, Homography>,
    appearance: Option<&[Vec<f64>]>,
    cfg: &AssociationConfig,
) -> Result<Vec<GlobalTrack>> {
    let n = tracklets.len();
    if !(cfg.max_dist >= 0.0 && cfg.max_time_gap >= 0 && cfg.w_spatial >= 0.0 && cfg.w_appearance >= 0.0) {
        return Err(Error::InvalidArgument("association gates and weights must be non-negative".into()));
    }
    if let Some(app) = appearance {
        if app.len() != n || app.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("appearance costs must be n x n".into()));
        }
    }
    let mut ground = Vec::with_capacity(n);
    for t in tracklets {
        if t.trajectory.is_empty() {
            return Err(Error::Empty(format!("tracklet of {}", t.trajectory.agent_id)));
        }
        let h = homographies
            .get(&t.camera_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no homography for camera {}", t.camera_id)))?;
        let mut points = Vec::with_capacity(t.trajectory.len());
        for p in &t.trajectory.points {
            let (x, y) = h.apply(p.xy())?;
            points.push(TrajPoint::new(p.t, x, y));
        }
        ground.push(Trajectory {
            agent_id: t.trajectory.agent_id.clone(),
            points,
        });
    }

    let mut pc = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let app = appearance.map_or(0.0, |a| 0.5 * (a[i][j] + a[j][i]));
            let c = pair_cost(&tracklets[i], &tracklets[j], &ground[i], &ground[j], app, cfg);
            pc[i][j] = c;
            pc[j][i] = c;
        }
    }

    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while groups.len() > 1 {
        let g = groups.len();
        let mut cost = vec![vec![f64::INFINITY; g]; g];
        for a in 0..g {
            for b in a + 1..g {
                let mut sum = 0.0;
                let mut ok = true;
                'outer: for &i in &groups[a] {
                    for &j in &groups[b] {
                        if !pc[i][j].is_finite() {
                            ok = false;
                            break 'outer;
                        }
                        sum += pc[i][j];
                    }
                }
                if ok {
                    let c = sum / (groups[a].len() * groups[b].len()) as f64;
                    cost[a][b] = c;
                    cost[b][a] = c;
                }
            }
        }
        let assignment = hungarian_solve(&cost)?;
        let mut links: Vec<(f64, usize, usize)> = assignment
            .pairs
            .iter()
            .map(|&(a, b)| (cost[a][b], a.min(b), a.max(b)))
            .collect();
        links.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut taken = BTreeSet::new();
        let mut merges = Vec::new();
        for (_, a, b) in links {
            if taken.contains(&a) || taken.contains(&b) {
                continue;
            }
            taken.insert(a);
            taken.insert(b);
            merges.push((a, b));
        }
        if merges.is_empty() {
            break;
        }
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(g - merges.len());
        for (a, b) in &merges {
            let mut m = groups[*a].clone();
            m.extend_from_slice(&groups[*b]);
            next.push(m);
        }
        for (k, grp) in groups.into_iter().enumerate() {
            if !taken.contains(&k) {
                next.push(grp);
            }
        }
        for grp in &mut next {
            grp.sort_unstable();
        }
        next.sort();
        groups = next;
    }

    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            let trajectory = fuse(&members, &ground, format!("g{id}"));
            GlobalTrack {
                global_id: id,
                members,
                trajectory,
            }
        })
        .collect())
}
