use crate::error::{Error, Result};
use crate::types::{TrajPoint, Trajectory};

use super::associate::GlobalTrack;

/// Moving-average window, in frames.
pub const DEFAULT_WINDOW: usize = 200;

/// Centered moving average over frames: the point at frame `f` becomes the
/// mean of all points with frames in `[f - (w-1)/2, f + w/2]`. The window is
/// truncated at the ends.
pub fn moving_average(traj: &Trajectory, window: usize) -> Result<Trajectory> {
    if window < 1 {
        return Err(Error::InvalidArgument("smoothing window must be >= 1".into()));
    }
    if traj.is_empty() {
        return Err(Error::Empty("track".into()));
    }
    let lo = ((window - 1) / 2) as i64;
    let hi = (window / 2) as i64;
    let pts = &traj.points;
    let mut out = Vec::with_capacity(pts.len());
    let (mut a, mut b) = (0usize, 0usize);
    for p in pts {
        while pts[a].t < p.t - lo {
            a += 1;
        }
        while b < pts.len() && pts[b].t <= p.t + hi {
            b += 1;
        }
        let n = (b - a) as f64;
        let (sx, sy) = pts[a..b].iter().fold((0.0, 0.0), |(x, y), q| (x + q.x, y + q.y));
        out.push(TrajPoint::new(p.t, sx / n, sy / n));
    }
    Ok(Trajectory {
        agent_id: traj.agent_id.clone(),
        points: out,
    })
}

/// Smooths a global track's fused path.
pub fn smooth_global(track: &GlobalTrack, window: usize) -> Result<GlobalTrack> {
    Ok(GlobalTrack {
        global_id: track.global_id,
        members: track.members.clone(),
        trajectory: moving_average(&track.trajectory, window)?,
    })
}
