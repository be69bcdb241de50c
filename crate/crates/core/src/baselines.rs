//! Non-learned predictors: constant velocity, least-squares extrapolation and
//! nearest-neighbour stitching from a bank of training trajectories.

use crate::error::{Error, Result};
use crate::metrics::ade;
use crate::types::{TrajPoint, Trajectory};

fn future_points(obs: &Trajectory, steps: usize, f: impl Fn(i64, usize) -> (f64, f64)) -> Result<Trajectory> {
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if obs.is_empty() {
        return Err(Error::Empty("observation".into()));
    }
    let t0 = obs.last().t;
    let points = (1..=steps)
        .map(|k| {
            let t = t0 + k as i64;
            let (x, y) = f(t, k);
            TrajPoint::new(t, x, y)
        })
        .collect();
    Ok(Trajectory {
        agent_id: obs.agent_id.clone(),
        points,
    })
}

/// Extrapolates the last observed displacement.
pub fn constant_velocity(obs: &Trajectory, steps: usize) -> Result<Trajectory> {
    let (vx, vy) = obs.last_velocity();
    let Some(last) = obs.points.last() else {
        return Err(Error::Empty("observation".into()));
    };
    let (x0, y0) = last.xy();
    future_points(obs, steps, |_, k| (x0 + vx * k as f64, y0 + vy * k as f64))
}

/// Least-squares line `a + b t` through `(t_k, v_k)`, returned as `(a, b)`.
pub fn fit_line(ts: &[f64], vs: &[f64]) -> Result<(f64, f64)> {
    if ts.len() != vs.len() || ts.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points to fit a line".into()));
    }
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let mv = vs.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (t, v) in ts.iter().zip(vs) {
        sxx += (t - mt) * (t - mt);
        sxy += (t - mt) * (v - mv);
    }
    if sxx == 0.0 {
        return Err(Error::Singular("all observation frames coincide".into()));
    }
    let b = sxy / sxx;
    Ok((mv - b * mt, b))
}

/// Independent linear fits of x(frame) and y(frame), evaluated at the next
/// `steps` frames.
pub fn linear_extrapolate(obs: &Trajectory, steps: usize) -> Result<Trajectory> {
    if obs.len() < 2 {
        return Err(Error::InvalidArgument("linear extrapolation needs >= 2 observed points".into()));
    }
    // fit in frames relative to the last observation to keep the intercept small
    let t_last = obs.last().t;
    let ts: Vec<f64> = obs.points.iter().map(|p| (p.t - t_last) as f64).collect();
    let xs: Vec<f64> = obs.points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = obs.points.iter().map(|p| p.y).collect();
    let (ax, bx) = fit_line(&ts, &xs)?;
    let (ay, by) = fit_line(&ts, &ys)?;
    future_points(obs, steps, |t, _| {
        let dt = (t - t_last) as f64;
        (ax + bx * dt, ay + by * dt)
    })
}

/// Observation/future pairs, stored translated so the last observed point is
/// the origin.
#[derive(Debug, Clone, Default)]
pub struct TrainBank {
    entries: Vec<(Vec<(f64, f64)>, Vec<(f64, f64)>)>,
}

fn relative_to_last(obs: &Trajectory, traj: &Trajectory) -> Vec<(f64, f64)> {
    let (ox, oy) = obs.last().xy();
    traj.points.iter().map(|p| (p.x - ox, p.y - oy)).collect()
}

impl TrainBank {
    pub fn new() -> Self {
        TrainBank::default()
    }

    pub fn push(&mut self, obs: &Trajectory, future: &Trajectory) -> Result<()> {
        if obs.is_empty() || future.is_empty() {
            return Err(Error::Empty("bank entry".into()));
        }
        if let Some((o, f)) = self.entries.first() {
            if o.len() != obs.len() || f.len() != future.len() {
                return Err(Error::LengthMismatch("bank entries must share horizon lengths".into()));
            }
        }
        self.entries
            .push((relative_to_last(obs, obs), relative_to_last(obs, future)));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Retrieves the bank future whose origin-translated observation has the
/// smallest ADE to the query's, and re-anchors it on the query's last point.
/// Ties go to the earliest bank entry.
pub fn nearest_neighbor(obs: &Trajectory, bank: &TrainBank, steps: usize) -> Result<Trajectory> {
    if bank.is_empty() {
        return Err(Error::Empty("train bank".into()));
    }
    let query = relative_to_last(obs, obs);
    let query_traj = Trajectory::from_xy("q", 0, &query)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, (o, _)) in bank.entries.iter().enumerate() {
        if o.len() != query.len() {
            return Err(Error::LengthMismatch(format!(
                "query observation has {} points, bank {}",
                query.len(),
                o.len()
            )));
        }
        let d = ade(&query_traj, &Trajectory::from_xy("b", 0, o)?)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    let (idx, _) = best.expect("bank is non-empty");
    let fut = &bank.entries[idx].1;
    if fut.len() < steps {
        return Err(Error::LengthMismatch(format!(
            "bank futures have {} steps, {steps} requested",
            fut.len()
        )));
    }
    let (ox, oy) = obs.last().xy();
    future_points(obs, steps, |_, k| {
        let (dx, dy) = fut[k - 1];
        (ox + dx, oy + dy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(xy: &[(f64, f64)]) -> Trajectory {
        Trajectory::from_xy("a", 0, xy).unwrap()
    }

    #[test]
    fn constant_velocity_examples() {
        let p = constant_velocity(&traj(&[(0.0, 0.0), (1.0, 0.0)]), 3).unwrap();
        assert_eq!(p.xy(), vec![(2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]);
        assert_eq!(p.points[0].t, 2);
        let p = constant_velocity(&traj(&[(2.0, 5.0)]), 2).unwrap();
        assert_eq!(p.xy(), vec![(2.0, 5.0), (2.0, 5.0)]);
        let p = constant_velocity(&traj(&[(0.0, 0.0), (1.0, 1.0)]), 2).unwrap();
        assert_eq!(p.xy(), vec![(2.0, 2.0), (3.0, 3.0)]);
        assert!(constant_velocity(&traj(&[(0.0, 0.0)]), 0).is_err());
    }

    #[test]
    fn linear_matches_cv_on_collinear() {
        let obs = traj(&[(0.0, 1.0), (0.5, 2.0), (1.0, 3.0), (1.5, 4.0)]);
        let a = linear_extrapolate(&obs, 4).unwrap();
        let b = constant_velocity(&obs, 4).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!(p.dist(q) < 1e-12);
        }
        let flat = linear_extrapolate(&traj(&[(3.0, 3.0); 5]), 2).unwrap();
        assert_eq!(flat.xy(), vec![(3.0, 3.0), (3.0, 3.0)]);
        assert!(linear_extrapolate(&traj(&[(0.0, 0.0)]), 2).is_err());
    }

    #[test]
    fn linear_slope_matches_normal_equations() {
        // y = 2t + alternating +-0.1 noise
        let xy: Vec<(f64, f64)> = (0..8)
            .map(|t| (0.0, 2.0 * t as f64 + if t % 2 == 0 { -0.1 } else { 0.1 }))
            .collect();
        let ts: Vec<f64> = (0..8).map(|t| t as f64).collect();
        let ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
        // normal equations [n  St; St Stt] [a b]^T = [Sy; Sty]
        let n = 8.0;
        let st: f64 = ts.iter().sum();
        let stt: f64 = ts.iter().map(|t| t * t).sum();
        let sy: f64 = ys.iter().sum();
        let sty: f64 = ts.iter().zip(&ys).map(|(t, y)| t * y).sum();
        let det = n * stt - st * st;
        let slope = (n * sty - st * sy) / det;
        let (_, b) = fit_line(&ts, &ys).unwrap();
        assert!((b - slope).abs() < 1e-12);
        let pred = linear_extrapolate(&traj(&xy), 1).unwrap();
        let intercept = (stt * sy - st * sty) / det;
        assert!((pred.points[0].y - (intercept + slope * 8.0)).abs() < 1e-9);
    }

    #[test]
    fn nearest_neighbor_examples() {
        let mut bank = TrainBank::new();
        assert!(nearest_neighbor(&traj(&[(0.0, 0.0), (1.0, 0.0)]), &bank, 1).is_err());

        let obs = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        let fut = Trajectory::from_xy("a", 2, &[(1.0, 1.0), (1.0, 2.0)]).unwrap();
        bank.push(&obs, &fut).unwrap();
        // same shape somewhere else in the scene
        let query = traj(&[(10.0, 10.0), (11.0, 10.0)]);
        let p = nearest_neighbor(&query, &bank, 2).unwrap();
        assert_eq!(p.xy(), vec![(11.0, 11.0), (11.0, 12.0)]);
    }

    #[test]
    fn nearest_neighbor_picks_smaller_ade() {
        let query = traj(&[(0.0, 0.0), (0.0, 0.0)]);
        let mut bank = TrainBank::new();
        let f1 = Trajectory::from_xy("a", 2, &[(5.0, 0.0)]).unwrap();
        let f2 = Trajectory::from_xy("a", 2, &[(-5.0, 0.0)]).unwrap();
        // relative observations: [(-1,0),(0,0)] -> ADE 0.5 ; [(-4,0),(0,0)] -> ADE 2.0
        bank.push(&traj(&[(-1.0, 0.0), (0.0, 0.0)]), &f1).unwrap();
        bank.push(&traj(&[(-4.0, 0.0), (0.0, 0.0)]), &f2).unwrap();
        assert_eq!(nearest_neighbor(&query, &bank, 1).unwrap().xy(), vec![(5.0, 0.0)]);
        // a tie keeps the first entry
        let mut tied = TrainBank::new();
        tied.push(&traj(&[(-1.0, 0.0), (0.0, 0.0)]), &f1).unwrap();
        tied.push(&traj(&[(1.0, 0.0), (0.0, 0.0)]), &f2).unwrap();
        assert_eq!(nearest_neighbor(&query, &tied, 1).unwrap().xy(), vec![(5.0, 0.0)]);
    }

    proptest! {
        #[test]
        fn cv_is_rigid_equivariant(pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..6),
                                    theta in -3.2f64..3.2, tx in -5.0f64..5.0, ty in -5.0f64..5.0) {
            let (s, c) = theta.sin_cos();
            let f = |x: f64, y: f64| (c * x - s * y + tx, s * x + c * y + ty);
            let obs = traj(&pts);
            let a = constant_velocity(&obs.map_xy(f), 4).unwrap();
            let b = constant_velocity(&obs, 4).unwrap().map_xy(f);
            for (p, q) in a.points.iter().zip(&b.points) {
                prop_assert!(p.dist(q) < 1e-9);
            }
        }

        #[test]
        fn linear_reproduces_linear_motion(x0 in -5.0f64..5.0, y0 in -5.0f64..5.0, vx in -2.0f64..2.0, vy in -2.0f64..2.0, n in 2usize..10) {
            let all: Vec<(f64, f64)> = (0..n + 5).map(|k| (x0 + vx * k as f64, y0 + vy * k as f64)).collect();
            let obs = traj(&all[..n]);
            let pred = linear_extrapolate(&obs, 5).unwrap();
            for (p, q) in pred.xy().iter().zip(&all[n..]) {
                prop_assert!((p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9);
            }
        }

        #[test]
        fn nn_output_is_translated_bank_future(seed_pts in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 6)) {
            let mut bank = TrainBank::new();
            let futures: Vec<Trajectory> = (0..3).map(|i| Trajectory::from_xy("b", 2, &[(i as f64, 0.5), (i as f64, 1.5)]).unwrap()).collect();
            for (i, f) in futures.iter().enumerate() {
                bank.push(&traj(&[seed_pts[2 * i], seed_pts[2 * i + 1]]), f).unwrap();
            }
            let query = traj(&[(0.0, 0.0), (0.3, 0.1)]);
            let p = nearest_neighbor(&query, &bank, 2).unwrap();
            let d0 = (p.points[1].x - p.points[0].x, p.points[1].y - p.points[0].y);
            prop_assert!((d0.0).abs() < 1e-12 && (d0.1 - 1.0).abs() < 1e-12);
        }
    }
}
