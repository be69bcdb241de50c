//! On-disk formats.
//!
//! * trajectories: TSV `frame_id agent_id x y` with a header line
//! * samples: one JSON document per sample
//! * scenes: text, a `H W K` header then `H` rows of `W` class labels
//! * grid specs, dataset metadata, checkpoints, predictions, metric reports:
//!   JSON
//! * homographies: 9 whitespace-separated reals, row-major
//!
//! A generated dataset directory holds `meta.json`, `truth.json` and one
//! `view_k/` per view with `samples/`, `scenes/`, `transform.txt` and
//! `observations.tsv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::multiview::{GlobalTrack, Homography};
use crate::scenario::{Scenario, Truth};
use crate::types::{DatasetMeta, MultiFutureSample, PredictionSet, SceneClassMap, TrajPoint, Trajectory};

pub const TRAJ_HEADER: &str = "frame_id\tagent_id\tx\ty";
pub const GLOBAL_HEADER: &str = "global_id\tframe_id\tx\ty";

fn file_err(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::File {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| file_err(path, e))
}

/// Writes `contents`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| file_err(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| file_err(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| file_err(path, e))
}

pub fn format_trajectories(trajs: &[Trajectory]) -> String {
    let mut out = String::from(TRAJ_HEADER);
    out.push('\n');
    for t in trajs {
        for p in &t.points {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", p.t, t.agent_id, p.x, p.y));
        }
    }
    out
}

/// Parses trajectory TSV. Rows are grouped by agent (in order of first
/// appearance) and sorted by frame; the result is validated.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<TrajPoint>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || (n == 0 && line.starts_with("frame_id")) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!("line {}: expected 4 tab-separated fields", n + 1)));
        }
        let bad = |what: &str| Error::Parse(format!("line {}: bad {what}", n + 1));
        let t: i64 = f[0].parse().map_err(|_| bad("frame_id"))?;
        let x: f64 = f[2].parse().map_err(|_| bad("x"))?;
        let y: f64 = f[3].parse().map_err(|_| bad("y"))?;
        if !rows.contains_key(f[1]) {
            order.push(f[1].to_string());
        }
        rows.entry(f[1].to_string()).or_default().push(TrajPoint::new(t, x, y));
    }
    order
        .into_iter()
        .map(|id| {
            let mut pts = rows.remove(&id).unwrap_or_default();
            pts.sort_by_key(|p| p.t);
            Trajectory::new(id, pts)
        })
        .collect()
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    write_text(path, &format_trajectories(trajs))
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    parse_trajectories(&read_text(path)?).map_err(|e| file_err(path, e))
}

pub fn format_scene(scene: &SceneClassMap) -> String {
    let mut out = format!("{} {} {}\n", scene.rows(), scene.cols(), scene.num_classes());
    for row in scene.classes().chunks(scene.cols()) {
        let line: Vec<String> = row.iter().map(u16::to_string).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_scene(text: &str) -> Result<SceneClassMap> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| Error::Parse("empty scene file".into()))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| Error::Parse(format!("bad scene header value {v}"))))
        .collect::<Result<_>>()?;
    let [rows, cols, k] = header[..] else {
        return Err(Error::Parse("scene header must be `H W K`".into()));
    };
    let mut classes = Vec::with_capacity(rows * cols);
    for (r, line) in lines.enumerate() {
        let row: Vec<u16> = line
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::Parse(format!("scene row {r}: bad label {v}"))))
            .collect::<Result<_>>()?;
        if row.len() != cols {
            return Err(Error::Parse(format!("scene row {r} has {} labels, expected {cols}", row.len())));
        }
        classes.extend(row);
    }
    if classes.len() != rows * cols {
        return Err(Error::Parse(format!("scene has {} rows, expected {rows}", classes.len() / cols.max(1))));
    }
    SceneClassMap::new(rows, cols, k, classes)
}

pub fn write_scene(path: &Path, scene: &SceneClassMap) -> Result<()> {
    write_text(path, &format_scene(scene))
}

pub fn read_scene(path: &Path) -> Result<SceneClassMap> {
    parse_scene(&read_text(path)?).map_err(|e| file_err(path, e))
}

pub fn format_homography(h: &Homography) -> String {
    let v = h.to_row_vec();
    let rows: Vec<String> = v
        .chunks(3)
        .map(|r| r.iter().map(f64::to_string).collect::<Vec<_>>().join(" "))
        .collect();
    rows.join("\n") + "\n"
}

pub fn parse_homography(text: &str) -> Result<Homography> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad homography value {s}"))))
        .collect::<Result<_>>()?;
    Homography::from_row_slice(&v)
}

pub fn write_homography(path: &Path, h: &Homography) -> Result<()> {
    write_text(path, &format_homography(h))
}

pub fn read_homography(path: &Path) -> Result<Homography> {
    parse_homography(&read_text(path)?).map_err(|e| file_err(path, e))
}

pub fn read_grid(path: &Path) -> Result<GridSpec> {
    let g: GridSpec = read_json(path)?;
    g.validate().map_err(|e| file_err(path, e))?;
    Ok(g)
}

fn sorted_entries(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| file_err(dir, e))? {
        let path = entry.map_err(|e| file_err(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_samples(dir: &Path, samples: &[MultiFutureSample]) -> Result<()> {
    for s in samples {
        write_json(&dir.join(format!("{}.json", s.sample_id)), s)?;
    }
    Ok(())
}

/// All `*.json` samples in `dir`, in file-name order.
pub fn read_samples(dir: &Path) -> Result<Vec<MultiFutureSample>> {
    sorted_entries(dir, "json")?.iter().map(|p| read_json(p)).collect()
}

pub fn write_scenes(dir: &Path, scenes: &BTreeMap<String, SceneClassMap>) -> Result<()> {
    for (name, s) in scenes {
        write_scene(&dir.join(format!("{name}.txt")), s)?;
    }
    Ok(())
}

/// All `*.txt` scenes in `dir`, keyed by file stem.
pub fn read_scenes(dir: &Path) -> Result<BTreeMap<String, SceneClassMap>> {
    let mut out = BTreeMap::new();
    for p in sorted_entries(dir, "txt")? {
        let name = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| file_err(&p, "bad scene file name"))?
            .to_string();
        out.insert(name, read_scene(&p)?);
    }
    Ok(out)
}

/// One view of a dataset as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetView {
    pub meta: DatasetMeta,
    pub view_id: String,
    pub samples: Vec<MultiFutureSample>,
    pub scenes: BTreeMap<String, SceneClassMap>,
    pub transform: Option<Homography>,
}

pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    write_json(&dir.join("meta.json"), &scenario.meta)?;
    write_json(&dir.join("truth.json"), &scenario.truth)?;
    for v in &scenario.views {
        let vd = dir.join(&v.view_id);
        write_samples(&vd.join("samples"), &v.samples)?;
        write_scenes(&vd.join("scenes"), &v.scenes)?;
        write_homography(&vd.join("transform.txt"), &v.transform)?;
        let obs: Vec<Trajectory> = v.samples.iter().map(|s| s.observation.clone()).collect();
        write_trajectories(&vd.join("observations.tsv"), &obs)?;
    }
    Ok(())
}

pub fn read_view(dir: &Path, view_id: &str) -> Result<DatasetView> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let vd = dir.join(view_id);
    let transform_path = vd.join("transform.txt");
    let transform = if transform_path.exists() {
        Some(read_homography(&transform_path)?)
    } else {
        None
    };
    Ok(DatasetView {
        meta,
        view_id: view_id.to_string(),
        samples: read_samples(&vd.join("samples"))?,
        scenes: read_scenes(&vd.join("scenes"))?,
        transform,
    })
}

pub fn read_truth(dir: &Path) -> Result<Truth> {
    read_json(&dir.join("truth.json"))
}

/// Predictions for a dataset, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionFile {
    pub samples: BTreeMap<String, PredictionSet>,
}

pub fn format_global_tracks(tracks: &[GlobalTrack]) -> String {
    let mut out = String::from(GLOBAL_HEADER);
    out.push('\n');
    for g in tracks {
        for p in &g.trajectory.points {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", g.global_id, p.t, p.x, p.y));
        }
    }
    out
}
