use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fpk::gridnet::{Checkpoint, ModelParams};
use fpk::io::{
    format_global_tracks, read_homography, read_json, read_trajectories, read_view, to_json, write_json, write_scenario,
    write_text, write_trajectories, DatasetView, PredictionFile,
};
use fpk::multiview::{associate_tracklets, moving_average, smooth_global, GlobalTrack, Homography, Tracklet};
use fpk::pipeline::{self, ModelKind, Predictor};
use fpk::scenario::generate;
use fpk::simaug::augment_items;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

mod config;
mod heatmap;

use config::{ExperimentConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "fpk", version, about = "Multi-future trajectory forecasting experiments")]
struct Cli {
    /// JSON config for the run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, `key.path=value` with a JSON or bare string value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed; wins over the config and FPK_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// View id inside the dataset.
    #[arg(long)]
    view: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-future dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a dataset view; fails if anything is reported.
    Validate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train gridnet on one view, or with SimAug over several.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        simaug: bool,
        /// Comma-separated views for SimAug.
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<String>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every sample of a view.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset whose samples form the nearest-neighbour bank.
        #[arg(long)]
        bank_data: Option<PathBuf>,
        #[arg(long)]
        bank_view: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a view's futures.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one SimAug draw per training trajectory.
    Augment {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<String>>,
        /// Model used for view selection and the attack; zeros otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse per-camera tracklets into global tracks.
    Associate {
        /// Directory of `<camera>.tsv` tracklet files.
        #[arg(long)]
        tracklets: PathBuf,
        /// Directory of `<camera>.txt` image-to-ground homographies.
        #[arg(long)]
        homographies: PathBuf,
        /// Optional n x n JSON matrix of appearance costs.
        #[arg(long)]
        appearance: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Moving-average smoothing of global tracks (.json) or trajectories (.tsv).
    Smooth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sample belief heatmaps as text grids and PGM images.
    PlotHeatmap {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Validate { .. } => "validate",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Augment { .. } => "augment",
            Command::Associate { .. } => "associate",
            Command::Smooth { .. } => "smooth",
            Command::PlotHeatmap { .. } => "plot-heatmap",
        }
    }

    /// Flags that stand in for config keys.
    fn overrides(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        let mut data = |d: &DataArgs| {
            if let Some(p) = &d.data {
                out.push(("data", json!(p)));
            }
            if let Some(v) = &d.view {
                out.push(("view", json!(v)));
            }
        };
        match self {
            Command::Validate { data: d, .. }
            | Command::Evaluate { data: d, .. }
            | Command::PlotHeatmap { data: d, .. } => data(d),
            Command::Train {
                data: d,
                simaug,
                views,
                epochs,
                ..
            } => {
                data(d);
                if *simaug {
                    out.push(("simaug", json!(true)));
                }
                if let Some(v) = views {
                    out.push(("views", json!(v)));
                }
                if let Some(e) = epochs {
                    out.push(("train.epochs", json!(e)));
                }
            }
            Command::Predict { data: d, model, k, .. } => {
                data(d);
                if let Some(m) = model {
                    out.push(("model", json!(m)));
                }
                if let Some(k) = k {
                    out.push(("beam.k", json!(k)));
                }
            }
            Command::Augment { data: d, views, .. } => {
                data(d);
                if let Some(v) = views {
                    out.push(("views", json!(v)));
                }
            }
            Command::Smooth { window: Some(w), .. } => out.push(("smooth_window", json!(w))),
            Command::Generate { .. } | Command::Associate { .. } | Command::Smooth { .. } => {}
        }
        out
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a ExperimentConfig,
    outputs: Vec<String>,
    timestamp_unix: u64,
}

fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(to_json(cfg)?.as_bytes())))
}

/// `<dir>/manifest.json` for directory outputs, `<file>.manifest.json`
/// otherwise.
fn write_manifest(command: &str, cfg: &ExperimentConfig, out: &Path, is_dir: bool, outputs: Vec<PathBuf>) -> Result<()> {
    let path = if is_dir {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().ok_or_else(|| anyhow!("bad output path {}", out.display()))?.to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    };
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_sha256: config_hash(cfg)?,
        config: cfg,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    write_json(&path, &manifest)?;
    Ok(())
}

/// Every `view_*` directory of a dataset, sorted.
fn dataset_views(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("{}: cannot list dataset", dir.display()))? {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        if e.file_type()?.is_dir() && name.starts_with("view_") {
            out.push(name);
        }
    }
    out.sort();
    Ok(out)
}

fn load_views(cfg: &ExperimentConfig) -> Result<(Vec<DatasetView>, usize)> {
    let dir = cfg.data_dir()?;
    let ids = if cfg.views.is_empty() { dataset_views(dir)? } else { cfg.views.clone() };
    let anchor = ids
        .iter()
        .position(|v| *v == cfg.view)
        .ok_or_else(|| anyhow!("view {} is not among the SimAug views {ids:?}", cfg.view))?;
    let views = ids.iter().map(|v| read_view(dir, v)).collect::<fpk::Result<Vec<_>>>()?;
    Ok((views, anchor))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    ck.params.check_finite()?;
    Ok(ck)
}

fn read_tracklets(dir: &Path, homs_dir: &Path) -> Result<(Vec<Tracklet>, BTreeMap<String, Homography>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("{}: cannot list tracklets", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|x| x == "tsv"));
    files.sort();
    let mut tracklets = Vec::new();
    let mut homs = BTreeMap::new();
    for f in files {
        let camera = f
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("bad tracklet file name {}", f.display()))?
            .to_string();
        homs.insert(camera.clone(), read_homography(&homs_dir.join(format!("{camera}.txt")))?);
        for t in read_trajectories(&f)? {
            tracklets.push(Tracklet {
                camera_id: camera.clone(),
                trajectory: t,
            });
        }
    }
    if tracklets.is_empty() {
        bail!("{}: no tracklets", dir.display());
    }
    Ok((tracklets, homs))
}

fn run(cli: Cli) -> Result<()> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut flags = cli.command.overrides();
    if let Some(s) = cli.seed {
        flags.push(("seed", json!(s)));
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.sets, env_seed.as_deref(), &flags)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Generate { out } => {
            let scenario = generate(&cfg.scenario)?;
            write_scenario(out, &scenario)?;
            write_manifest(name, &cfg, out, true, vec![out.clone()])?;
            println!(
                "{}",
                json!({"views": scenario.views.len(), "agents": scenario.truth.agents.len(), "infeasible": scenario.truth.infeasible})
            );
        }
        Command::Validate { out, .. } => {
            let view = read_view(cfg.data_dir()?, &cfg.view)?;
            let report = fpk::validate_dataset(&view.samples, view.meta.horizon, Some(&view.scenes));
            match out {
                Some(o) => {
                    write_json(o, &report)?;
                    write_manifest(name, &cfg, o, false, vec![o.clone()])?;
                }
                None => print!("{}", to_json(&report)?),
            }
            if !report.is_empty() {
                let first = &report.violations[0];
                bail!(
                    "{} violation(s); first: sample {}: {}",
                    report.violations.len(),
                    first.sample_id,
                    first.message
                );
            }
        }
        Command::Train { out, .. } => {
            let ck = if cfg.simaug {
                let (views, anchor) = load_views(&cfg)?;
                pipeline::train_gridnet_simaug(&views, anchor, &cfg.train, &cfg.augment)?
            } else {
                pipeline::train_gridnet(&read_view(cfg.data_dir()?, &cfg.view)?, &cfg.train)?
            };
            write_json(out, &ck)?;
            write_manifest(name, &cfg, out, false, vec![out.clone()])?;
            println!("{}", json!({"epochs": ck.loss_trace.len(), "final_loss": ck.loss_trace.last()}));
        }
        Command::Predict {
            checkpoint,
            bank_data,
            bank_view,
            out,
            ..
        } => {
            let view = read_view(cfg.data_dir()?, &cfg.view)?;
            let preds = match cfg.model {
                ModelKind::Gridnet => {
                    let path = checkpoint.as_ref().ok_or_else(|| anyhow!("gridnet needs --checkpoint"))?;
                    let ck = read_checkpoint(path)?;
                    if ck.params.grid != view.meta.grid {
                        bail!("checkpoint grid differs from the dataset grid");
                    }
                    pipeline::predict(&view, &Predictor::Gridnet(&ck.params), &cfg.beam)?
                }
                ModelKind::Cv => pipeline::predict(&view, &Predictor::ConstantVelocity, &cfg.beam)?,
                ModelKind::Linear => pipeline::predict(&view, &Predictor::Linear, &cfg.beam)?,
                ModelKind::Nn => {
                    let dir = bank_data.as_deref().unwrap_or(cfg.data_dir()?);
                    let bank_view = read_view(dir, bank_view.as_deref().unwrap_or(&cfg.view))?;
                    let bank = pipeline::build_bank(&bank_view)?;
                    pipeline::predict(&view, &Predictor::NearestNeighbor(&bank), &cfg.beam)?
                }
            };
            write_json(out, &preds)?;
            write_manifest(name, &cfg, out, false, vec![out.clone()])?;
        }
        Command::Evaluate { predictions, out, .. } => {
            let view = read_view(cfg.data_dir()?, &cfg.view)?;
            let preds: PredictionFile = read_json(predictions)?;
            let report = pipeline::evaluate(&view, &preds)?;
            write_json(out, &report)?;
            write_manifest(name, &cfg, out, false, vec![out.clone()])?;
            let means: BTreeMap<&str, f64> = report.metrics.iter().map(|(k, v)| (k.as_str(), v.mean)).collect();
            println!("{}", serde_json::to_string(&means)?);
        }
        Command::Augment { checkpoint, out, .. } => {
            let (views, anchor) = load_views(&cfg)?;
            let items = pipeline::simaug_items(&views, anchor)?;
            let grid = views[anchor].meta.grid;
            let params = match checkpoint {
                Some(p) => read_checkpoint(p)?.params,
                None => {
                    let classes = items
                        .first()
                        .map(|it| it.views[anchor].features.channels)
                        .ok_or_else(|| anyhow!("no samples to augment"))?;
                    ModelParams::zeros(grid, cfg.train.radius, classes)?
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.augment.seed);
            let augmented = augment_items(&items, &params, &cfg.augment, &mut rng)?;
            write_json(out, &augmented)?;
            write_manifest(name, &cfg, out, false, vec![out.clone()])?;
        }
        Command::Associate {
            tracklets,
            homographies,
            appearance,
            out,
        } => {
            let (tracklets, homs) = read_tracklets(tracklets, homographies)?;
            let app: Option<Vec<Vec<f64>>> = appearance.as_deref().map(read_json).transpose()?;
            let tracks = associate_tracklets(&tracklets, &homs, app.as_deref(), &cfg.association)?;
            let (tsv, js) = (out.join("global_tracks.tsv"), out.join("global_tracks.json"));
            write_text(&tsv, &format_global_tracks(&tracks))?;
            write_json(&js, &tracks)?;
            write_manifest(name, &cfg, out, true, vec![tsv, js])?;
            println!("{}", json!({"tracklets": tracklets.len(), "global_tracks": tracks.len()}));
        }
        Command::Smooth { input, out, .. } => {
            if input.extension().is_some_and(|x| x == "json") {
                let tracks: Vec<GlobalTrack> = read_json(input)?;
                let smoothed = tracks
                    .iter()
                    .map(|t| smooth_global(t, cfg.smooth_window))
                    .collect::<fpk::Result<Vec<_>>>()?;
                write_json(out, &smoothed)?;
            } else {
                let trajs = read_trajectories(input)?;
                let smoothed = trajs
                    .iter()
                    .map(|t| moving_average(t, cfg.smooth_window))
                    .collect::<fpk::Result<Vec<_>>>()?;
                write_trajectories(out, &smoothed)?;
            }
            write_manifest(name, &cfg, out, false, vec![out.clone()])?;
        }
        Command::PlotHeatmap { predictions, out, .. } => {
            let view = read_view(cfg.data_dir()?, &cfg.view)?;
            let grid = view.meta.grid;
            let preds: PredictionFile = read_json(predictions)?;
            let mut outputs = Vec::new();
            for (id, set) in &preds.samples {
                let beliefs = set
                    .beliefs
                    .as_ref()
                    .ok_or_else(|| anyhow!("sample {id} has no belief maps"))?;
                for (t, b) in beliefs.iter().enumerate() {
                    if b.len() != grid.num_cells() {
                        bail!("sample {id} step {t}: belief has {} cells, grid has {}", b.len(), grid.num_cells());
                    }
                    let stem = out.join(format!("{id}_t{t:03}"));
                    let (txt, img) = (stem.with_extension("txt"), stem.with_extension("pgm"));
                    write_text(&txt, &heatmap::text_grid(b, &grid))?;
                    write_text(&img, &heatmap::pgm(b, &grid))?;
                    outputs.push(txt);
                    outputs.push(img);
                }
            }
            write_manifest(name, &cfg, out, true, outputs)?;
        }
    }
    Ok(())
}

/// `{"error":{"kind":..,"message":..}}` on one line.
fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<fpk::Error>())
        .map_or("cli", fpk::Error::kind);
    let message = err
        .chain()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(": ")
        .replace(['\n', '\r'], " ");
    json!({"error": {"kind": kind, "message": message}}).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": {"kind": "usage", "message": first}}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
