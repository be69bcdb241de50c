//! Run configuration: one JSON document, defaults filled in, then `--set`
//! overrides, `FPK_SEED`, and command-line flags, in that order.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fpk::gridnet::{BeamConfig, TrainConfig};
use fpk::multiview::{AssociationConfig, DEFAULT_WINDOW};
use fpk::pipeline::ModelKind;
use fpk::scenario::ScenarioConfig;
use fpk::simaug::AugConfig;
use fpk::{GridSpec, Horizon};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SEED_ENV: &str = "FPK_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HorizonPreset {
    Short,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HorizonSpec {
    Preset(HorizonPreset),
    Custom(Horizon),
}

impl HorizonSpec {
    pub fn resolve(&self) -> Result<Horizon> {
        let h = match self {
            HorizonSpec::Preset(HorizonPreset::Short) => Horizon::SHORT,
            HorizonSpec::Preset(HorizonPreset::Long) => Horizon::LONG,
            HorizonSpec::Custom(h) => *h,
        };
        if h.obs < 1 || h.pred < 1 {
            bail!("horizon lengths must be >= 1, got obs {} pred {}", h.obs, h.pred);
        }
        Ok(h)
    }
}

/// Everything a run needs. `seed`, `grid` and `horizon` are copied into the
/// nested scenario, training and augmentation configs on resolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub horizon: HorizonSpec,
    pub grid: GridSpec,
    /// Dataset directory written by `generate`.
    pub data: Option<PathBuf>,
    /// View used for training, prediction and evaluation.
    pub view: String,
    /// Views available to SimAug; empty means every view in the dataset.
    pub views: Vec<String>,
    pub model: ModelKind,
    pub simaug: bool,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub augment: AugConfig,
    pub beam: BeamConfig,
    pub association: AssociationConfig,
    pub smooth_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        ExperimentConfig {
            seed: 0,
            horizon: HorizonSpec::Preset(HorizonPreset::Short),
            grid: scenario.grid,
            data: None,
            view: "view_0".into(),
            views: Vec::new(),
            model: ModelKind::Gridnet,
            simaug: false,
            scenario,
            train: TrainConfig::default(),
            augment: AugConfig::default(),
            beam: BeamConfig::new(3, 1.0),
            association: AssociationConfig::default(),
            smooth_window: DEFAULT_WINDOW,
        }
    }
}

impl ExperimentConfig {
    /// Builds the config from an optional file, `key.path=json` overrides,
    /// the seed environment variable and flag overrides.
    pub fn load(path: Option<&Path>, sets: &[String], env_seed: Option<&str>, flags: &[(&str, Value)]) -> Result<Self> {
        let mut value = serde_json::to_value(ExperimentConfig::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("{}: cannot read config", p.display()))?;
            let user: Value =
                serde_json::from_str(&text).with_context(|| format!("{}: config is not valid JSON", p.display()))?;
            if !user.is_object() {
                bail!("{}: config must be a JSON object", p.display());
            }
            merge(&mut value, user);
        }
        for s in sets {
            let (key, raw) = s.split_once('=').ok_or_else(|| anyhow!("override {s:?} is not key=value"))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, v)?;
        }
        if let Some(s) = env_seed {
            let seed: u64 = s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?;
            set_path(&mut value, "seed", Value::from(seed))?;
        }
        for (key, v) in flags {
            set_path(&mut value, key, v.clone())?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(value).context("invalid config")?;
        cfg.resolve()?;
        Ok(cfg)
    }

    fn resolve(&mut self) -> Result<()> {
        let horizon = self.horizon.resolve()?;
        self.grid.validate()?;
        self.scenario.grid = self.grid;
        self.scenario.horizon = horizon;
        self.scenario.seed = self.seed;
        self.train.seed = self.seed;
        self.augment.seed = self.seed;
        if self.smooth_window < 1 {
            bail!("smooth_window must be >= 1");
        }
        if self.beam.k < 1 || !(self.beam.gamma0 >= 0.0) {
            bail!("beam needs k >= 1 and gamma0 >= 0");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| anyhow!("no dataset directory (set \"data\" or pass --data)"))
    }
}

/// Recursive object merge; anything else in `over` replaces `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c` in a JSON object tree, creating objects on the way.
pub fn set_path(root: &mut Value, key: &str, v: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("bad config key {key:?}");
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        if cur.get(*p).is_none_or(|c| !c.is_object()) {
            cur.as_object_mut()
                .ok_or_else(|| anyhow!("config key {key:?} goes through a non-object"))?
                .insert((*p).to_string(), Value::Object(Default::default()));
        }
        cur = cur.get_mut(*p).expect("just inserted");
    }
    cur.as_object_mut()
        .ok_or_else(|| anyhow!("config key {key:?} goes through a non-object"))?
        .insert(parts[parts.len() - 1].to_string(), v);
    Ok(())
}
