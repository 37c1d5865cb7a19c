use anyhow::{bail, Context, Result};
use bess_core::simulator::SimulationConfig;
use bess_core::{BatteryConfig, PriceSet, TimeGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapSettings {
    pub n_u: usize,
    pub n_l: usize,
    pub n_sc: usize,
    pub alpha: f64,
}

impl Default for GapSettings {
    fn default() -> Self {
        Self {
            n_u: 10_000,
            n_l: 10,
            n_sc: 250,
            alpha: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyGrids {
    pub epsilons: Vec<f64>,
    pub c_rates: Vec<f64>,
    pub reserve_prices: Vec<f64>,
}

impl Default for StudyGrids {
    fn default() -> Self {
        Self {
            epsilons: vec![1e-4, 1e-3, 1e-2, 1e-1],
            c_rates: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            reserve_prices: vec![0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0],
        }
    }
}

/// Everything a command needs besides its input artifacts. Loaded from one
/// JSON document, then patched by command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: TimeGrid,
    pub battery: BatteryConfig,
    pub prices: PriceSet,
    pub epsilon: f64,
    pub train_fraction: f64,
    pub fold: bool,
    pub clamp_deviation: bool,
    pub max_gap_s: u64,
    pub seed: Option<u64>,
    pub frequency_csv: Option<PathBuf>,
    pub scenario_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub simulation: SimulationConfig,
    pub n_samples: usize,
    pub gap: GapSettings,
    pub study: StudyGrids,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: TimeGrid::hourly_day(),
            battery: BatteryConfig::residential(),
            prices: PriceSet::german_residential(),
            epsilon: 0.01,
            train_fraction: 0.7,
            fold: true,
            clamp_deviation: true,
            max_gap_s: 60,
            seed: None,
            frequency_csv: None,
            scenario_csv: None,
            out_dir: PathBuf::from("out"),
            simulation: SimulationConfig::default(),
            n_samples: 10_000,
            gap: GapSettings::default(),
            study: StudyGrids::default(),
        }
    }
}

impl RunConfig {
    /// Reads the optional config file and applies `key.path=value`
    /// overrides. Values parse as JSON where possible, else as strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(Self::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
            merge(&mut doc, file);
        }
        for item in overrides {
            let Some((key, raw)) = item.split_once('=') else {
                bail!("override {item:?} is not of the form key=value");
            };
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: Self = serde_json::from_value(doc).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.battery.validate()?;
        self.prices.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bail!("epsilon must lie in (0, 1), got {}", self.epsilon);
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1), got {}", self.train_fraction);
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .context("this command is stochastic and needs a seed (--seed or \"seed\" in the config)")
    }
}

/// Overlays `patch` onto `base`, recursing into objects present in both.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
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

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            bail!("override {key}: {} is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}
