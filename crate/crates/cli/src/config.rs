//! Scenario resolution: preset, then the JSON file, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};

use ddfl_core::ExperimentConfig;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::presets::{self, Command, SweepPlan};

/// A configuration problem detected before anything runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Values given as flags; each wins over both preset and file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sampling_time: Option<f64>,
    pub horizon: Option<f64>,
    pub noise: Option<f64>,
}

/// A fully resolved scenario, ready to run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepPlan>,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

/// Recursive object merge; anything that is not an object on both sides is
/// replaced wholesale.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(config_err(format!(
            "{}: top level must be an object",
            path.display()
        ))),
        Err(e) => Err(config_err(format!("{}: {e}", path.display()))),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize to JSON")
}

pub fn resolve(
    command: Command,
    preset: Option<&str>,
    config_file: Option<&Path>,
    overrides: &Overrides,
    output_dir: PathBuf,
) -> Result<ScenarioSpec, ConfigError> {
    let name = match (preset, config_file) {
        (Some(p), _) => p,
        (None, Some(_)) => "custom",
        (None, None) => return Err(config_err("pass --preset NAME or --config FILE")),
    };
    let preset = presets::find(name).ok_or_else(|| {
        let names: Vec<&str> = presets::all().iter().map(|p| p.name).collect();
        config_err(format!(
            "unknown preset {name:?}; known: {}",
            names.join(", ")
        ))
    })?;

    let mut file = match config_file {
        Some(path) => read_config_file(path)?,
        None if preset.config.is_none() => {
            return Err(config_err("preset custom needs --config FILE"))
        }
        None => Map::new(),
    };

    let mut sweep_value = preset.sweep.as_ref().map(to_value);
    if let Some(patch) = file.remove("sweep") {
        match &mut sweep_value {
            Some(v) => merge(v, patch),
            None => sweep_value = Some(patch),
        }
    }
    let sweep: Option<SweepPlan> = sweep_value
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| config_err(format!("sweep section: {e}")))?;

    let mut cfg_value = preset
        .config
        .as_ref()
        .map(to_value)
        .unwrap_or_else(|| Value::Object(Map::new()));
    merge(&mut cfg_value, Value::Object(file));
    let mut config: ExperimentConfig =
        serde_json::from_value(cfg_value).map_err(|e| config_err(e.to_string()))?;

    if let Some(seed) = overrides.seed {
        config.excitation.seed = seed;
    }
    if let Some(t) = overrides.sampling_time {
        if command == Command::Sweep {
            return Err(config_err(
                "--T does not apply to sweeps; set sweep.grid in --config",
            ));
        }
        config.sampling_time = t;
    }
    if let Some(h) = overrides.horizon {
        config.horizon = h;
    }
    if let Some(n) = overrides.noise {
        config.noise.amplitude = n;
    }

    let spec = ScenarioSpec {
        name: name.to_string(),
        config,
        sweep,
        output_dir,
    };
    validate(command, &spec)?;
    Ok(spec)
}

fn validate(command: Command, spec: &ScenarioSpec) -> Result<(), ConfigError> {
    let check = |cfg: &ExperimentConfig| cfg.validate().map_err(|e| config_err(e.to_string()));
    match (command, &spec.sweep) {
        (Command::Run, _) => {
            let preset_is_sweep =
                presets::find(&spec.name).map(|p| p.command) == Some(Command::Sweep);
            if preset_is_sweep {
                return Err(config_err(format!(
                    "preset {} is a sweep; use `ddfl sweep`",
                    spec.name
                )));
            }
            check(&spec.config)
        }
        (Command::Sweep, None) => Err(config_err(format!(
            "preset {} has no sweep section; add one in --config",
            spec.name
        ))),
        (Command::Sweep, Some(plan)) => {
            if plan.grid.is_empty() {
                return Err(config_err("sweep grid is empty"));
            }
            if plan.repeats == 0 {
                return Err(config_err("sweep repeats must be >= 1"));
            }
            if spec.config.mode == ddfl_core::RunMode::ZeroInput {
                return Err(config_err(
                    "sweeps need identification; zero-input mode has none",
                ));
            }
            for &t in &plan.grid {
                let mut cfg = spec.config.clone();
                cfg.sampling_time = t;
                cfg.substeps = None;
                check(&cfg).map_err(|e| config_err(format!("grid point T = {t}: {}", e.0)))?;
            }
            Ok(())
        }
    }
}
