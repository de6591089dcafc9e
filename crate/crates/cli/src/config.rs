//! Training config assembly: defaults, then a JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use coe_core::trainer::TrainConfig;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON training config; missing fields keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any field by dotted path, e.g. `--set rewards.alpha=0.5`.
    /// The value is read as JSON, falling back to a plain string.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub kl_coeff: Option<f64>,
    #[arg(long)]
    pub clip_epsilon: Option<f64>,
    #[arg(long)]
    pub sft_epochs: Option<usize>,
    #[arg(long)]
    pub train_tasks: Option<usize>,
    #[arg(long)]
    pub eval_tasks: Option<usize>,
    /// Target event-chain length.
    #[arg(long)]
    pub event_length: Option<usize>,
    /// `video-level` or `frame-averaged`.
    #[arg(long)]
    pub similarity_mode: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_new: Option<usize>,
}

impl ConfigArgs {
    /// Dedicated flags as `(dotted path, value)` pairs.
    fn flag_overrides(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        let mut put = |path: &'static str, v: Option<Value>| {
            if let Some(v) = v {
                out.push((path, v));
            }
        };
        // --seed moves the policy and the world together
        put("seed", self.seed.map(Value::from));
        put("world.seed", self.seed.map(Value::from));
        put("steps", self.steps.map(Value::from));
        put("group_size", self.group_size.map(Value::from));
        put("learning_rate", self.learning_rate.map(Value::from));
        put("kl_coeff", self.kl_coeff.map(Value::from));
        put("clip_epsilon", self.clip_epsilon.map(Value::from));
        put("sft_epochs", self.sft_epochs.map(Value::from));
        put("train_tasks", self.train_tasks.map(Value::from));
        put("eval_tasks", self.eval_tasks.map(Value::from));
        put("rewards.target_length", self.event_length.map(Value::from));
        put("similarity_mode", self.similarity_mode.clone().map(Value::from));
        put("temperature", self.temperature.map(Value::from));
        put("max_new", self.max_new.map(Value::from));
        out
    }

    /// Defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut value = serde_json::to_value(TrainConfig::default())?;
        if let Some(path) = &self.config {
            let file = read_json(path)?;
            merge(&mut value, &file, "").map_err(|m| CliError::Config(format!("{}: {m}", path.display())))?;
        }
        for set in &self.sets {
            let (path, raw) = set
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects PATH=VALUE, got {set:?}")))?;
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, path, v)?;
        }
        for (path, v) in self.flag_overrides() {
            set_path(&mut value, path, v)?;
        }
        let config: TrainConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    // serde_json reports line and column
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Recursive overlay that rejects keys the base does not have.
fn merge(base: &mut Value, over: &Value, at: &str) -> Result<(), String> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let here = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(format!("unknown config field {here:?}")),
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

fn set_path(value: &mut Value, path: &str, v: Value) -> CliResult<()> {
    let mut over = v;
    for key in path.rsplit('.') {
        let mut m = Map::new();
        m.insert(key.to_string(), over);
        over = Value::Object(m);
    }
    merge(value, &over, "").map_err(CliError::Config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_sets_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"steps": 7, "group_size": 8, "rewards": {"alpha": 0.5}}"#).unwrap();
        let args = ConfigArgs {
            config: Some(path),
            sets: vec!["group_size=2".into(), "similarity_mode=frame-averaged".into()],
            steps: Some(3),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.steps, 3);
        assert_eq!(c.group_size, 2);
        assert_eq!(c.rewards.alpha, 0.5);
        assert_eq!(c.rewards.beta, TrainConfig::default().rewards.beta);
        assert_eq!(c.similarity_mode.to_string(), "frame-averaged");
    }

    #[test]
    fn unknown_fields_and_bad_values_are_config_errors() {
        let unknown = ConfigArgs {
            sets: vec!["nope=1".into()],
            ..Default::default()
        };
        assert!(matches!(unknown.resolve(), Err(CliError::Config(_))));
        let invalid = ConfigArgs {
            group_size: Some(1),
            ..Default::default()
        };
        assert!(invalid.resolve().unwrap_err().is_config());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\n  \"steps\": 3,\n  oops\n}").unwrap();
        let broken = ConfigArgs {
            config: Some(path),
            ..Default::default()
        };
        let msg = broken.resolve().unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn seed_moves_world_too() {
        let c = ConfigArgs {
            seed: Some(5),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((c.seed, c.world.seed), (5, 5));
    }
}
