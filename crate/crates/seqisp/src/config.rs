//! Plain `key = value` run configuration.
//!
//! Unknown keys are errors, missing keys fall back to documented defaults,
//! duplicate keys are rejected so parsing is order-independent. `#` starts
//! a comment.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::ModuleId;
use crate::objective::TaskKind;
use crate::policy::{ModulePool, PolicyKind};
use crate::trainer::{TrainConfig, UpdateSchedule};

pub const CONFIG_KEYS: &[&str] = &[
    "batch_size",
    "iterations",
    "lr_param",
    "lr_seq",
    "tau_max",
    "tau_min",
    "tau_half_life",
    "alpha1",
    "alpha2",
    "i_low",
    "i_high",
    "length_penalty",
    "update_schedule",
    "seed",
    "data_seed",
    "eval_interval",
    "pool",
    "task",
    "policy",
    "baseline",
    "n_train",
    "n_eval",
    "image_size",
];

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut seen: Vec<String> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        if seen.iter().any(|k| k == key) {
            return Err(Error::Config(format!("duplicate key {key:?}")));
        }
        seen.push(key.to_string());

        let bad = |what: &str| Error::Config(format!("key {key}: invalid {what} {value:?}"));
        match key {
            "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "iterations" => cfg.iterations = value.parse().map_err(|_| bad("integer"))?,
            "lr_param" => cfg.lr_param = value.parse().map_err(|_| bad("number"))?,
            "lr_seq" => cfg.lr_seq = value.parse().map_err(|_| bad("number"))?,
            "tau_max" => cfg.temperature.tau_max = value.parse().map_err(|_| bad("number"))?,
            "tau_min" => cfg.temperature.tau_min = value.parse().map_err(|_| bad("number"))?,
            "tau_half_life" => {
                cfg.temperature.half_life = value.parse().map_err(|_| bad("number"))?
            }
            "alpha1" => cfg.penalty.alpha1 = value.parse().map_err(|_| bad("number"))?,
            "alpha2" => cfg.penalty.alpha2 = value.parse().map_err(|_| bad("number"))?,
            "i_low" => cfg.penalty.i_low = value.parse().map_err(|_| bad("number"))?,
            "i_high" => cfg.penalty.i_high = value.parse().map_err(|_| bad("number"))?,
            "length_penalty" => {
                cfg.penalty.length_penalty = value.parse().map_err(|_| bad("number"))?
            }
            "update_schedule" => {
                cfg.schedule =
                    UpdateSchedule::from_name(value).ok_or_else(|| bad("schedule"))?
            }
            "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
            "data_seed" => cfg.data_seed = value.parse().map_err(|_| bad("integer"))?,
            "eval_interval" => cfg.eval_interval = value.parse().map_err(|_| bad("integer"))?,
            "pool" => {
                let mut modules = Vec::new();
                for name in value.split(',') {
                    let name = name.trim();
                    let m = ModuleId::from_name(name)
                        .ok_or_else(|| Error::Config(format!("unknown module {name:?}")))?;
                    modules.push(m);
                }
                cfg.pool = ModulePool::from_modules(&modules);
            }
            "task" => cfg.task = TaskKind::from_name(value).ok_or_else(|| bad("task"))?,
            "policy" => {
                cfg.policy_kind = PolicyKind::from_name(value).ok_or_else(|| bad("policy"))?
            }
            "baseline" => {
                cfg.baseline = match value {
                    "on" => true,
                    "off" => false,
                    _ => return Err(bad("flag (on|off)")),
                }
            }
            "n_train" => cfg.n_train = value.parse().map_err(|_| bad("integer"))?,
            "n_eval" => cfg.n_eval = value.parse().map_err(|_| bad("integer"))?,
            "image_size" => cfg.image_size = value.parse().map_err(|_| bad("integer"))?,
            _ => unreachable!(),
        }
    }

    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if cfg.lr_param <= 0.0 || cfg.lr_seq <= 0.0 {
        return Err(Error::Config("learning rates must be positive".into()));
    }
    if cfg.penalty.i_low >= cfg.penalty.i_high {
        return Err(Error::Config("i_low must be below i_high".into()));
    }
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_config(&text)
}
