//! Flat run configuration. Files are TOML with dotted keys
//! (`objective.beta = 0.05`); `--set` overrides use the same keys, and a key's
//! last segment alone is accepted when it is unambiguous (`lambda1=0.1`).

use std::collections::BTreeMap;

use super::HarnessError;
use crate::env::EnvKind;
use crate::learner::{Algo, LearnerConfig};
use crate::nets::HistoryKind;
use crate::objective::AlphaMode;

pub const KEYS: &[&str] = &[
    "env",
    "algo",
    "seed",
    "steps",
    "eval_interval",
    "eval_episodes",
    "checkpoint_interval",
    "log_interval",
    "learner.lr",
    "learner.alpha_lr",
    "learner.grad_clip",
    "learner.batch_size",
    "learner.buffer_capacity",
    "learner.warmup",
    "learner.target_interval",
    "learner.train_ratio",
    "learner.gamma",
    "objective.beta",
    "objective.lambda1",
    "objective.lambda2",
    "objective.alpha_mode",
    "objective.alpha_fixed",
    "objective.target_entropy",
    "objective.soft_target",
    "nets.history",
    "nets.hidden",
    "nets.msg_dim",
    "nets.mix_hidden",
    "nets.messages",
    "nets.learned_msg_var",
    "nets.learned_prior",
    "nets.double_q",
    "baselines.epsilon_start",
    "baselines.epsilon_end",
    "baselines.epsilon_steps",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvKind,
    pub learner: LearnerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { env: EnvKind::Matrix, learner: LearnerConfig::default() }
    }
}

/// Resolves a user-supplied key to its canonical dotted form.
pub fn canonical_key(key: &str) -> Result<&'static str, HarnessError> {
    if let Some(k) = KEYS.iter().find(|k| **k == key) {
        return Ok(k);
    }
    let hits: Vec<&'static str> = KEYS.iter().copied().filter(|k| k.rsplit('.').next() == Some(key)).collect();
    match hits.as_slice() {
        [one] => Ok(one),
        [] => Err(HarnessError::Config(format!("unknown config key {key:?}"))),
        _ => Err(HarnessError::Config(format!("ambiguous config key {key:?} (matches {})", hits.join(", ")))),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.trim().parse().map_err(|_| HarnessError::Config(format!("bad value {v:?} for {key}")))
}

fn opt_f64(key: &str, v: &str) -> Result<Option<f64>, HarnessError> {
    match v.trim() {
        "" | "none" | "default" => Ok(None),
        s => parse(key, s).map(Some),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let key = canonical_key(key)?;
        let l = &mut self.learner;
        let v = value.trim();
        match key {
            "env" => self.env = EnvKind::parse(v).map_err(|e| HarnessError::Config(e.to_string()))?,
            "algo" => {
                l.algo = Algo::parse(v)
                    .ok_or_else(|| HarnessError::Config(format!("unknown algo {v:?} (lsf-sac, masac, vdn, qmix)")))?
            }
            "seed" => l.seed = parse(key, v)?,
            "steps" => l.max_env_steps = parse(key, v)?,
            "eval_interval" => l.eval_interval = parse(key, v)?,
            "eval_episodes" => l.eval_episodes = parse(key, v)?,
            "checkpoint_interval" => l.checkpoint_interval = parse(key, v)?,
            "log_interval" => l.log_interval = parse(key, v)?,
            "learner.lr" => l.lr = parse(key, v)?,
            "learner.alpha_lr" => l.alpha_lr = parse(key, v)?,
            "learner.grad_clip" => l.grad_clip = parse(key, v)?,
            "learner.batch_size" => l.batch_size = parse(key, v)?,
            "learner.buffer_capacity" => l.buffer_capacity = parse(key, v)?,
            "learner.warmup" => l.warmup = parse(key, v)?,
            "learner.target_interval" => l.target_interval = parse(key, v)?,
            "learner.train_ratio" => l.train_ratio = parse(key, v)?,
            "learner.gamma" => l.gamma = opt_f64(key, v)?,
            "objective.beta" => l.ib.beta = parse(key, v)?,
            "objective.lambda1" => l.ib.lambda1 = parse(key, v)?,
            "objective.lambda2" => l.ib.lambda2 = parse(key, v)?,
            "objective.alpha_mode" => {
                l.ib.alpha_mode = AlphaMode::parse(v).ok_or_else(|| HarnessError::Config(format!("bad alpha_mode {v:?}")))?
            }
            "objective.alpha_fixed" => l.ib.alpha_fixed = parse(key, v)?,
            "objective.target_entropy" => l.ib.target_entropy = opt_f64(key, v)?,
            "objective.soft_target" => l.ib.soft_target = parse(key, v)?,
            "nets.history" => {
                l.net.history = HistoryKind::parse(v).ok_or_else(|| HarnessError::Config(format!("bad history {v:?}")))?
            }
            "nets.hidden" => l.net.hidden = parse(key, v)?,
            "nets.msg_dim" => l.net.msg_dim = parse(key, v)?,
            "nets.mix_hidden" => l.net.mix_hidden = parse(key, v)?,
            "nets.messages" => l.net.messages = parse(key, v)?,
            "nets.learned_msg_var" => l.net.learned_msg_var = parse(key, v)?,
            "nets.learned_prior" => l.net.learned_prior = parse(key, v)?,
            "nets.double_q" => l.net.double_q = parse(key, v)?,
            "baselines.epsilon_start" => l.epsilon.start = parse(key, v)?,
            "baselines.epsilon_end" => l.epsilon.end = parse(key, v)?,
            "baselines.epsilon_steps" => l.epsilon.steps = parse(key, v)?,
            other => unreachable!("key {other} listed but not handled"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String, HarnessError> {
        let key = canonical_key(key)?;
        let l = &self.learner;
        let opt = |v: Option<f64>| v.map_or_else(|| "\"default\"".to_string(), |x| x.to_string());
        let s = |v: &str| format!("{v:?}");
        Ok(match key {
            "env" => s(self.env.name()),
            "algo" => s(l.algo.name()),
            "seed" => l.seed.to_string(),
            "steps" => l.max_env_steps.to_string(),
            "eval_interval" => l.eval_interval.to_string(),
            "eval_episodes" => l.eval_episodes.to_string(),
            "checkpoint_interval" => l.checkpoint_interval.to_string(),
            "log_interval" => l.log_interval.to_string(),
            "learner.lr" => l.lr.to_string(),
            "learner.alpha_lr" => l.alpha_lr.to_string(),
            "learner.grad_clip" => l.grad_clip.to_string(),
            "learner.batch_size" => l.batch_size.to_string(),
            "learner.buffer_capacity" => l.buffer_capacity.to_string(),
            "learner.warmup" => l.warmup.to_string(),
            "learner.target_interval" => l.target_interval.to_string(),
            "learner.train_ratio" => l.train_ratio.to_string(),
            "learner.gamma" => opt(l.gamma),
            "objective.beta" => l.ib.beta.to_string(),
            "objective.lambda1" => l.ib.lambda1.to_string(),
            "objective.lambda2" => l.ib.lambda2.to_string(),
            "objective.alpha_mode" => s(l.ib.alpha_mode.name()),
            "objective.alpha_fixed" => l.ib.alpha_fixed.to_string(),
            "objective.target_entropy" => opt(l.ib.target_entropy),
            "objective.soft_target" => l.ib.soft_target.to_string(),
            "nets.history" => s(l.net.history.name()),
            "nets.hidden" => l.net.hidden.to_string(),
            "nets.msg_dim" => l.net.msg_dim.to_string(),
            "nets.mix_hidden" => l.net.mix_hidden.to_string(),
            "nets.messages" => l.net.messages.to_string(),
            "nets.learned_msg_var" => l.net.learned_msg_var.to_string(),
            "nets.learned_prior" => l.net.learned_prior.to_string(),
            "nets.double_q" => l.net.double_q.to_string(),
            "baselines.epsilon_start" => l.epsilon.start.to_string(),
            "baselines.epsilon_end" => l.epsilon.end.to_string(),
            "baselines.epsilon_steps" => l.epsilon.steps.to_string(),
            other => unreachable!("key {other} listed but not handled"),
        })
    }

    /// Applies every key of a flat TOML document.
    pub fn merge_toml(&mut self, text: &str) -> Result<(), HarnessError> {
        let table: toml::Table = text.parse().map_err(|e| HarnessError::Config(format!("config file: {e}")))?;
        let mut flat = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut flat)?;
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Every key with its resolved value, as a TOML document that
    /// `merge_toml` reads back to the same configuration.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            out.push_str(&format!("{k} = {}\n", self.get(k).expect("listed key")));
        }
        out
    }

    /// Rejects combinations that have no meaning.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let l = &self.learner;
        if l.algo.value_based() && l.ib.soft_target {
            return Err(HarnessError::Config(format!("soft_target applies to LSF-SAC only, not {}", l.algo.name())));
        }
        l.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) -> Result<(), HarnessError> {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out)?;
            }
        }
        toml::Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        toml::Value::Integer(i) => {
            out.insert(prefix.to_string(), i.to_string());
        }
        toml::Value::Float(f) => {
            out.insert(prefix.to_string(), f.to_string());
        }
        toml::Value::Boolean(b) => {
            out.insert(prefix.to_string(), b.to_string());
        }
        other => return Err(HarnessError::Config(format!("unsupported value for {prefix}: {other}"))),
    }
    Ok(())
}
