//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Keys must appear in [`KEYS`];
//! a key of the form `sweep.<key>` holds a comma-separated list of values
//! for the sweep command. An empty value means "use the built-in default of
//! the component", so the same key can default differently for, say, the
//! rotated task sequence and the two-task toy.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{HarnessError, Result};

/// Every accepted key with its default value.
pub const KEYS: &[(&str, &str)] = &[
    // data
    ("dataset", "distractor"),
    ("n", ""),
    ("valid_n", "1000"),
    ("test_n", "4000"),
    ("minority_ratio", ""),
    ("sigma", ""),
    ("minority_offset", ""),
    ("vocab_size", ""),
    ("seq_len", ""),
    ("bias", ""),
    ("signal", ""),
    ("purity", ""),
    ("label_noise", "0"),
    ("train_csv", ""),
    ("valid_csv", ""),
    ("test_csv", ""),
    // model
    ("model", ""),
    ("hidden_units", "16"),
    ("embed_dim", "16"),
    // training
    ("method", "erm"),
    ("lr", ""),
    ("tau", ""),
    ("kappa", ""),
    ("k_window", ""),
    ("adv_lr", ""),
    ("eta_group", ""),
    ("beta", ""),
    ("norm_mode", ""),
    ("adv_objective", ""),
    ("project", ""),
    ("adv_steps", ""),
    ("adv_sigma", ""),
    ("epochs", ""),
    ("batch_size", ""),
    ("selection", ""),
    ("selection_loss", ""),
    ("kl_threshold", ""),
    ("checkpoint_every", "0"),
    ("log_every", "1"),
    // continual
    ("cl_task", "rotated"),
    ("cl_method", "finetune"),
    ("epochs_per_task", ""),
    ("alpha", ""),
    ("gamma", ""),
    ("ewc_lambda", ""),
    ("memory_capacity", ""),
    ("fisher_samples", ""),
    ("heads", ""),
    ("grad_noise", ""),
    ("num_tasks", ""),
    ("train_per_task", ""),
    ("test_per_task", ""),
    ("dim", ""),
    ("separation", ""),
    ("feature_decay", ""),
    ("points_per_task", ""),
    ("t1_steps", ""),
    ("t2_steps", ""),
    ("damping_sweep", ""),
    // attack
    ("model_path", ""),
    ("attack", "first_order"),
    ("constraint", "none"),
    ("knn_k", "10"),
    ("sign_normalize", "false"),
    ("substitutions", "1"),
    ("max_scrambling", "3"),
    ("unk_id", ""),
    ("attack_n", "200"),
    ("adv_train_epochs", "0"),
    ("adv_train_alpha", "0.5"),
    // sweep and report
    ("threads", "0"),
    ("report_dir", ""),
];

pub const SWEEP_PREFIX: &str = "sweep.";

/// The `(key, value)` assignments of one grid point and its full config.
pub type GridPoint = (Vec<(String, String)>, RunConfig);

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    sweep: BTreeMap<String, Vec<String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Syntax { line: i + 1, message: format!("expected key = value, got {line:?}") })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(inner) = key.strip_prefix(SWEEP_PREFIX) {
            if default_of(inner).is_none() {
                return Err(HarnessError::UnknownKey(key.to_string()));
            }
            let list: Vec<String> = value.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            if list.is_empty() {
                return Err(HarnessError::BadValue { key: key.into(), value: value.into(), reason: "empty list".into() });
            }
            self.sweep.insert(inner.to_string(), list);
            return Ok(());
        }
        if default_of(key).is_none() {
            return Err(HarnessError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| HarnessError::Syntax { line: 0, message: format!("override {spec:?} is not key=value") })?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some(v) => v,
            None => default_of(key).unwrap_or_else(|| panic!("key {key:?} missing from the key table")),
        }
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.raw(key);
        v.parse().map_err(|e: T::Err| HarnessError::BadValue { key: key.into(), value: v.into(), reason: e.to_string() })
    }

    /// `None` when the value is empty.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.is_set(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: T::Err| HarnessError::BadValue { key: key.into(), value: s.into(), reason: e.to_string() })
            })
            .collect()
    }

    pub fn sweep_axes(&self) -> &BTreeMap<String, Vec<String>> {
        &self.sweep
    }

    /// Cartesian product of the sweep axes applied on top of this config
    /// (sweep keys removed). Order: last axis varies fastest.
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        let mut base = self.clone();
        base.sweep.clear();
        let mut points = vec![(Vec::new(), base)];
        for (key, values) in &self.sweep {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for (assign, cfg) in &points {
                for v in values {
                    let mut cfg = cfg.clone();
                    cfg.set(key, v)?;
                    let mut assign = assign.clone();
                    assign.push((key.clone(), v.clone()));
                    next.push((assign, cfg));
                }
            }
            points = next;
        }
        Ok(points)
    }

    /// Every key with its effective value, sorted by key.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|(k, _)| (k.to_string(), self.raw(k).to_string())).collect()
    }

    /// Canonical text form: explicitly set keys, sorted, then sweep axes.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in &self.sweep {
            out.push_str(&format!("{SWEEP_PREFIX}{k} = {}\n", v.join(",")));
        }
        out
    }
}

/// Parses a boolean the way config files spell them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Flag(pub bool);

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "true" | "1" | "yes" | "on" => Ok(Flag(true)),
            "false" | "0" | "no" | "off" => Ok(Flag(false)),
            other => Err(format!("not a boolean: {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = RunConfig::parse("# header\nmethod = rpdro\n\ntau=0.01 # inline\n").unwrap();
        assert_eq!(c.raw("method"), "rpdro");
        assert_eq!(c.get::<f64>("tau").unwrap(), 0.01);
        c.apply_override("tau=1").unwrap();
        assert_eq!(c.get::<f64>("tau").unwrap(), 1.0);
        assert_eq!(c.raw("epochs"), "");
        assert_eq!(c.opt::<usize>("epochs").unwrap(), None);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("methd = erm").unwrap_err();
        assert!(err.to_string().contains("methd"), "{err}");
        assert!(RunConfig::parse("sweep.nope = 1,2").is_err());
        assert!(RunConfig::default().apply_override("bogus=1").is_err());
    }

    #[test]
    fn bad_value_names_key() {
        let c = RunConfig::parse("epochs = many").unwrap();
        let err = c.get::<usize>("epochs").unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }

    #[test]
    fn grid_is_cartesian() {
        let c = RunConfig::parse("sweep.tau = 0.1, 1\nsweep.kappa = 1,2,3\n").unwrap();
        let g = c.grid().unwrap();
        assert_eq!(g.len(), 6);
        assert_eq!(g[1].0, vec![("kappa".to_string(), "1".to_string()), ("tau".to_string(), "1".to_string())]);
        assert!(g.iter().all(|(_, cfg)| cfg.sweep_axes().is_empty()));
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::parse("tau = 0.5\nsweep.kappa = 1,2\n").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn flags() {
        assert_eq!("on".parse::<Flag>().unwrap(), Flag(true));
        assert!("maybe".parse::<Flag>().is_err());
    }
}
