//! Flat `key = value` run configuration with dotted keys.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use saccade_oc::analysis::ModelParams;
use saccade_oc::Discretization;

pub const SEED_ENV: &str = "SACCADE_OC_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Syntax {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid value for {key}: {reason}")]
    Value { key: String, reason: String },
    #[error("{key} refers to {path}, which does not exist")]
    MissingPath { key: String, path: PathBuf },
}

type Result<T> = std::result::Result<T, ConfigError>;

const KNOWN_KEYS: &[&str] = &[
    "plant.tau1",
    "plant.tau2",
    "plant.dt",
    "plant.discretization",
    "cost.q",
    "cost.r_scale",
    "noise.alpha",
    "data.input",
    "data.sample_rate",
    "data.subject",
    "data.seed",
    "data.synthetic.trials_per_target",
    "fit.q_min",
    "fit.q_max",
    "fit.alpha_min",
    "fit.alpha_max",
    "fit.grid_points",
    "run.output",
    "run.fit_result",
    "run.amplitude",
    "run.direction",
    "run.trials",
];

/// A fittable parameter: a fixed number or left to the fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Fixed(f64),
    Fit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Recording {
        path: PathBuf,
        sample_rate: f64,
        subject: String,
    },
    Synthetic {
        trials_per_target: usize,
        sample_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub dt: f64,
    pub discretization: Discretization,
    /// `None` when the key is absent and the command picks its own default.
    pub q: Option<Param>,
    pub r_scale: f64,
    pub alpha: Option<Param>,
    pub data: DataSource,
    pub seed: u64,
    pub q_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub grid_points: usize,
    pub output: PathBuf,
    pub fit_result: Option<PathBuf>,
    pub amplitude: f64,
    pub direction: f64,
    pub trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = ModelParams::standard(0.0, 0.0);
        Self {
            tau1: p.tau1,
            tau2: p.tau2,
            dt: p.dt,
            discretization: p.discretization,
            q: None,
            r_scale: p.r_scale,
            alpha: None,
            data: DataSource::Synthetic {
                trials_per_target: 20,
                sample_rate: 240.0,
            },
            seed: 1,
            q_range: (1e2, 1e10),
            alpha_range: (1e-4, 1.0),
            grid_points: 25,
            output: PathBuf::from("."),
            fit_result: None,
            amplitude: 12.0,
            direction: 180.0,
            trials: 0,
        }
    }
}

fn parse_entries(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |reason: String| ConfigError::Syntax {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KNOWN_KEYS.contains(&key) {
            return Err(syntax(format!("unknown key `{key}`")));
        }
        if value.is_empty() {
            return Err(syntax(format!("`{key}` has no value")));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(syntax(format!("`{key}` given twice")));
        }
    }
    Ok(map)
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        reason: format!("`{value}`: {e}"),
    })
}

fn param(key: &str, value: &str) -> Result<Param> {
    if value.eq_ignore_ascii_case("fit") {
        Ok(Param::Fit)
    } else {
        number(key, value).map(Param::Fixed)
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_entries(parse_entries(&text, path)?, base)
    }

    #[cfg(test)]
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        Self::from_entries(parse_entries(text, Path::new("<inline>"))?, base)
    }

    fn from_entries(map: BTreeMap<String, String>, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let get = |k: &str| map.get(k).map(String::as_str);
        let resolve = |k: &str, v: &str| -> Result<PathBuf> {
            let p = base.join(v);
            if p.exists() {
                Ok(p)
            } else {
                Err(ConfigError::MissingPath {
                    key: k.to_string(),
                    path: p,
                })
            }
        };
        if let Some(v) = get("plant.tau1") {
            cfg.tau1 = number("plant.tau1", v)?;
        }
        if let Some(v) = get("plant.tau2") {
            cfg.tau2 = number("plant.tau2", v)?;
        }
        if let Some(v) = get("plant.dt") {
            cfg.dt = number("plant.dt", v)?;
        }
        if let Some(v) = get("plant.discretization") {
            cfg.discretization = match v {
                "exact" => Discretization::ExactExponential,
                "first-order" => Discretization::FirstOrder,
                other => {
                    return Err(ConfigError::Value {
                        key: "plant.discretization".into(),
                        reason: format!("`{other}` is neither `exact` nor `first-order`"),
                    })
                }
            };
        }
        if let Some(v) = get("cost.q") {
            cfg.q = Some(param("cost.q", v)?);
        }
        if let Some(v) = get("cost.r_scale") {
            cfg.r_scale = number("cost.r_scale", v)?;
        }
        if let Some(v) = get("noise.alpha") {
            cfg.alpha = Some(param("noise.alpha", v)?);
        }
        let sample_rate = get("data.sample_rate")
            .map(|v| number("data.sample_rate", v))
            .transpose()?
            .unwrap_or(240.0);
        cfg.data = match get("data.input") {
            Some(v) => {
                if get("data.synthetic.trials_per_target").is_some() {
                    return Err(ConfigError::Value {
                        key: "data.input".into(),
                        reason: "a recording and a synthetic subject are both configured".into(),
                    });
                }
                DataSource::Recording {
                    path: resolve("data.input", v)?,
                    sample_rate,
                    subject: get("data.subject").unwrap_or("subject").to_string(),
                }
            }
            None => DataSource::Synthetic {
                trials_per_target: get("data.synthetic.trials_per_target")
                    .map(|v| number("data.synthetic.trials_per_target", v))
                    .transpose()?
                    .unwrap_or(20),
                sample_rate,
            },
        };
        if let Some(v) = get("data.seed") {
            cfg.seed = number("data.seed", v)?;
        }
        if let Some(v) = get("fit.q_min") {
            cfg.q_range.0 = number("fit.q_min", v)?;
        }
        if let Some(v) = get("fit.q_max") {
            cfg.q_range.1 = number("fit.q_max", v)?;
        }
        if let Some(v) = get("fit.alpha_min") {
            cfg.alpha_range.0 = number("fit.alpha_min", v)?;
        }
        if let Some(v) = get("fit.alpha_max") {
            cfg.alpha_range.1 = number("fit.alpha_max", v)?;
        }
        if let Some(v) = get("fit.grid_points") {
            cfg.grid_points = number("fit.grid_points", v)?;
        }
        if let Some(v) = get("run.output") {
            cfg.output = base.join(v);
        }
        if let Some(v) = get("run.fit_result") {
            cfg.fit_result = Some(resolve("run.fit_result", v)?);
        }
        if let Some(v) = get("run.amplitude") {
            cfg.amplitude = number("run.amplitude", v)?;
        }
        if let Some(v) = get("run.direction") {
            cfg.direction = number("run.direction", v)?;
        }
        if let Some(v) = get("run.trials") {
            cfg.trials = number("run.trials", v)?;
        }
        Ok(cfg)
    }

    /// Applies `SACCADE_OC_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = number(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    pub fn model(&self, q: f64, alpha: f64) -> ModelParams {
        ModelParams {
            q,
            alpha,
            r_scale: self.r_scale,
            tau1: self.tau1,
            tau2: self.tau2,
            dt: self.dt,
            discretization: self.discretization,
        }
    }
}
