//! TOML run configuration.
//!
//! ```toml
//! [model]
//! name = "tcp"
//! flow = { variant = "additive", c = 1.0 }
//! f = { kappa = 0.5 }
//! rate = { variant = "power", scale = 1.0, exponent = 0.0 }
//!
//! [estimation]
//! a_max = 6.0
//! interval = [0.2, 4.0]
//! sigma = 2.0
//! sigma_prime = 0.0
//!
//! [experiment]
//! n = 100000
//! n_values = [1000, 10000, 100000]
//! replicates = 50
//! base_seed = 0
//! z0 = 1.0
//!
//! [io]
//! output_dir = "out"
//! grid_points = 513
//! ```
//!
//! Every section but `model` may be omitted. [`RunConfig::effective`] fills in
//! the defaults, including the table interval for the preset models.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisSpec;
use crate::bench::{default_interval, ExperimentConfig};
use crate::density::Penalty;
use crate::jumprate::{EvalGrid, Interval};
use crate::model::{FlowSpec, JumpRateSpec, ModelSpec, TransitionMap};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub name: Option<String>,
    pub flow: FlowSection,
    #[serde(default)]
    pub f: MapSection,
    pub rate: RateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSection {
    Additive {
        #[serde(default = "one")]
        c: f64,
    },
    Exponential {
        #[serde(default = "one")]
        c: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    #[serde(default = "half")]
    pub kappa: f64,
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection { kappa: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateSection {
    Power {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        exponent: f64,
    },
    ShiftedQuadratic {
        center: f64,
        #[serde(default)]
        offset: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    #[serde(default = "six")]
    pub a_max: f64,
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
    #[serde(default = "two")]
    pub sigma: f64,
    #[serde(default)]
    pub sigma_prime: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        EstimationSection {
            a_max: 6.0,
            interval: None,
            sigma: 2.0,
            sigma_prime: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Chain length for `simulate` and `estimate`.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_values")]
    pub n_values: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Initial state of every chain.
    #[serde(default = "one")]
    pub z0: f64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            n: default_n(),
            n_values: default_n_values(),
            replicates: default_replicates(),
            base_seed: 0,
            z0: 1.0,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Write measured times into the bench CSV; `false` writes zeros.
    #[serde(default = "yes")]
    pub record_timing: bool,
    /// Also write the per-replicate grid TSVs from `bench`.
    #[serde(default)]
    pub write_grids: bool,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            output_dir: default_out(),
            grid_points: default_grid_points(),
            record_timing: true,
            write_grids: false,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn two() -> f64 {
    2.0
}
fn six() -> f64 {
    6.0
}
fn yes() -> bool {
    true
}
fn default_n() -> usize {
    100_000
}
fn default_n_values() -> Vec<usize> {
    vec![100, 1_000, 10_000, 100_000]
}
fn default_replicates() -> usize {
    50
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_grid_points() -> usize {
    crate::jumprate::DEFAULT_GRID_POINTS
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The configuration with every default written out.
    pub fn effective(&self) -> Result<Self, ConfigError> {
        let mut cfg = self.clone();
        let model = self.model_spec()?;
        if cfg.model.name.is_none() {
            cfg.model.name = Some(model.name.clone());
        }
        if cfg.estimation.interval.is_none() {
            let i = self.interval()?;
            cfg.estimation.interval = Some([i.lo, i.hi]);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model_spec()?;
        BasisSpec::new(self.estimation.a_max)
            .map_err(|e| ConfigError::invalid("estimation.a_max", e.to_string()))?;
        self.penalty()?;
        if let Some([lo, hi]) = self.estimation.interval {
            Interval::new(lo, hi).map_err(|_| {
                ConfigError::invalid("estimation.interval", format!("need 0 < lo < hi, got [{lo}, {hi}]"))
            })?;
        }
        let ex = &self.experiment;
        if ex.n < crate::jumprate::MIN_TRANSITIONS {
            return Err(ConfigError::invalid(
                "experiment.n",
                format!("must be >= {}, got {}", crate::jumprate::MIN_TRANSITIONS, ex.n),
            ));
        }
        if ex.n_values.is_empty() || ex.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::invalid(
                "experiment.n_values",
                "must be nonempty and strictly increasing",
            ));
        }
        if let Some(&n) = ex.n_values.iter().find(|&&n| n < crate::jumprate::MIN_TRANSITIONS) {
            return Err(ConfigError::invalid(
                "experiment.n_values",
                format!("every n must be >= {}, got {n}", crate::jumprate::MIN_TRANSITIONS),
            ));
        }
        if ex.replicates == 0 {
            return Err(ConfigError::invalid("experiment.replicates", "must be >= 1"));
        }
        if !(ex.z0 > 0.0) || !ex.z0.is_finite() {
            return Err(ConfigError::invalid("experiment.z0", format!("must be > 0, got {}", ex.z0)));
        }
        if ex.threads == Some(0) {
            return Err(ConfigError::invalid("experiment.threads", "must be >= 1"));
        }
        validate_grid_points(self.io.grid_points)?;
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let m = &self.model;
        let flow = match m.flow {
            FlowSection::Additive { c } => FlowSpec::additive(c),
            FlowSection::Exponential { c } => FlowSpec::exponential(c),
        }
        .map_err(|e| ConfigError::invalid("model.flow.c", e.to_string()))?;
        let map = TransitionMap::new(m.f.kappa)
            .map_err(|_| ConfigError::invalid("model.f.kappa", format!("must lie in (0, 1), got {}", m.f.kappa)))?;
        let rate = match m.rate {
            RateSection::Power { scale, exponent } => JumpRateSpec::power(scale, exponent),
            RateSection::ShiftedQuadratic { center, offset } => {
                JumpRateSpec::shifted_quadratic(center, offset)
            }
        }
        .map_err(|e| match e {
            crate::Error::InvalidParameter { name, reason } => {
                ConfigError::invalid(&format!("model.{name}"), reason)
            }
            other => ConfigError::invalid("model.rate", other.to_string()),
        })?;
        let name = m.name.clone().unwrap_or_else(|| {
            let fam = match flow {
                FlowSpec::Additive { .. } => "tcp",
                FlowSpec::Exponential { .. } => "bacterial",
            };
            format!("{fam} kappa={} c={} rate={}", map.kappa(), flow.speed(), rate.label())
        });
        if name.contains(';') || name.contains('\n') {
            return Err(ConfigError::invalid("model.name", "must not contain ';' or newlines"));
        }
        Ok(ModelSpec::new(name, flow, map, rate))
    }

    pub fn interval(&self) -> Result<Interval, ConfigError> {
        match self.estimation.interval {
            Some([lo, hi]) => Interval::new(lo, hi)
                .map_err(|_| ConfigError::invalid("estimation.interval", format!("need 0 < lo < hi, got [{lo}, {hi}]"))),
            None => default_interval(&self.model_spec()?).ok_or_else(|| {
                ConfigError::invalid(
                    "estimation.interval",
                    "required: the model matches no preset with a default interval",
                )
            }),
        }
    }

    pub fn basis(&self) -> BasisSpec {
        BasisSpec::new(self.estimation.a_max).expect("validated")
    }

    pub fn penalty(&self) -> Result<Penalty, ConfigError> {
        Penalty::new(self.estimation.sigma, self.estimation.sigma_prime).map_err(|e| match e {
            crate::Error::InvalidParameter { name, reason } => ConfigError::invalid(name, reason),
            other => ConfigError::invalid("estimation", other.to_string()),
        })
    }

    pub fn grid(&self) -> Result<EvalGrid, ConfigError> {
        EvalGrid::new(self.interval()?, self.io.grid_points)
            .map_err(|e| ConfigError::invalid("io.grid_points", e.to_string()))
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut ex = ExperimentConfig::new(self.model_spec()?, self.interval()?, self.experiment.n_values.clone());
        ex.basis = self.basis();
        ex.replicates = self.experiment.replicates;
        ex.penalty = self.penalty()?;
        ex.base_seed = self.experiment.base_seed;
        ex.z0 = self.experiment.z0;
        ex.grid_points = self.io.grid_points;
        Ok(ex)
    }
}

pub fn validate_grid_points(points: usize) -> Result<(), ConfigError> {
    if points < 257 || points.is_multiple_of(2) {
        return Err(ConfigError::invalid(
            "io.grid_points",
            format!("must be odd and >= 257, got {points}"),
        ));
    }
    Ok(())
}
