use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::TaskParams;
use crate::error::{Error, Result};
use crate::mpo::{MpoConfig, TemperatureMode, DEFAULT_HIDDEN};
use crate::nets::AdamConfig;
use crate::replay::DEFAULT_CAPACITY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Walk,
    Run,
}

impl Task {
    pub fn params(self) -> TaskParams {
        match self {
            Task::Walk => TaskParams::walk(),
            Task::Run => TaskParams::run(),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(Task::Walk),
            "run" => Ok(Task::Run),
            other => Err(Error::Config(format!("unknown task {other}, expected walk or run"))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Walk => "walk",
            Task::Run => "run",
        })
    }
}

/// Everything that determines a training run or a paired comparison.
///
/// The same structure is read from TOML config files (field names match the CLI flags with
/// dashes replaced by underscores) and is hashed into the metrics header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub batch_size: usize,
    pub n_action_samples: usize,
    /// Used by `train`; `compare` always runs both conditions.
    pub augment: bool,
    pub seeds: Vec<u64>,
    pub learner_steps: u64,
    /// Environment steps per learner step.
    pub ratio: f64,
    #[serde(with = "temperature_string")]
    pub temperature: TemperatureMode,
    pub gamma: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub target_period: u64,
    pub capacity: usize,
    pub hidden: Vec<usize>,
    pub metrics_every: u64,
    /// States drawn from replay for the symmetry gap.
    pub gap_states: usize,
    /// Record real elapsed seconds in `wall_clock`; off keeps metrics files byte-reproducible.
    pub wall_clock: bool,
    /// Worker threads for `compare`; 0 means one per available core.
    pub jobs: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mpo = MpoConfig::default();
        Self {
            task: Task::Walk,
            batch_size: mpo.batch_size,
            n_action_samples: mpo.n_action_samples,
            augment: false,
            seeds: (1..=10).collect(),
            learner_steps: 20_000,
            ratio: 1.0,
            temperature: mpo.temperature,
            gamma: mpo.gamma,
            beta: mpo.beta,
            learning_rate: mpo.adam.lr,
            target_period: mpo.target_period,
            capacity: DEFAULT_CAPACITY,
            hidden: vec![DEFAULT_HIDDEN; 2],
            metrics_every: 50,
            gap_states: 1000,
            wall_clock: false,
            jobs: 0,
            out: PathBuf::from("runs"),
        }
    }
}

mod temperature_string {
    use super::TemperatureMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &TemperatureMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TemperatureMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(Error::Config(format!("ratio must be positive, got {}", self.ratio)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.metrics_every < 1 {
            return Err(Error::Config("metrics_every must be >= 1".into()));
        }
        if self.gap_states < 1 {
            return Err(Error::Config("gap_states must be >= 1".into()));
        }
        if self.capacity < self.batch_size {
            return Err(Error::Config(format!(
                "replay capacity {} is below the batch size {}",
                self.capacity, self.batch_size
            )));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.mpo_config().validate()
    }

    pub fn mpo_config(&self) -> MpoConfig {
        MpoConfig {
            gamma: self.gamma,
            beta: self.beta,
            n_action_samples: self.n_action_samples,
            batch_size: self.batch_size,
            target_period: self.target_period,
            temperature: self.temperature,
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            policy_hidden: self.hidden.clone(),
            q_hidden: self.hidden.clone(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Hex SHA-256 of the canonical JSON form, excluding the output path and thread count
    /// since neither changes results.
    pub fn digest(&self) -> String {
        let canonical = Self {
            out: PathBuf::new(),
            jobs: 0,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with a single seed and condition, as used for one training run.
    pub fn for_run(&self, seed: u64, augment: bool) -> Self {
        Self {
            seeds: vec![seed],
            augment,
            ..self.clone()
        }
    }
}
