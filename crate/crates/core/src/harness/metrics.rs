use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// First line of every metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub schema_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub augment: bool,
    pub config: ExperimentConfig,
}

impl MetricsHeader {
    pub fn new(config: &ExperimentConfig, seed: u64, augment: bool) -> Self {
        let config = config.for_run(seed, augment);
        Self {
            schema_version: SCHEMA_VERSION,
            config_digest: config.digest(),
            seed,
            augment,
            config,
        }
    }
}

/// One line of a metrics file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub learner_step: u64,
    /// Learner steps that performed an update (the rest waited for data).
    pub updates: u64,
    pub env_steps: u64,
    /// Episodes completed so far.
    pub episodes: u64,
    /// Mean undiscounted return of the episodes completed since the previous record; carries the
    /// last completed episode's return forward when none finished, 0 before the first.
    pub episode_return: f64,
    pub td_loss: f64,
    pub policy_loss: f64,
    pub eta: f64,
    pub mean_kl: f64,
    pub symmetry_gap: f64,
    /// Seconds since the run started, or 0 when wall-clock recording is off.
    pub wall_clock: f64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.episode_return,
            self.td_loss,
            self.policy_loss,
            self.eta,
            self.mean_kl,
            self.symmetry_gap,
            self.wall_clock,
        ];
        if fields.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::ContractViolation(format!("non-finite metrics at learner step {}", self.learner_step)))
        }
    }
}

/// Line-oriented JSON writer.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path, header: &MetricsHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        write_line(&mut out, header)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        record.validate()?;
        write_line(&mut self.out, record)?;
        // keep complete lines on disk so long runs can be followed while they train
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn write_line<T: Serialize>(out: &mut impl Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<(MetricsHeader, Vec<MetricsRecord>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))??;
    let header: MetricsHeader = serde_json::from_str(&first).map_err(|e| Error::Format(e.to_string()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Format(format!("unsupported schema version {}", header.schema_version)));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        records.push(serde_json::from_str(&line).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_with_flat_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let cfg = ExperimentConfig::default();
        let header = MetricsHeader::new(&cfg, 7, true);
        let rec = MetricsRecord {
            learner_step: 50,
            updates: 10,
            env_steps: 50,
            episodes: 0,
            episode_return: 0.0,
            td_loss: 1.5,
            policy_loss: -2.0,
            eta: 0.3,
            mean_kl: 1e-4,
            symmetry_gap: 0.01,
            wall_clock: 0.0,
        };
        let mut w = MetricsWriter::create(&path, &header).unwrap();
        w.write(&rec).unwrap();
        w.finish().unwrap();
        let (h, recs) = read_metrics(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(h.config.seeds, vec![7]);
        assert_eq!(recs, vec![rec]);

        let text = std::fs::read_to_string(&path).unwrap();
        let line: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        let keys: Vec<&str> = line.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["learner_step", "episodes", "episode_return", "td_loss", "policy_loss", "eta", "mean_kl", "symmetry_gap", "wall_clock"] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert!(line.as_object().unwrap().values().all(|v| !v.is_object() && !v.is_array()));
    }

    #[test]
    fn non_finite_records_rejected() {
        let rec = MetricsRecord {
            learner_step: 1,
            updates: 0,
            env_steps: 0,
            episodes: 0,
            episode_return: f64::NAN,
            td_loss: 0.0,
            policy_loss: 0.0,
            eta: 1.0,
            mean_kl: 0.0,
            symmetry_gap: 0.0,
            wall_clock: 0.0,
        };
        assert!(rec.validate().is_err());
    }
}
