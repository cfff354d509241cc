//! Run records: per-sample JSON lines, a summary object, and CSV
//! trajectories of violating samples.
//!
//! `summary.json` holds no timing or host data, so identical inputs give
//! byte-identical files. Wall-clock figures go to `timing.json`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scenario::{Estimate, Mode, SampleRecord};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const TIMING_FILE: &str = "timing.json";
pub const TRAJECTORY_DIR: &str = "trajectories";

/// Hex SHA-256 of the compact JSON encoding. Object keys are sorted, so the
/// digest does not depend on field order in the source file.
pub fn config_hash(identity: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(identity).expect("json values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: String,
    pub mode: Mode,
    pub d_hat: f64,
    pub n: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub seed: u64,
    pub positive: usize,
    pub null_count: usize,
    pub falsifying: usize,
    pub max_attempts: usize,
    pub config_hash: String,
    pub problem: serde_json::Value,
    pub scenario: serde_json::Value,
}

impl Summary {
    pub fn new(estimate: &Estimate, config_hash: String, problem: serde_json::Value) -> Result<Self> {
        Ok(Summary {
            metric: estimate.config.metric.as_str().to_string(),
            mode: estimate.mode.clone(),
            d_hat: estimate.d_hat,
            n: estimate.n,
            epsilon: estimate.config.epsilon,
            beta: estimate.config.beta,
            seed: estimate.config.seed,
            positive: estimate.positive,
            null_count: estimate.null_count,
            falsifying: estimate.falsifying,
            max_attempts: estimate.max_attempts,
            config_hash,
            problem,
            scenario: serde_json::to_value(&estimate.config)?,
        })
    }

    pub fn read(path: &Path) -> Result<Summary> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
    pub threads: Option<usize>,
    pub parallel: bool,
}

#[derive(Clone, Debug)]
pub struct WrittenRun {
    pub summary: PathBuf,
    pub samples: PathBuf,
    pub trajectories: Vec<PathBuf>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &[SampleRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

/// Writes summary, samples and the trajectories of every sample that kept
/// them (falsifying ones always do).
pub fn write_run(dir: &Path, estimate: &Estimate, summary: &Summary) -> Result<WrittenRun> {
    fs::create_dir_all(dir)?;
    let summary_path = dir.join(SUMMARY_FILE);
    let samples_path = dir.join(SAMPLES_FILE);
    write_json(&summary_path, summary)?;
    write_samples(&samples_path, &estimate.samples)?;
    let mut trajectories = Vec::new();
    let kept: Vec<_> = estimate.samples.iter().filter(|s| s.trajectories.is_some()).collect();
    if !kept.is_empty() {
        let tdir = dir.join(TRAJECTORY_DIR);
        fs::create_dir_all(&tdir)?;
        for s in kept {
            let (ts, tm) = s.trajectories.as_ref().expect("filtered on presence");
            for (tag, traj) in [("system", ts), ("abstraction", tm)] {
                let p = tdir.join(format!("sample_{:05}_{tag}.csv", s.index));
                traj.write_csv(BufWriter::new(File::create(&p)?))?;
                trajectories.push(p);
            }
        }
    }
    Ok(WrittenRun {
        summary: summary_path,
        samples: samples_path,
        trajectories,
    })
}

/// Two-column CSV with a header row.
pub fn write_pairs_csv(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(Error::Io)
}
