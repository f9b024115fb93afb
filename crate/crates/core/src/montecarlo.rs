//! Settling-time statistics over many independent realizations.
//!
//! Realization `i` at gain index `j` draws its seed from the ChaCha8 stream
//! `(j << 32) | i` of the master seed, so the seeds do not depend on the
//! number of workers nor on how many realizations are requested.

use std::io::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{settling_only, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorPolicy {
    /// Runs that never settle are left out of the mean and standard deviation.
    #[default]
    Exclude,
    /// Runs that never settle count as settling at the horizon.
    ClampToHorizon,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub realizations: usize,
    /// Template run; its `seed` and gain are overwritten per realization.
    pub base_run: RunConfig,
    pub master_seed: u64,
    pub censor_policy: CensorPolicy,
    /// Worker threads; `None` uses the global rayon pool. Results do not
    /// depend on it, so it is left out of serialized output.
    #[serde(skip)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean_ks: f64,
    /// Population standard deviation.
    pub stddev_ks: f64,
    pub settled: usize,
    pub censored: usize,
    pub realizations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config: SweepConfig,
    pub stddev_kind: String,
    pub rows: Vec<SweepRow>,
}

/// Seed of realization `index` at gain position `eps_index`.
pub fn realization_seed(master_seed: u64, eps_index: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((eps_index as u64) << 32) | index as u64);
    rng.next_u64()
}

/// Mean and population standard deviation; `(NaN, NaN)` for no samples.
pub fn mean_and_stddev(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn aggregate(
    epsilon: f64,
    times: &[Option<usize>],
    horizon: usize,
    policy: CensorPolicy,
) -> SweepRow {
    let settled = times.iter().filter(|t| t.is_some()).count();
    let samples: Vec<f64> = match policy {
        CensorPolicy::Exclude => times.iter().flatten().map(|&t| t as f64).collect(),
        CensorPolicy::ClampToHorizon => times.iter().map(|t| t.unwrap_or(horizon) as f64).collect(),
    };
    let (mean_ks, stddev_ks) = mean_and_stddev(&samples);
    SweepRow {
        epsilon,
        mean_ks,
        stddev_ks,
        settled,
        censored: times.len() - settled,
        realizations: times.len(),
    }
}

fn validate(cfg: &SweepConfig) -> Result<()> {
    if cfg.epsilons.is_empty() {
        return Err(Error::InvalidConfig("no gains to sweep".into()));
    }
    if cfg.realizations == 0 {
        return Err(Error::InvalidConfig(
            "realizations must be at least 1".into(),
        ));
    }
    if cfg.realizations as u64 > u32::MAX as u64 {
        return Err(Error::InvalidConfig("too many realizations".into()));
    }
    if cfg.workers == Some(0) {
        return Err(Error::InvalidConfig("workers must be at least 1".into()));
    }
    for &e in &cfg.epsilons {
        cfg.base_run.controller.with_epsilon(e)?;
    }
    cfg.base_run.validate()
}

/// Settling times of every realization, indexed `[gain][realization]`.
pub fn settling_times(cfg: &SweepConfig) -> Result<Vec<Vec<Option<usize>>>> {
    validate(cfg)?;
    let work = || -> Result<Vec<Vec<Option<usize>>>> {
        cfg.epsilons
            .iter()
            .enumerate()
            .map(|(j, &epsilon)| {
                let controller = cfg.base_run.controller.with_epsilon(epsilon)?;
                (0..cfg.realizations)
                    .into_par_iter()
                    .map(|i| {
                        let mut run = cfg.base_run.clone();
                        run.controller = controller.clone();
                        run.seed = realization_seed(cfg.master_seed, j, i);
                        settling_only(&run).map_err(|e| Error::Realization {
                            epsilon,
                            index: i,
                            source: Box::new(e),
                        })
                    })
                    .collect()
            })
            .collect()
    };
    match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?
            .install(work),
        None => work(),
    }
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepSummary> {
    let times = settling_times(cfg)?;
    let rows = cfg
        .epsilons
        .iter()
        .zip(&times)
        .map(|(&eps, t)| aggregate(eps, t, cfg.base_run.horizon, cfg.censor_policy))
        .collect();
    Ok(SweepSummary {
        config: cfg.clone(),
        stddev_kind: "population".into(),
        rows,
    })
}

pub const SWEEP_CSV_COLUMNS: [&str; 6] = [
    "epsilon",
    "mean_ks",
    "stddev_ks",
    "settled",
    "censored",
    "realizations",
];

impl SweepSummary {
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(String, String)]) -> Result<()> {
        for (k, v) in metadata {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "# stddev = {}", self.stddev_kind)?;
        writeln!(
            out,
            "# censor_policy = {}",
            policy_name(self.config.censor_policy)
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_CSV_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.epsilon.to_string(),
                r.mean_ks.to_string(),
                r.stddev_ks.to_string(),
                r.settled.to_string(),
                r.censored.to_string(),
                r.realizations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

fn policy_name(p: CensorPolicy) -> &'static str {
    match p {
        CensorPolicy::Exclude => "exclude",
        CensorPolicy::ClampToHorizon => "clamp_to_horizon",
    }
}
