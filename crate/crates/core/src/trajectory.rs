//! Seeded closed-loop realizations.
//!
//! Step `k` looks at `ρ_k`, applies `u_k = feedback(ρ_k)`, draws one uniform
//! variate `r_k` and takes `y_k = g` iff `r_k < p_g`. The variates come from a
//! ChaCha8 stream keyed by the run seed, one per step, so a given seed always
//! yields the same realization.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{feedback, lyapunov_value, report_with, ControllerConfig};
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, DiagonalState, PhotonIndex, DEFAULT_ZERO_TOLERANCE};
use crate::kraus::{
    branch_mass, branch_populations, markov_step, ControlInput, InteractionParams, Outcome,
    QuantumState, WeightTable, IMPOSSIBLE_OUTCOME_THRESHOLD,
};

pub const DEFAULT_SETTLE_THRESHOLD: f64 = 0.9;
pub const DEFAULT_CAPACITY: usize = 512;

/// Either representation of the cavity state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldState {
    Diagonal(DiagonalState),
    Dense(DensityMatrix),
}

impl FieldState {
    pub fn populations(&self) -> Vec<f64> {
        match self {
            FieldState::Diagonal(d) => d.probs().to_vec(),
            FieldState::Dense(m) => m.populations(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FieldState::Diagonal(d) => d.dim(),
            FieldState::Dense(m) => m.dim(),
        }
    }
}

impl From<DiagonalState> for FieldState {
    fn from(d: DiagonalState) -> Self {
        FieldState::Diagonal(d)
    }
}

impl From<DensityMatrix> for FieldState {
    fn from(m: DensityMatrix) -> Self {
        FieldState::Dense(m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub initial_state: FieldState,
    pub params: InteractionParams,
    pub controller: ControllerConfig,
    /// Number of sample steps.
    pub horizon: usize,
    pub seed: u64,
    pub settle_threshold: f64,
    /// Hard cap on the state buffer length.
    pub capacity: usize,
    /// Tolerance used for the recorded `n_max`.
    pub zero_tolerance: f64,
}

impl RunConfig {
    pub fn new(
        initial_state: impl Into<FieldState>,
        params: InteractionParams,
        controller: ControllerConfig,
        horizon: usize,
        seed: u64,
    ) -> Self {
        RunConfig {
            initial_state: initial_state.into(),
            params,
            controller,
            horizon,
            seed,
            settle_threshold: DEFAULT_SETTLE_THRESHOLD,
            capacity: DEFAULT_CAPACITY,
            zero_tolerance: DEFAULT_ZERO_TOLERANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.settle_threshold > 0.0 && self.settle_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "settle threshold must lie in (0, 1), got {}",
                self.settle_threshold
            )));
        }
        if self.controller.nbar != self.params.nbar {
            return Err(Error::InvalidConfig(format!(
                "controller goal {} differs from interaction goal {}",
                self.controller.nbar, self.params.nbar
            )));
        }
        if self.initial_state.dim() > self.capacity {
            return Err(Error::CapacityExceeded {
                requested: self.initial_state.dim(),
                capacity: self.capacity,
            });
        }
        match &self.initial_state {
            FieldState::Diagonal(d) => {
                DiagonalState::new(d.probs().to_vec())?;
            }
            FieldState::Dense(m) => m.validate()?,
        }
        Ok(())
    }
}

/// One sample step: the state `ρ_k` it started from, the control applied
/// and the outcome observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    pub u: ControlInput,
    pub y: Outcome,
    pub p_g: f64,
    /// Population below the goal photon number.
    pub pop_below: f64,
    /// Population of the goal photon number.
    pub pop_goal: f64,
    /// Population above the goal photon number.
    pub pop_above: f64,
    pub v_eps: f64,
    pub n_max: PhotonIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub settled_at: Option<usize>,
    /// `ρ_horizon`.
    pub final_state: FieldState,
    /// Largest `|Tr ρ_k − 1|` seen before renormalization.
    pub max_trace_deviation: f64,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "k",
    "u",
    "y",
    "p_g",
    "pop_below",
    "pop_goal",
    "pop_above",
    "v_eps",
    "n_max",
];

impl Trajectory {
    /// Writes `# key = value` metadata lines, the header row and one row per step.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(String, String)]) -> Result<()> {
        for (k, v) in metadata {
            writeln!(out, "# {k} = {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for r in &self.records {
            w.write_record([
                r.k.to_string(),
                r.u.to_string(),
                r.y.to_string(),
                r.p_g.to_string(),
                r.pop_below.to_string(),
                r.pop_goal.to_string(),
                r.pop_above.to_string(),
                r.v_eps.to_string(),
                r.n_max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a file written by [`Trajectory::write_csv`], skipping metadata lines.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::InvalidConfig(format!(
            "unexpected trajectory header {header:?}"
        )));
    }
    let bad = |what: &str, v: &str| Error::InvalidConfig(format!("bad {what} field {v:?}"));
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f = |i: usize| {
            row[i]
                .parse::<f64>()
                .map_err(|_| bad(CSV_COLUMNS[i], &row[i]))
        };
        let u = row[1]
            .parse::<i64>()
            .ok()
            .and_then(ControlInput::from_value)
            .ok_or_else(|| bad("u", &row[1]))?;
        let y = match &row[2] {
            "g" => Outcome::G,
            "e" => Outcome::E,
            other => return Err(bad("y", other)),
        };
        out.push(StepRecord {
            k: row[0].parse().map_err(|_| bad("k", &row[0]))?,
            u,
            y,
            p_g: f(3)?,
            pop_below: f(4)?,
            pop_goal: f(5)?,
            pop_above: f(6)?,
            v_eps: f(7)?,
            n_max: PhotonIndex(row[8].parse().map_err(|_| bad("n_max", &row[8]))?),
        });
    }
    Ok(out)
}

/// Smallest `k̃` such that every recorded step `k ≥ k̃` has goal population
/// above `threshold`; `None` when the last record is not above it.
pub fn settling_time(traj: &Trajectory, threshold: f64) -> Option<usize> {
    settling_from_goal_populations(traj.records.iter().map(|r| r.pop_goal), threshold)
}

pub fn settling_from_goal_populations<I: IntoIterator<Item = f64>>(
    pops: I,
    threshold: f64,
) -> Option<usize> {
    let mut tracker = SettleTracker::default();
    for (k, p) in pops.into_iter().enumerate() {
        tracker.observe(k, p, threshold);
    }
    tracker.settled()
}

#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct SettleTracker {
    last_below: Option<usize>,
    steps: usize,
}

impl SettleTracker {
    pub(crate) fn observe(&mut self, k: usize, pop_goal: f64, threshold: f64) {
        if !(pop_goal > threshold) {
            self.last_below = Some(k);
        }
        self.steps = k + 1;
    }

    pub(crate) fn settled(&self) -> Option<usize> {
        match self.last_below {
            None => Some(0),
            Some(k) if k + 1 < self.steps => Some(k + 1),
            Some(_) => None,
        }
    }
}

pub(crate) fn sample_outcome(p_g: f64, p_e: f64, variate: f64) -> Outcome {
    if p_g <= IMPOSSIBLE_OUTCOME_THRESHOLD {
        Outcome::E
    } else if p_e <= IMPOSSIBLE_OUTCOME_THRESHOLD || variate < p_g {
        Outcome::G
    } else {
        Outcome::E
    }
}

fn split_populations(probs: &[f64], nbar: usize) -> (f64, f64, f64) {
    let below = probs.iter().take(nbar).sum();
    let goal = probs.get(nbar).copied().unwrap_or(0.0);
    let above = probs.iter().skip(nbar + 1).sum();
    (below, goal, above)
}

/// Runs the closed loop, passing every step to `on_step`, and returns the
/// state after the last step together with the largest trace deviation.
pub(crate) fn run_loop<F: FnMut(&StepRecord)>(
    cfg: &RunConfig,
    mut on_step: F,
) -> Result<(FieldState, f64)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nbar = cfg.params.nbar.0;
    let mut max_dev = 0.0f64;

    match &cfg.initial_state {
        FieldState::Diagonal(d0) => {
            let table = WeightTable::new(cfg.params, cfg.capacity + 2);
            let mut probs = d0.probs().to_vec();
            let mut next = Vec::with_capacity(cfg.capacity + 1);
            let (mut sg, mut se) = (Vec::new(), Vec::new());
            for k in 0..cfg.horizon {
                let total: f64 = probs.iter().sum();
                max_dev = max_dev.max((total - 1.0).abs());
                let report = report_with(&probs, &table, &cfg.controller, &mut sg, &mut se);
                let u = report.chosen;
                let p_g = branch_mass(&probs, u, Outcome::G, &table);
                let p_e = branch_mass(&probs, u, Outcome::E, &table);
                let y = sample_outcome(p_g, p_e, rng.random::<f64>());

                let (pop_below, pop_goal, pop_above) = split_populations(&probs, nbar);
                let n_max = support_index(&probs, cfg.zero_tolerance)?;
                on_step(&StepRecord {
                    k,
                    u,
                    y,
                    p_g,
                    pop_below,
                    pop_goal,
                    pop_above,
                    v_eps: report.v_eps,
                    n_max,
                });

                branch_populations(&probs, u, y, &table, &mut next);
                let mass: f64 = next.iter().sum();
                if !(mass > IMPOSSIBLE_OUTCOME_THRESHOLD) {
                    return Err(Error::ImpossibleOutcome {
                        u,
                        y,
                        probability: mass,
                    });
                }
                next.iter_mut().for_each(|p| *p /= mass);
                while next.len() > 1 && next[next.len() - 1] == 0.0 {
                    next.pop();
                }
                if next.len() > cfg.capacity {
                    return Err(Error::CapacityExceeded {
                        requested: next.len(),
                        capacity: cfg.capacity,
                    });
                }
                std::mem::swap(&mut probs, &mut next);
            }
            Ok((
                FieldState::Diagonal(DiagonalState::from_raw(probs)),
                max_dev,
            ))
        }
        FieldState::Dense(rho0) => {
            let mut rho = rho0.clone();
            for k in 0..cfg.horizon {
                let probs = rho.populations();
                let total: f64 = probs.iter().sum();
                max_dev = max_dev.max((total - 1.0).abs());
                let u = feedback(&rho, &cfg.params, &cfg.controller);
                let p_g = rho.outcome_probability(u, Outcome::G, &cfg.params);
                let p_e = rho.outcome_probability(u, Outcome::E, &cfg.params);
                let y = sample_outcome(p_g, p_e, rng.random::<f64>());

                let (pop_below, pop_goal, pop_above) = split_populations(&probs, nbar);
                on_step(&StepRecord {
                    k,
                    u,
                    y,
                    p_g,
                    pop_below,
                    pop_goal,
                    pop_above,
                    v_eps: lyapunov_value(&rho, &cfg.controller),
                    n_max: support_index(&probs, cfg.zero_tolerance)?,
                });

                if u == ControlInput::Raise && y == Outcome::G && rho.dim() + 1 > cfg.capacity {
                    return Err(Error::CapacityExceeded {
                        requested: rho.dim() + 1,
                        capacity: cfg.capacity,
                    });
                }
                rho = markov_step(&rho, u, y, &cfg.params)?;
            }
            Ok((FieldState::Dense(rho), max_dev))
        }
    }
}

fn support_index(probs: &[f64], tol: f64) -> Result<PhotonIndex> {
    probs
        .iter()
        .rposition(|p| *p > tol)
        .map(PhotonIndex)
        .ok_or(Error::AllZero { tolerance: tol })
}

/// Simulates `cfg.horizon` closed-loop steps and records each of them.
pub fn simulate_closed_loop(cfg: &RunConfig) -> Result<Trajectory> {
    let mut records = Vec::with_capacity(cfg.horizon);
    let (final_state, max_trace_deviation) = run_loop(cfg, |r| records.push(*r))?;
    let settled_at =
        settling_from_goal_populations(records.iter().map(|r| r.pop_goal), cfg.settle_threshold);
    Ok(Trajectory {
        records,
        settled_at,
        final_state,
        max_trace_deviation,
    })
}

/// Settling time of one realization without keeping the step records.
pub fn settling_only(cfg: &RunConfig) -> Result<Option<usize>> {
    let mut tracker = SettleTracker::default();
    let threshold = cfg.settle_threshold;
    run_loop(cfg, |r| tracker.observe(r.k, r.pop_goal, threshold))?;
    Ok(tracker.settled())
}
