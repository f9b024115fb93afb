//! Command-line front end: `simulate`, `sweep`, `bound` and `verify`.
//!
//! Settings come from three layers, highest first: command-line flags, a
//! flat TOML file given by `--config`, built-in defaults. Every file the
//! tool writes records the resolved settings so a run can be repeated.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::controller::{bound_m0, ControllerConfig, DEFAULT_BAND_HALF_WIDTH};
use crate::error::Error;
use crate::fock::DiagonalState;
use crate::kraus::{InteractionParams, REFERENCE_PI};
use crate::montecarlo::{run_sweep, CensorPolicy, SweepConfig};
use crate::trajectory::{simulate_closed_loop, RunConfig, DEFAULT_SETTLE_THRESHOLD};
use crate::verify::{run_suite, VerifyConfig};

pub const WORKERS_ENV: &str = "FOCK_FEEDBACK_WORKERS";
pub const DEFAULT_SIMULATE_HORIZON: usize = 120;
pub const DEFAULT_SWEEP_HORIZON: usize = 10_000;
pub const DEFAULT_REALIZATIONS: usize = 1000;
pub const DEFAULT_EPSILON: f64 = 1000.0;
pub const DEFAULT_EPSILONS: [f64; 8] = [0.0, 0.1, 1.0, 10.0, 100.0, 1000.0, 10_000.0, 100_000.0];
pub const DEFAULT_NBAR: usize = 10;
/// The initial state is uniform over `0..=INITIAL_MAX_PHOTONS`.
pub const INITIAL_MAX_PHOTONS: usize = 15;

#[derive(Debug, Parser)]
#[command(
    name = "fock-feedback",
    version,
    about = "Closed-loop simulation of Lyapunov feedback stabilizing cavity Fock states"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one closed-loop realization and write its trajectory.
    Simulate(SimulateArgs),
    /// Settling-time statistics over many realizations and gains.
    Sweep(SweepArgs),
    /// Compute the support ceiling m0 and check its window.
    Bound(BoundArgs),
    /// Run the randomized property suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorArg {
    Exclude,
    ClampToHorizon,
}

impl From<CensorArg> for CensorPolicy {
    fn from(c: CensorArg) -> Self {
        match c {
            CensorArg::Exclude => CensorPolicy::Exclude,
            CensorArg::ClampToHorizon => CensorPolicy::ClampToHorizon,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Dispersive phase per photon [default: 0.252*3.14].
    #[arg(long, allow_negative_numbers = true)]
    pub phi0: Option<f64>,
    /// Resonant pulse angle [default: 3.14*2/sqrt(nbar+1)].
    #[arg(long, allow_negative_numbers = true)]
    pub theta0: Option<f64>,
    /// Goal photon number [default: 10].
    #[arg(long)]
    pub nbar: Option<usize>,
    /// Use the true value of pi instead of 3.14 in the default phi0 and theta0.
    #[arg(long)]
    pub true_pi: bool,
    /// Flat TOML file with default values for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Feedback gain [default: 1000].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Number of sample steps [default: 120].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Seed of the outcome stream [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Goal population that counts as settled [default: 0.9].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output file [default: trajectory.csv or trajectory.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format [default: csv].
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated gains [default: 0,0.1,1,10,100,1000,10000,100000].
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    /// Realizations per gain [default: 1000].
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Number of sample steps per realization [default: 10000].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Goal population that counts as settled [default: 0.9].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Worker threads [default: $FOCK_FEEDBACK_WORKERS, else all cores].
    #[arg(long)]
    pub workers: Option<usize>,
    /// How runs that never settle enter the statistics [default: exclude].
    #[arg(long, value_enum)]
    pub censor_policy: Option<CensorArg>,
    /// Output file [default: sweep.csv or sweep.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format [default: csv].
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Feedback gain, must be positive [default: 1000].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Band half-width a in (0, 1/2) [default: 0.4].
    #[arg(long)]
    pub a: Option<f64>,
    /// Support length n_length of the initial state [default: 15].
    #[arg(long)]
    pub n0: Option<usize>,
    /// Lowest occupied photon number n_min of the initial state [default: 0].
    #[arg(long)]
    pub r0: Option<usize>,
    /// Also write the certificate to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format [default: csv].
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Gain for the supermartingale and bound checks [default: 1000].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Seed of the random test states [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Reduced sample counts.
    #[arg(long)]
    pub quick: bool,
}

/// Keys accepted in a `--config` file; they mirror the long flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub phi0: Option<f64>,
    pub theta0: Option<f64>,
    pub nbar: Option<usize>,
    pub true_pi: Option<bool>,
    pub epsilon: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
    pub threshold: Option<f64>,
    pub a: Option<f64>,
    pub n0: Option<usize>,
    pub r0: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub workers: Option<usize>,
    pub censor_policy: Option<CensorArg>,
    pub quick: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Failure(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config file {}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameter values; exit status 2.
    Usage(String),
    /// Anything else; exit status 1.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidState(_) => CliError::Usage(e.to_string()),
            other => CliError::Failure(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failure(format!("cannot write {}: {e}", path.display()))
}

fn resolve_params(m: &ModelArgs, file: &FileConfig) -> Result<InteractionParams, CliError> {
    let nbar = m.nbar.or(file.nbar).unwrap_or(DEFAULT_NBAR);
    let pi = if m.true_pi || file.true_pi.unwrap_or(false) {
        std::f64::consts::PI
    } else {
        REFERENCE_PI
    };
    let reference = InteractionParams::reference_with_pi(nbar, pi);
    let phi0 = m.phi0.or(file.phi0).unwrap_or(reference.phi0);
    let theta0 = m.theta0.or(file.theta0).unwrap_or(reference.theta0);
    Ok(InteractionParams::theorem_compliant(phi0, theta0, nbar)?)
}

fn load_file(m: &ModelArgs) -> Result<FileConfig, CliError> {
    m.config
        .as_deref()
        .map(FileConfig::load)
        .transpose()
        .map(Option::unwrap_or_default)
}

fn resolve_workers(flag: Option<usize>, file: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(w) = flag.or(file) {
        return Ok(Some(w));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Usage(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(None),
    }
}

fn param_metadata(p: &InteractionParams) -> Vec<(String, String)> {
    vec![
        ("phi0".into(), p.phi0.to_string()),
        ("phi_r".into(), p.phi_r.to_string()),
        ("theta0".into(), p.theta0.to_string()),
        ("nbar".into(), p.nbar.to_string()),
        (
            "initial_state".into(),
            format!("uniform 0..={INITIAL_MAX_PHOTONS}"),
        ),
    ]
}

fn default_out(out: Option<PathBuf>, stem: &str, format: Format) -> PathBuf {
    out.unwrap_or_else(|| {
        PathBuf::from(match format {
            Format::Csv => format!("{stem}.csv"),
            Format::Json => format!("{stem}.json"),
        })
    })
}

#[derive(Serialize)]
struct TrajectoryDocument<'a> {
    metadata: serde_json::Map<String, serde_json::Value>,
    settled_at: Option<usize>,
    records: &'a [crate::trajectory::StepRecord],
}

fn metadata_json(meta: &[(String, String)]) -> serde_json::Map<String, serde_json::Value> {
    meta.iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect()
}

pub fn cmd_simulate(args: SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = load_file(&args.model)?;
    let params = resolve_params(&args.model, &file)?;
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON);
    let horizon = args
        .horizon
        .or(file.horizon)
        .unwrap_or(DEFAULT_SIMULATE_HORIZON);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let threshold = args
        .threshold
        .or(file.threshold)
        .unwrap_or(DEFAULT_SETTLE_THRESHOLD);
    let format = args.format.or(file.format).unwrap_or(Format::Csv);
    let out = default_out(args.out.or(file.out), "trajectory", format);

    let controller = ControllerConfig::new(params.nbar.0, epsilon)?;
    let mut run = RunConfig::new(
        DiagonalState::uniform(0, INITIAL_MAX_PHOTONS)?,
        params,
        controller,
        horizon,
        seed,
    );
    run.settle_threshold = threshold;
    let traj = simulate_closed_loop(&run)?;

    let mut meta = param_metadata(&params);
    meta.extend([
        ("epsilon".into(), epsilon.to_string()),
        ("horizon".into(), horizon.to_string()),
        ("seed".into(), seed.to_string()),
        ("threshold".into(), threshold.to_string()),
    ]);
    let f = File::create(&out).map_err(io_err(&out))?;
    let mut w = BufWriter::new(f);
    match format {
        Format::Csv => traj.write_csv(&mut w, &meta)?,
        Format::Json => {
            let doc = TrajectoryDocument {
                metadata: metadata_json(&meta),
                settled_at: traj.settled_at,
                records: &traj.records,
            };
            serde_json::to_writer_pretty(&mut w, &doc).map_err(Error::from)?;
            writeln!(w).map_err(io_err(&out))?;
        }
    }
    w.flush().map_err(io_err(&out))?;

    let shown = match traj.settled_at {
        Some(k) => format!("settling time: {k}"),
        None => "settling time: censored".into(),
    };
    writeln!(stdout, "{shown}").map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(())
}

pub fn cmd_sweep(args: SweepArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = load_file(&args.model)?;
    let params = resolve_params(&args.model, &file)?;
    let epsilons = args
        .epsilons
        .or(file.epsilons)
        .unwrap_or_else(|| DEFAULT_EPSILONS.to_vec());
    let realizations = args
        .realizations
        .or(file.realizations)
        .unwrap_or(DEFAULT_REALIZATIONS);
    let horizon = args
        .horizon
        .or(file.horizon)
        .unwrap_or(DEFAULT_SWEEP_HORIZON);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let threshold = args
        .threshold
        .or(file.threshold)
        .unwrap_or(DEFAULT_SETTLE_THRESHOLD);
    let workers = resolve_workers(args.workers, file.workers)?;
    let censor = args
        .censor_policy
        .or(file.censor_policy)
        .unwrap_or(CensorArg::Exclude);
    let format = args.format.or(file.format).unwrap_or(Format::Csv);
    let out = default_out(args.out.or(file.out), "sweep", format);

    let controller =
        ControllerConfig::new(params.nbar.0, epsilons.first().copied().unwrap_or(0.0))?;
    let mut base = RunConfig::new(
        DiagonalState::uniform(0, INITIAL_MAX_PHOTONS)?,
        params,
        controller,
        horizon,
        0,
    );
    base.settle_threshold = threshold;
    let cfg = SweepConfig {
        epsilons,
        realizations,
        base_run: base,
        master_seed: seed,
        censor_policy: censor.into(),
        workers,
    };
    let summary = run_sweep(&cfg)?;

    let f = File::create(&out).map_err(io_err(&out))?;
    let mut w = BufWriter::new(f);
    match format {
        Format::Csv => {
            let mut meta = param_metadata(&params);
            meta.extend([
                ("realizations".into(), realizations.to_string()),
                ("horizon".into(), horizon.to_string()),
                ("master_seed".into(), seed.to_string()),
                ("threshold".into(), threshold.to_string()),
            ]);
            summary.write_csv(&mut w, &meta)?;
        }
        Format::Json => {
            summary.write_json(&mut w)?;
            writeln!(w).map_err(io_err(&out))?;
        }
    }
    w.flush().map_err(io_err(&out))?;

    let mut table = String::from("epsilon     mean_ks    stddev_ks  settled  censored\n");
    for r in &summary.rows {
        table.push_str(&format!(
            "{:<10}  {:>9.2}  {:>9.2}  {:>7}  {:>8}\n",
            r.epsilon, r.mean_ks, r.stddev_ks, r.settled, r.censored
        ));
    }
    stdout
        .write_all(table.as_bytes())
        .map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(())
}

pub fn cmd_bound(args: BoundArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = load_file(&args.model)?;
    let params = resolve_params(&args.model, &file)?;
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON);
    if !(epsilon > 0.0) {
        return Err(CliError::Usage(format!(
            "bound needs --epsilon > 0, got {epsilon}"
        )));
    }
    let a = args.a.or(file.a).unwrap_or(DEFAULT_BAND_HALF_WIDTH);
    let n0 = args.n0.or(file.n0).unwrap_or(INITIAL_MAX_PHOTONS);
    let r0 = args.r0.or(file.r0).unwrap_or(0);
    let format = args.format.or(file.format).unwrap_or(Format::Csv);

    let cert = bound_m0(epsilon, n0, r0, params.nbar.0, params.theta0, a)?;
    let membership = cert.membership_holds();
    let text = match format {
        Format::Json => {
            let mut v = serde_json::to_value(cert).map_err(Error::from)?;
            v["membership_holds"] = membership.into();
            serde_json::to_string_pretty(&v).map_err(Error::from)? + "\n"
        }
        Format::Csv => {
            let mut s = String::new();
            for (k, v) in [
                ("m0", cert.m0.to_string()),
                ("window_start", cert.window_start.to_string()),
                ("window_len", cert.window_len.to_string()),
                ("lower", cert.lower.to_string()),
                ("a", cert.a.to_string()),
                ("n0", cert.n0.to_string()),
                ("r0", cert.r0.to_string()),
                ("nbar", cert.nbar.to_string()),
                ("epsilon", cert.epsilon.to_string()),
                ("theta0", cert.theta0.to_string()),
                ("membership_holds", membership.to_string()),
            ] {
                s.push_str(&format!("{k} = {v}\n"));
            }
            s
        }
    };
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Failure(e.to_string()))?;
    if let Some(out) = args.out.or(file.out) {
        std::fs::write(&out, &text).map_err(io_err(&out))?;
    }
    if !membership {
        return Err(CliError::Failure("window membership check failed".into()));
    }
    Ok(())
}

pub fn cmd_verify(args: VerifyArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = load_file(&args.model)?;
    let params = resolve_params(&args.model, &file)?;
    let mut cfg = VerifyConfig::new(params);
    cfg.epsilon = args.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON);
    cfg.seed = args.seed.or(file.seed).unwrap_or(0);
    cfg.quick = args.quick || file.quick.unwrap_or(false);
    let results = run_suite(&cfg);
    for r in &results {
        writeln!(stdout, "{r}").map_err(|e| CliError::Failure(e.to_string()))?;
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| r.failed())
        .map(|r| r.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "failed properties: {}",
            failed.join(", ")
        )))
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            write!(stdout, "{e}").map_err(|e| CliError::Failure(e.to_string()))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::Bound(a) => cmd_bound(a, stdout),
        Command::Verify(a) => cmd_verify(a, stdout),
    }
}
