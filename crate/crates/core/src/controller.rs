//! Lyapunov-based feedback.
//!
//! The control Lyapunov function is `V_ε(ρ) = Σ_n d(n)·ρ_nn − ε·Σ_n ρ_nn²`,
//! split as `V_ε = V + ε·W`. For a control `u`, `Q_F(ρ, u)` is the expected
//! one-step decrease `F(ρ) − E[F(ρ_{k+1}) | ρ_k = ρ, u_k = u]`, and the
//! feedback picks the control with the largest `Q_{V_ε}`, which is the
//! argmin of the expected next value.
//!
//! The Q-functions are evaluated in decrease form rather than as a difference
//! of two expectations: `Q_V` through the ladder differences
//! `d(n ± 1) − d(n)`, and `Q_W(ρ, 0)` as the non-negative sum
//! `Σ_n (c_g,n·p_e − c_e,n·p_g)² / (p_g·p_e)`. The difference form loses all
//! precision once `d(n)` reaches ~10⁸, which happens inside the support
//! bound `m₀` for realistic gains. [`expected_lyapunov`] keeps the literal
//! two-branch expectation as an independent route.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DiagonalState, PhotonIndex};
use crate::kraus::{
    branch_mass, branch_populations, ChannelWeights, ControlInput, InteractionParams, Outcome,
    QuantumState, IMPOSSIBLE_OUTCOME_THRESHOLD,
};

/// Relative width of the tie band in the feedback argmin.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Default tie-break order: QND first, then the support-shrinking pulse.
pub const DEFAULT_TIE_BREAK: [ControlInput; 3] = [
    ControlInput::Measure,
    ControlInput::Lower,
    ControlInput::Raise,
];

/// Default half-width `a` of the `sin²` band around 1/2 used by [`bound_m0`].
pub const DEFAULT_BAND_HALF_WIDTH: f64 = 0.4;

/// The distance-to-goal weight `d(n)` in `V(ρ) = Tr(d(N)ρ)`.
#[derive(Clone, Default, Serialize, Deserialize)]
pub enum DistanceWeight {
    /// `d(n) = (n − n̄)²`.
    #[default]
    Quadratic,
    /// `d(n) = |n − n̄|`.
    Absolute,
    /// Any `d(n, n̄)`; it should vanish at `n̄` and grow away from it.
    #[serde(skip)]
    Custom(Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>),
}

impl DistanceWeight {
    pub fn eval(&self, n: usize, nbar: usize) -> f64 {
        match self {
            DistanceWeight::Quadratic => {
                let x = n as f64 - nbar as f64;
                x * x
            }
            DistanceWeight::Absolute => (n as f64 - nbar as f64).abs(),
            DistanceWeight::Custom(f) => f(n, nbar),
        }
    }

    /// `d(n + 1) − d(n)`.
    fn raise_diff(&self, n: usize, nbar: usize) -> f64 {
        match self {
            DistanceWeight::Quadratic => 2.0 * (n as f64 - nbar as f64) + 1.0,
            _ => self.eval(n + 1, nbar) - self.eval(n, nbar),
        }
    }

    /// `d(n − 1) − d(n)` for `n ≥ 1`.
    fn lower_diff(&self, n: usize, nbar: usize) -> f64 {
        match self {
            DistanceWeight::Quadratic => -2.0 * (n as f64 - nbar as f64) + 1.0,
            _ => self.eval(n - 1, nbar) - self.eval(n, nbar),
        }
    }
}

impl fmt::Debug for DistanceWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceWeight::Quadratic => f.write_str("Quadratic"),
            DistanceWeight::Absolute => f.write_str("Absolute"),
            DistanceWeight::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub nbar: PhotonIndex,
    /// Gain on the purity term. Zero reproduces the plain `Tr(d(N)ρ)` law.
    pub epsilon: f64,
    pub tie_break: [ControlInput; 3],
    pub distance: DistanceWeight,
}

impl ControllerConfig {
    pub fn new(nbar: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(ControllerConfig {
            nbar: PhotonIndex(nbar),
            epsilon,
            tie_break: DEFAULT_TIE_BREAK,
            distance: DistanceWeight::Quadratic,
        })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut cfg = ControllerConfig::new(self.nbar.0, epsilon)?;
        cfg.tie_break = self.tie_break;
        cfg.distance = self.distance.clone();
        Ok(cfg)
    }

    fn d(&self, n: usize) -> f64 {
        self.distance.eval(n, self.nbar.0)
    }
}

/// Everything the feedback looks at for one state. Per-control arrays are
/// indexed by [`ControlInput::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub v: f64,
    pub w: f64,
    pub v_eps: f64,
    pub q_v: [f64; 3],
    pub q_w: [f64; 3],
    pub q_v_eps: [f64; 3],
    pub chosen: ControlInput,
}

impl LyapunovReport {
    pub fn q_v_eps_of(&self, u: ControlInput) -> f64 {
        self.q_v_eps[u.index()]
    }

    pub fn q_v_of(&self, u: ControlInput) -> f64 {
        self.q_v[u.index()]
    }

    pub fn q_w_of(&self, u: ControlInput) -> f64 {
        self.q_w[u.index()]
    }
}

fn potential(probs: &[f64], cfg: &ControllerConfig) -> f64 {
    probs.iter().enumerate().map(|(n, p)| p * cfg.d(n)).sum()
}

fn neg_purity(probs: &[f64]) -> f64 {
    -probs.iter().map(|p| p * p).sum::<f64>()
}

/// `V_ε(ρ)`. Only the diagonal of a full density matrix enters.
pub fn lyapunov_value<S: QuantumState>(state: &S, cfg: &ControllerConfig) -> f64 {
    let probs = state.populations();
    potential(&probs, cfg) + cfg.epsilon * neg_purity(&probs)
}

/// `E[V_ε(ρ_{k+1}) | ρ_k = ρ, u_k = u]` by explicit evaluation of both
/// post-measurement states. A branch at or below the impossibility threshold
/// contributes nothing and the other carries the full weight.
pub fn expected_lyapunov<S: QuantumState>(
    state: &S,
    u: ControlInput,
    params: &InteractionParams,
    cfg: &ControllerConfig,
) -> f64 {
    let pg = state.outcome_probability(u, Outcome::G, params);
    let pe = state.outcome_probability(u, Outcome::E, params);
    let branch = |y| {
        let next = state
            .measure(u, y, params)
            .expect("branch probability above threshold");
        lyapunov_value(&next, cfg)
    };
    match (
        pg > IMPOSSIBLE_OUTCOME_THRESHOLD,
        pe > IMPOSSIBLE_OUTCOME_THRESHOLD,
    ) {
        (true, true) => pg * branch(Outcome::G) + pe * branch(Outcome::E),
        (true, false) => branch(Outcome::G),
        (false, true) => branch(Outcome::E),
        (false, false) => panic!(
            "both outcome probabilities vanish under control {u} (p_g = {pg:e}, p_e = {pe:e})"
        ),
    }
}

/// Closed-form `Q_V(ρ, u)` for a diagonal state:
/// `0` for `u = 0`, `−Σ ρ_nn·sin²(θ₀/2·√(n+1))·[d(n+1) − d(n)]` for `u = +1`
/// and `−Σ ρ_nn·sin²(θ₀/2·√n)·[d(n−1) − d(n)]` for `u = −1`.
pub fn q_v_closed_form(
    d: &DiagonalState,
    u: ControlInput,
    params: &InteractionParams,
    cfg: &ControllerConfig,
) -> f64 {
    q_v_with(d.probs(), u, params, cfg)
}

pub(crate) fn q_v_with<W: ChannelWeights>(
    probs: &[f64],
    u: ControlInput,
    w: &W,
    cfg: &ControllerConfig,
) -> f64 {
    let nbar = cfg.nbar.0;
    match u {
        ControlInput::Measure => 0.0,
        ControlInput::Raise => -probs
            .iter()
            .enumerate()
            .map(|(n, p)| p * w.resonant_sin2(n + 1) * cfg.distance.raise_diff(n, nbar))
            .sum::<f64>(),
        ControlInput::Lower => -probs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, p)| p * w.resonant_sin2(n) * cfg.distance.lower_diff(n, nbar))
            .sum::<f64>(),
    }
}

/// `Q_W(ρ, u)` for the purity term `W(ρ) = −Σ ρ_nn²`.
pub fn q_w<S: QuantumState>(state: &S, u: ControlInput, params: &InteractionParams) -> f64 {
    let probs = state.populations();
    q_w_with(&probs, u, params, &mut Vec::new(), &mut Vec::new())
}

pub(crate) fn q_w_with<W: ChannelWeights>(
    probs: &[f64],
    u: ControlInput,
    w: &W,
    scratch_g: &mut Vec<f64>,
    scratch_e: &mut Vec<f64>,
) -> f64 {
    let pg = branch_mass(probs, u, Outcome::G, w);
    let pe = branch_mass(probs, u, Outcome::E, w);
    let g_ok = pg > IMPOSSIBLE_OUTCOME_THRESHOLD;
    let e_ok = pe > IMPOSSIBLE_OUTCOME_THRESHOLD;
    if !g_ok && !e_ok {
        panic!("both outcome probabilities vanish under control {u} (p_g = {pg:e}, p_e = {pe:e})");
    }
    branch_populations(probs, u, Outcome::G, w, scratch_g);
    branch_populations(probs, u, Outcome::E, w, scratch_e);
    let sq = |v: &[f64], mass: f64| v.iter().map(|c| c * c).sum::<f64>() / (mass * mass);

    if u == ControlInput::Measure && g_ok && e_ok {
        // Both branches keep the grid, so W(ρ) − E[W] is a weighted variance.
        return scratch_g
            .iter()
            .zip(scratch_e.iter())
            .map(|(cg, ce)| {
                let x = cg * pe - ce * pg;
                x * x
            })
            .sum::<f64>()
            / (pg * pe);
    }
    let w_now = neg_purity(probs);
    let expected = match (g_ok, e_ok) {
        (true, true) => -(pg * sq(scratch_g, pg) + pe * sq(scratch_e, pe)),
        (true, false) => -sq(scratch_g, pg),
        _ => -sq(scratch_e, pe),
    };
    w_now - expected
}

/// Index of the smallest value; entries within the tie band of the minimum
/// are resolved by `order`. The band is `TIE_TOLERANCE · max(1, spread)`.
pub fn argmin_control(values: [f64; 3], order: &[ControlInput; 3]) -> ControlInput {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let band = TIE_TOLERANCE * (max - min).max(1.0);
    order
        .iter()
        .copied()
        .find(|u| values[u.index()] - min <= band)
        .expect("minimum lies within its own tie band")
}

pub(crate) fn report_with<W: ChannelWeights>(
    probs: &[f64],
    w: &W,
    cfg: &ControllerConfig,
    scratch_g: &mut Vec<f64>,
    scratch_e: &mut Vec<f64>,
) -> LyapunovReport {
    let v = potential(probs, cfg);
    let wv = neg_purity(probs);
    let mut q_v = [0.0; 3];
    let mut q_w = [0.0; 3];
    let mut q_v_eps = [0.0; 3];
    for u in ControlInput::ALL {
        let i = u.index();
        q_v[i] = q_v_with(probs, u, w, cfg);
        q_w[i] = q_w_with(probs, u, w, scratch_g, scratch_e);
        q_v_eps[i] = q_v[i] + cfg.epsilon * q_w[i];
    }
    // E[V_ε | u] = V_ε − Q_{V_ε}(u); the common V_ε term does not move the argmin.
    let chosen = argmin_control(q_v_eps.map(|q| -q), &cfg.tie_break);
    LyapunovReport {
        v,
        w: wv,
        v_eps: v + cfg.epsilon * wv,
        q_v,
        q_w,
        q_v_eps,
        chosen,
    }
}

/// All Q-functions and the feedback decision for `state`.
pub fn q_values<S: QuantumState>(
    state: &S,
    params: &InteractionParams,
    cfg: &ControllerConfig,
) -> LyapunovReport {
    let probs = state.populations();
    report_with(&probs, params, cfg, &mut Vec::new(), &mut Vec::new())
}

/// The control minimizing `E[V_ε(ρ_{k+1})]`.
pub fn feedback<S: QuantumState>(
    state: &S,
    params: &InteractionParams,
    cfg: &ControllerConfig,
) -> ControlInput {
    q_values(state, params, cfg).chosen
}

/// How [`window_start`] locates the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    /// Around `η(ℓ) = [2/θ₀·(ℓπ/2 + π/4)]²` for the first suitable even `ℓ`.
    Constructive,
    /// Linear search for the first valid start above `N`, up to `limit`.
    Scan { limit: usize },
}

/// True when `1/2 − a ≤ sin²(θ₀/2·√n) ≤ 1/2 + a` for `n = start..start+len`.
pub fn window_holds(theta0: f64, start: usize, len: usize, a: f64) -> bool {
    (start..start + len).all(|n| {
        let s = (theta0 / 2.0 * (n as f64).sqrt()).sin().powi(2);
        (0.5 - a..=0.5 + a).contains(&s)
    })
}

/// Smallest-found `N̄ > lower` whose `len` consecutive photon numbers keep
/// `sin²(θ₀/2·√n)` within `a` of 1/2.
pub fn window_start(
    theta0: f64,
    len: usize,
    lower: usize,
    a: f64,
    mode: WindowMode,
) -> Result<PhotonIndex> {
    if theta0 == 0.0 || !theta0.is_finite() {
        return Err(Error::InvalidConfig(
            "theta0 must be finite and nonzero".into(),
        ));
    }
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "band half-width must lie in (0, 1/2), got {a}"
        )));
    }
    if len == 0 {
        return Err(Error::InvalidConfig(
            "window length must be positive".into(),
        ));
    }
    match mode {
        WindowMode::Constructive => Ok(PhotonIndex(constructive_window(
            theta0.abs(),
            len,
            lower,
            a,
        ))),
        WindowMode::Scan { limit } => scan_window(theta0, len, lower, a, limit).map(PhotonIndex),
    }
}

fn constructive_window(theta0: f64, len: usize, lower: usize, a: f64) -> usize {
    let even_len = len + len % 2;
    let half = (even_len / 2) as f64;
    let h = FRAC_PI_4 - (0.5 - a).sqrt().asin();
    let eta = |l: u64| (2.0 / theta0 * (l as f64 * PI / 2.0 + FRAC_PI_4)).powi(2);
    let mut l: u64 = 0;
    loop {
        let e = eta(l);
        let far_enough = e > half + lower as f64;
        let flat_enough = far_enough && theta0 * even_len as f64 / (8.0 * (e - half).sqrt()) <= h;
        if flat_enough {
            let start = e.floor() as usize + 1 - even_len / 2;
            // The mean-value argument has no slack for rounding at the band edge.
            if start > lower && window_holds(theta0, start, even_len, a) {
                return start;
            }
        }
        l += 2;
    }
}

fn scan_window(theta0: f64, len: usize, lower: usize, a: f64, limit: usize) -> Result<usize> {
    let mut run = 0usize;
    let mut n = lower + 1;
    // `n - run` is the start of the run that `n` would extend.
    while n - run <= limit {
        if window_holds(theta0, n, 1, a) {
            run += 1;
            if run == len {
                return Ok(n + 1 - len);
            }
        } else {
            run = 0;
        }
        n += 1;
    }
    Err(Error::NotFound { lower, limit })
}

/// Support ceiling `m₀` for closed-loop trajectories started from a state
/// with `n_length = n0` and `n_min = r0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub m0: PhotonIndex,
    /// Start `N̄` of the window where `sin²(θ₀/2·√n)` stays near 1/2.
    pub window_start: PhotonIndex,
    /// `N0 = n0 + r0 + 1`.
    pub window_len: usize,
    pub a: f64,
    /// `N = ⌈½[2ε/(1/2 − a) + 2n̄ + 1]⌉`.
    pub lower: usize,
    pub n0: usize,
    pub r0: usize,
    pub nbar: PhotonIndex,
    pub epsilon: f64,
    pub theta0: f64,
}

impl BoundCertificate {
    pub fn membership_holds(&self) -> bool {
        window_holds(self.theta0, self.window_start.0, self.window_len, self.a)
    }

    /// Structural relations between the certificate fields.
    pub fn invariants_hold(&self) -> bool {
        self.m0.0 + 1 == self.window_start.0 + self.window_len
            && self.m0.0 > self.n0 + self.r0 + self.nbar.0 + 1
            && self.window_start.0 > self.lower
            && self.membership_holds()
    }

    /// `Q_{V_ε}(ρ, −1) > max{Q_{V_ε}(ρ, 0), Q_{V_ε}(ρ, +1)}`.
    pub fn lower_dominates(report: &LyapunovReport) -> bool {
        let lower = report.q_v_eps_of(ControlInput::Lower);
        lower > report.q_v_eps_of(ControlInput::Measure)
            && lower > report.q_v_eps_of(ControlInput::Raise)
    }
}

pub fn lower_threshold(epsilon: f64, nbar: usize, a: f64) -> usize {
    (0.5 * (2.0 * epsilon / (0.5 - a) + 2.0 * nbar as f64 + 1.0)).ceil() as usize
}

pub fn bound_m0(
    epsilon: f64,
    n0: usize,
    r0: usize,
    nbar: usize,
    theta0: f64,
    a: f64,
) -> Result<BoundCertificate> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "the support bound needs epsilon > 0, got {epsilon}"
        )));
    }
    if !(a > 0.0 && a < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "band half-width must lie in (0, 1/2), got {a}"
        )));
    }
    let lower = lower_threshold(epsilon, nbar, a);
    let window_len = n0 + r0 + 1;
    let start = window_start(theta0, window_len, lower, a, WindowMode::Constructive)?;
    Ok(BoundCertificate {
        m0: PhotonIndex(start.0 + n0 + r0),
        window_start: start,
        window_len,
        a,
        lower,
        n0,
        r0,
        nbar: PhotonIndex(nbar),
        epsilon,
        theta0,
    })
}
