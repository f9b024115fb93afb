//! Randomized property checks over the model, the feedback and the support
//! bound. Each property reports pass, fail, or inapplicable when the
//! parameters violate an assumption the property depends on.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    bound_m0, expected_lyapunov, lower_threshold, lyapunov_value, q_v_closed_form, q_values, q_w,
    window_start, BoundCertificate, ControllerConfig, WindowMode, DEFAULT_BAND_HALF_WIDTH,
};
use crate::fock::{dephase, support_stats, DensityMatrix, DiagonalState, DEFAULT_ZERO_TOLERANCE};
use crate::kraus::{
    diagonal_step, irrationality_ratios, kraus_element, markov_step, ControlInput,
    InteractionParams, Outcome, QuantumState, IMPOSSIBLE_OUTCOME_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail(String),
    Inapplicable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub checks: usize,
    /// Largest error seen by tolerance checks.
    pub worst_error: f64,
    pub verdict: Verdict,
}

impl PropertyResult {
    pub fn failed(&self) -> bool {
        matches!(self.verdict, Verdict::Fail(_))
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.verdict {
            Verdict::Pass => write!(
                f,
                "pass          {} ({} checks, worst error {:.1e})",
                self.name, self.checks, self.worst_error
            ),
            Verdict::Fail(why) => write!(
                f,
                "FAIL          {} ({} checks): {why}",
                self.name, self.checks
            ),
            Verdict::Inapplicable(why) => write!(f, "inapplicable  {}: {why}", self.name),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub params: InteractionParams,
    /// Gain used by the supermartingale and bound checks.
    pub epsilon: f64,
    pub seed: u64,
    pub quick: bool,
}

impl VerifyConfig {
    pub fn new(params: InteractionParams) -> Self {
        VerifyConfig {
            params,
            epsilon: 1000.0,
            seed: 0,
            quick: false,
        }
    }

    fn count(&self, full: usize) -> usize {
        if self.quick {
            (full / 10).max(10)
        } else {
            full
        }
    }
}

/// True when `x` lies within `1e-12` of some `p/q` with `q ≤ max_den`.
pub fn is_numerically_rational(x: f64, max_den: u64) -> bool {
    (1..=max_den).any(|q| {
        let qx = x * q as f64;
        (qx - qx.round()).abs() <= 1e-12 * q as f64
    })
}

/// Random populations on `n_min..=n_max` (exact zeros outside). Entries in
/// the support are at least `1e-3` before normalization.
pub fn random_diagonal_on<R: Rng>(rng: &mut R, n_min: usize, n_max: usize) -> DiagonalState {
    let mut w = vec![0.0; n_max + 1];
    for p in &mut w[n_min..=n_max] {
        *p = rng.random_range(1e-3..1.0);
    }
    DiagonalState::from_unnormalized(w).expect("positive weights")
}

pub fn random_diagonal<R: Rng>(rng: &mut R, max_dim: usize) -> DiagonalState {
    let n_max = rng.random_range(0..max_dim);
    let n_min = rng.random_range(0..=n_max);
    random_diagonal_on(rng, n_min, n_max)
}

/// `A A† / Tr(A A†)` for a complex Gaussian-like `A`.
pub fn random_density<R: Rng>(rng: &mut R, dim: usize) -> DensityMatrix {
    let a = DMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let mut m = &a * a.adjoint();
    let tr = m.trace().re;
    m.unscale_mut(tr);
    // Restore exact Hermitian symmetry after rounding.
    let m = (&m + m.adjoint()).unscale(2.0);
    DensityMatrix::new(m).expect("A A† is a density matrix")
}

struct Tally {
    name: &'static str,
    checks: usize,
    worst: f64,
    failure: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            name,
            checks: 0,
            worst: 0.0,
            failure: None,
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok && self.failure.is_none() {
            self.failure = Some(what());
        }
    }

    fn within(&mut self, err: f64, tol: f64, what: impl FnOnce() -> String) {
        self.worst = self.worst.max(err);
        self.check(err <= tol, || {
            format!("{} (error {err:e} > {tol:e})", what())
        });
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            name: self.name,
            checks: self.checks,
            worst_error: self.worst,
            verdict: match self.failure {
                None => Verdict::Pass,
                Some(why) => Verdict::Fail(why),
            },
        }
    }
}

fn possible<S: QuantumState>(s: &S, u: ControlInput, y: Outcome, p: &InteractionParams) -> bool {
    s.outcome_probability(u, y, p) > 1e-9
}

pub fn check_completeness(cfg: &VerifyConfig) -> PropertyResult {
    let mut t = Tally::new("kraus-completeness");
    let max_dim = if cfg.quick { 40 } else { 200 };
    for dim in 1..=max_dim {
        for u in ControlInput::ALL {
            let g = kraus_element(u, Outcome::G, &cfg.params, dim);
            let e = kraus_element(u, Outcome::E, &cfg.params, dim);
            let sum = g.transpose() * &g + e.transpose() * &e;
            let err = (sum - DMatrix::<f64>::identity(dim, dim)).amax();
            t.within(err, 1e-12, || format!("dim {dim}, u = {u}"));
        }
    }
    t.finish()
}

pub fn check_adjoint_relation(cfg: &VerifyConfig) -> PropertyResult {
    let mut t = Tally::new("lowering-is-adjoint-of-raising");
    for dim in 1..=40 {
        let up = kraus_element(ControlInput::Raise, Outcome::G, &cfg.params, dim);
        let down = kraus_element(ControlInput::Lower, Outcome::E, &cfg.params, dim + 1);
        t.within((down - up.transpose()).amax(), 0.0, || format!("dim {dim}"));
    }
    t.finish()
}

pub fn check_closed_form_q_v(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut t = Tally::new("closed-form-q_v");
    let nbar = cfg.params.nbar.0;
    let ctl = ControllerConfig::new(nbar, 0.0).expect("zero gain is valid");
    for _ in 0..cfg.count(1000) {
        let d = random_diagonal(rng, 30);
        let v = lyapunov_value(&d, &ctl);
        for u in ControlInput::ALL {
            let oracle = v - expected_lyapunov(&d, u, &cfg.params, &ctl);
            let closed = q_v_closed_form(&d, u, &cfg.params, &ctl);
            let (err, tol) = if u == ControlInput::Measure {
                (oracle.abs().max(closed.abs()), 1e-12)
            } else {
                ((oracle - closed).abs(), 1e-10)
            };
            t.within(err, tol, || format!("u = {u} on {:?}", d.probs()));
        }
    }
    t.finish()
}

pub fn check_dephasing_commutes(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut t = Tally::new("dephasing-commutes-with-step");
    for _ in 0..cfg.count(200) {
        let dim = rng.random_range(1..=12);
        let rho = random_density(rng, dim);
        let diag = dephase(&rho);
        for u in ControlInput::ALL {
            for y in Outcome::ALL {
                let pr = rho.outcome_probability(u, y, &cfg.params);
                let pd = diag.outcome_probability(u, y, &cfg.params);
                t.within((pr - pd).abs(), 1e-10, || {
                    format!("probability of ({u}, {y}), dim {dim}")
                });
                if pr <= IMPOSSIBLE_OUTCOME_THRESHOLD || pd <= IMPOSSIBLE_OUTCOME_THRESHOLD {
                    continue;
                }
                let (Ok(full), Ok(small)) = (
                    markov_step(&rho, u, y, &cfg.params),
                    diagonal_step(&diag, u, y, &cfg.params),
                ) else {
                    t.check(false, || format!("step ({u}, {y}) failed, dim {dim}"));
                    continue;
                };
                let a = dephase(&full);
                let len = a.dim().max(small.dim());
                let err = (0..len)
                    .map(|n| (a.population(n) - small.population(n)).abs())
                    .fold(0.0, f64::max);
                t.within(err, 1e-10, || {
                    format!("populations after ({u}, {y}), dim {dim}")
                });
            }
        }
    }
    t.finish()
}

pub fn check_support_rules(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> PropertyResult {
    let mut t = Tally::new("support-rules");
    let tol = DEFAULT_ZERO_TOLERANCE;
    let mut steps = 0;
    while steps < cfg.count(10_000) {
        let d = random_diagonal(rng, 40);
        let u = ControlInput::ALL[rng.random_range(0..3)];
        let y = Outcome::ALL[rng.random_range(0..2)];
        if !possible(&d, u, y, &cfg.params) {
            continue;
        }
        steps += 1;
        let before = support_stats(&d, tol).expect("nonzero state");
        let next = diagonal_step(&d, u, y, &cfg.params).expect("possible outcome");
        let after = support_stats(&next, tol).expect("nonzero state");
        let grow = usize::from(u == ControlInput::Raise);
        t.check(after.n_max.0 <= before.n_max.0 + grow, || {
            format!("n_max {} -> {} under ({u}, {y})", before.n_max, after.n_max)
        });
        t.check(after.n_length <= before.n_length, || {
            format!(
                "n_length {} -> {} under ({u}, {y})",
                before.n_length, after.n_length
            )
        });
    }
    t.finish()
}

pub fn check_purity_gain(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    let p = &cfg.params;
    let mut nonneg = Tally::new("measurement-purity-gain-nonnegative");
    for _ in 0..cfg.count(1000) {
        let d = random_diagonal(rng, 30);
        let q = q_w(&d, ControlInput::Measure, p);
        nonneg.check(q >= -1e-12, || format!("Q_W = {q:e} on {:?}", d.probs()));
    }

    let mut fock = Tally::new("purity-gain-vanishes-on-fock-states");
    for m in 0..=50 {
        for u in [ControlInput::Lower, ControlInput::Raise] {
            let q = q_w(&DiagonalState::point_mass(m), u, p);
            fock.within(q.abs(), 1e-12, || format!("|{m}⟩, u = {u}"));
        }
    }

    let (r_phi, r_theta) = irrationality_ratios(p);
    let strict = if is_numerically_rational(r_phi, 1000) || is_numerically_rational(r_theta, 1000) {
        PropertyResult {
            name: "measurement-purity-gain-strict",
            checks: 0,
            worst_error: 0.0,
            verdict: Verdict::Inapplicable(format!(
                "phi0/pi = {r_phi} or (theta0/pi)^2 = {r_theta} is rational to working precision"
            )),
        }
    } else if !p.is_theorem_compliant() {
        PropertyResult {
            name: "measurement-purity-gain-strict",
            checks: 0,
            worst_error: 0.0,
            verdict: Verdict::Inapplicable("phi_R differs from pi/2 - nbar*phi0".into()),
        }
    } else {
        let mut t = Tally::new("measurement-purity-gain-strict");
        let mut tested = 0;
        while tested < cfg.count(100) {
            let d = random_diagonal(rng, 30);
            if d.probs().iter().filter(|x| **x >= 0.1).count() < 2 {
                continue;
            }
            tested += 1;
            let q = q_w(&d, ControlInput::Measure, p);
            t.check(q > 0.0, || format!("Q_W = {q:e} on {:?}", d.probs()));
        }
        t.finish()
    };
    vec![nonneg.finish(), fock.finish(), strict]
}

/// Certificate for the default reference start (uniform over `0..=15`).
pub fn reference_certificate(cfg: &VerifyConfig) -> crate::Result<BoundCertificate> {
    bound_m0(
        cfg.epsilon,
        15,
        0,
        cfg.params.nbar.0,
        cfg.params.theta0,
        DEFAULT_BAND_HALF_WIDTH,
    )
}

pub fn check_bound(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Vec<PropertyResult> {
    if !(cfg.epsilon > 0.0) {
        let na = |name| PropertyResult {
            name,
            checks: 0,
            worst_error: 0.0,
            verdict: Verdict::Inapplicable("the support bound needs epsilon > 0".into()),
        };
        return vec![
            na("support-window"),
            na("lowering-dominates-at-ceiling"),
            na("supermartingale"),
        ];
    }
    let mut window = Tally::new("support-window");
    let theta0 = cfg.params.theta0;
    let nbar = cfg.params.nbar.0;
    for a in [0.1, 0.25, 0.4] {
        let n0_max = if cfg.quick { 20 } else { 50 };
        let lower = lower_threshold(cfg.epsilon, nbar, a);
        for n0 in 1..=n0_max {
            let Ok(start) = window_start(theta0, n0, lower, a, WindowMode::Constructive) else {
                window.check(false, || {
                    format!("no constructive window for N0 = {n0}, a = {a}")
                });
                continue;
            };
            let even = n0 + n0 % 2;
            window.check(
                crate::controller::window_holds(theta0, start.0, even, a),
                || format!("window at {start} fails membership for N0 = {n0}, a = {a}"),
            );
            let scanned = window_start(theta0, n0, lower, a, WindowMode::Scan { limit: start.0 });
            window.check(matches!(scanned, Ok(s) if s.0 <= start.0), || {
                format!("scan finds no window at or before {start} for N0 = {n0}, a = {a}")
            });
        }
    }

    let cert = match reference_certificate(cfg) {
        Ok(c) => c,
        Err(e) => {
            window.check(false, || format!("bound_m0 failed: {e}"));
            let w = window.finish();
            return vec![w];
        }
    };
    window.check(cert.invariants_hold(), || {
        format!("certificate invariants fail: {cert:?}")
    });

    let ctl = ControllerConfig::new(nbar, cfg.epsilon).expect("positive gain");
    let m0 = cert.m0.0;
    let mut dominates = Tally::new("lowering-dominates-at-ceiling");
    for _ in 0..cfg.count(100) {
        let len = rng.random_range(0..=cert.n0.min(m0));
        let d = random_diagonal_on(rng, m0 - len, m0);
        let report = q_values(&d, &cfg.params, &ctl);
        dominates.check(BoundCertificate::lower_dominates(&report), || {
            format!("Q at support [{}, {m0}]: {:?}", m0 - len, report.q_v_eps)
        });
    }

    let mut sm = Tally::new("supermartingale");
    let goal = DiagonalState::point_mass(nbar);
    let mut states = vec![goal.clone()];
    for _ in 0..cfg.count(1000) {
        let wide = rng.random_bool(0.1);
        let n_max = rng.random_range(0..=m0);
        let span = if wide {
            n_max
        } else {
            n_max.min(rng.random_range(0..40))
        };
        states.push(random_diagonal_on(rng, n_max - span, n_max));
    }
    for d in &states {
        let report = q_values(d, &cfg.params, &ctl);
        let q = report.q_v_eps_of(report.chosen);
        sm.check(q >= -1e-12, || {
            format!("Q = {q:e} under u = {}", report.chosen)
        });
        let at_goal = d == &goal;
        if at_goal {
            sm.within(q.abs(), 1e-10, || "Q at the goal".into());
        } else {
            sm.check(q > 1e-10, || {
                let s = support_stats(d, 0.0).expect("nonzero state");
                format!(
                    "Q = {q:e} vanishes away from the goal (support {}..={})",
                    s.n_min, s.n_max
                )
            });
        }
    }
    vec![window.finish(), dominates.finish(), sm.finish()]
}

/// Runs every property in a fixed order.
pub fn run_suite(cfg: &VerifyConfig) -> Vec<PropertyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![
        check_completeness(cfg),
        check_adjoint_relation(cfg),
        check_closed_form_q_v(cfg, &mut rng),
        check_dephasing_commutes(cfg, &mut rng),
        check_support_rules(cfg, &mut rng),
    ];
    out.extend(check_purity_gain(cfg, &mut rng));
    out.extend(check_bound(cfg, &mut rng));
    out
}
