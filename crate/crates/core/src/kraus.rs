//! Measurement channels of the probe-atom interaction and the one-step
//! Markov update.
//!
//! Control `u = 0` is the dispersive (QND) interaction, `u = +1` sends the
//! atom in `|e⟩` for a resonant photon emission and `u = −1` sends it in `|g⟩`
//! for a resonant absorption. Every Kraus operator has real matrix elements in
//! the Fock basis and is either diagonal or a single off-diagonal band:
//!
//! | `(u, y)`  | `M_y(u)|n⟩`                        |
//! |-----------|------------------------------------|
//! | `(0, g)`  | `cos((φ₀n + φ_R)/2) |n⟩`           |
//! | `(0, e)`  | `sin((φ₀n + φ_R)/2) |n⟩`           |
//! | `(+1, g)` | `sin(θ₀/2·√(n+1)) |n+1⟩`           |
//! | `(+1, e)` | `cos(θ₀/2·√(n+1)) |n⟩`             |
//! | `(−1, g)` | `cos(θ₀/2·√n) |n⟩`                 |
//! | `(−1, e)` | `sin(θ₀/2·√n) |n−1⟩`, zero for n=0 |
//!
//! The diagonal route ([`diagonal_step`]) uses the closed-form population
//! updates; the dense route ([`markov_step`]) forms `M ρ Mᵀ` explicitly.

use std::borrow::Cow;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, DiagonalState, PhotonIndex};

/// Outcomes with probability at or below this are impossible.
pub const IMPOSSIBLE_OUTCOME_THRESHOLD: f64 = 1e-14;

/// The constant used in place of π for the reference parameter values.
#[allow(clippy::approx_constant)]
pub const REFERENCE_PI: f64 = 3.14;

/// Serialized as the integer `-1`, `0` or `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum ControlInput {
    /// `u = −1`: resonant atom prepared in `|g⟩`, may absorb one photon.
    Lower,
    /// `u = 0`: dispersive QND measurement.
    Measure,
    /// `u = +1`: resonant atom prepared in `|e⟩`, may emit one photon.
    Raise,
}

impl ControlInput {
    pub const ALL: [ControlInput; 3] = [
        ControlInput::Lower,
        ControlInput::Measure,
        ControlInput::Raise,
    ];

    pub fn value(self) -> i8 {
        match self {
            ControlInput::Lower => -1,
            ControlInput::Measure => 0,
            ControlInput::Raise => 1,
        }
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            -1 => Some(ControlInput::Lower),
            0 => Some(ControlInput::Measure),
            1 => Some(ControlInput::Raise),
            _ => None,
        }
    }

    /// Position in [`ControlInput::ALL`].
    pub fn index(self) -> usize {
        (self.value() + 1) as usize
    }
}

impl From<ControlInput> for i8 {
    fn from(u: ControlInput) -> i8 {
        u.value()
    }
}

impl TryFrom<i8> for ControlInput {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        ControlInput::from_value(v.into())
            .ok_or_else(|| format!("control must be -1, 0 or 1, got {v}"))
    }
}

impl fmt::Display for ControlInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    G,
    E,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::G, Outcome::E];

    pub fn other(self) -> Self {
        match self {
            Outcome::G => Outcome::E,
            Outcome::E => Outcome::G,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::G => "g",
            Outcome::E => "e",
        })
    }
}

/// Atom/field interaction parameters and the goal photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    /// Dispersive phase per photon (rad).
    pub phi0: f64,
    /// Reference phase of the Ramsey measurement (rad).
    pub phi_r: f64,
    /// Resonant pulse angle (rad).
    pub theta0: f64,
    /// Goal photon number.
    pub nbar: PhotonIndex,
}

impl InteractionParams {
    pub fn new(phi0: f64, phi_r: f64, theta0: f64, nbar: usize) -> Result<Self> {
        if !phi0.is_finite() || !phi_r.is_finite() || !theta0.is_finite() {
            return Err(Error::InvalidConfig(
                "interaction parameters must be finite".into(),
            ));
        }
        if theta0 == 0.0 {
            return Err(Error::InvalidConfig("theta0 must be nonzero".into()));
        }
        Ok(InteractionParams {
            phi0,
            phi_r,
            theta0,
            nbar: PhotonIndex(nbar),
        })
    }

    /// Takes `φ_R = π/2 − n̄·φ₀`, which puts the goal state at the middle of
    /// the Ramsey fringe.
    pub fn theorem_compliant(phi0: f64, theta0: f64, nbar: usize) -> Result<Self> {
        Self::new(phi0, FRAC_PI_2 - nbar as f64 * phi0, theta0, nbar)
    }

    /// `φ₀ = 0.252·3.14` and `θ₀ = 3.14·2/√(n̄+1)`, theorem-compliant `φ_R`.
    pub fn reference(nbar: usize) -> Self {
        Self::reference_with_pi(nbar, REFERENCE_PI)
    }

    /// The reference setup with `pi` substituted for 3.14 in `φ₀` and `θ₀`.
    pub fn reference_with_pi(nbar: usize, pi: f64) -> Self {
        let phi0 = 0.252 * pi;
        let theta0 = pi * 2.0 / ((nbar + 1) as f64).sqrt();
        Self::theorem_compliant(phi0, theta0, nbar).expect("reference parameters are valid")
    }

    /// True when `φ_R = π/2 − n̄·φ₀` holds to rounding.
    pub fn is_theorem_compliant(&self) -> bool {
        let target = FRAC_PI_2 - self.nbar.0 as f64 * self.phi0;
        (self.phi_r - target).abs() <= 1e-12 * (1.0 + target.abs())
    }

    fn qnd_angle(&self, n: usize) -> f64 {
        (self.phi0 * n as f64 + self.phi_r) / 2.0
    }

    fn resonant_angle(&self, n: usize) -> f64 {
        self.theta0 / 2.0 * (n as f64).sqrt()
    }
}

/// Squared Kraus matrix elements as functions of the photon number.
pub trait ChannelWeights {
    /// `cos²((φ₀n + φ_R)/2)`
    fn qnd_g(&self, n: usize) -> f64;
    /// `sin²((φ₀n + φ_R)/2)`
    fn qnd_e(&self, n: usize) -> f64;
    /// `sin²(θ₀/2·√n)`
    fn resonant_sin2(&self, n: usize) -> f64;
    /// `cos²(θ₀/2·√n)`
    fn resonant_cos2(&self, n: usize) -> f64;
}

impl ChannelWeights for InteractionParams {
    fn qnd_g(&self, n: usize) -> f64 {
        self.qnd_angle(n).cos().powi(2)
    }

    fn qnd_e(&self, n: usize) -> f64 {
        self.qnd_angle(n).sin().powi(2)
    }

    fn resonant_sin2(&self, n: usize) -> f64 {
        self.resonant_angle(n).sin().powi(2)
    }

    fn resonant_cos2(&self, n: usize) -> f64 {
        self.resonant_angle(n).cos().powi(2)
    }
}

/// Precomputed [`ChannelWeights`] for `n < len`, falling back to direct
/// evaluation beyond.
#[derive(Debug, Clone)]
pub struct WeightTable {
    params: InteractionParams,
    qnd_g: Vec<f64>,
    qnd_e: Vec<f64>,
    res_sin2: Vec<f64>,
    res_cos2: Vec<f64>,
}

impl WeightTable {
    pub fn new(params: InteractionParams, len: usize) -> Self {
        WeightTable {
            params,
            qnd_g: (0..len).map(|n| params.qnd_g(n)).collect(),
            qnd_e: (0..len).map(|n| params.qnd_e(n)).collect(),
            res_sin2: (0..len).map(|n| params.resonant_sin2(n)).collect(),
            res_cos2: (0..len).map(|n| params.resonant_cos2(n)).collect(),
        }
    }

    pub fn params(&self) -> &InteractionParams {
        &self.params
    }
}

impl ChannelWeights for WeightTable {
    #[inline]
    fn qnd_g(&self, n: usize) -> f64 {
        self.qnd_g
            .get(n)
            .copied()
            .unwrap_or_else(|| self.params.qnd_g(n))
    }

    #[inline]
    fn qnd_e(&self, n: usize) -> f64 {
        self.qnd_e
            .get(n)
            .copied()
            .unwrap_or_else(|| self.params.qnd_e(n))
    }

    #[inline]
    fn resonant_sin2(&self, n: usize) -> f64 {
        self.res_sin2
            .get(n)
            .copied()
            .unwrap_or_else(|| self.params.resonant_sin2(n))
    }

    #[inline]
    fn resonant_cos2(&self, n: usize) -> f64 {
        self.res_cos2
            .get(n)
            .copied()
            .unwrap_or_else(|| self.params.resonant_cos2(n))
    }
}

/// Row count of `M_y(u)` acting on a `dim`-dimensional space.
pub fn output_dim(u: ControlInput, y: Outcome, dim: usize) -> usize {
    match (u, y) {
        (ControlInput::Raise, Outcome::G) => dim + 1,
        (ControlInput::Lower, Outcome::E) => dim.saturating_sub(1),
        _ => dim,
    }
}

/// The matrix of `M_y(u)` from `span{|0⟩..|dim−1⟩}` into
/// `span{|0⟩..|output_dim−1⟩}`.
pub fn kraus_element(
    u: ControlInput,
    y: Outcome,
    params: &InteractionParams,
    dim: usize,
) -> DMatrix<f64> {
    let rows = output_dim(u, y, dim);
    let mut m = DMatrix::zeros(rows, dim);
    for n in 0..dim {
        match (u, y) {
            (ControlInput::Measure, Outcome::G) => m[(n, n)] = params.qnd_angle(n).cos(),
            (ControlInput::Measure, Outcome::E) => m[(n, n)] = params.qnd_angle(n).sin(),
            (ControlInput::Raise, Outcome::G) => m[(n + 1, n)] = params.resonant_angle(n + 1).sin(),
            (ControlInput::Raise, Outcome::E) => m[(n, n)] = params.resonant_angle(n + 1).cos(),
            (ControlInput::Lower, Outcome::G) => m[(n, n)] = params.resonant_angle(n).cos(),
            // a·sin(θ₀/2·√N)/√N, with sin(0)/0 = 1 so that a|0⟩ = 0 contributes nothing.
            (ControlInput::Lower, Outcome::E) => {
                if n >= 1 {
                    m[(n - 1, n)] = params.resonant_angle(n).sin();
                }
            }
        }
    }
    m
}

/// Unnormalized populations of `M_y(u) ρ M_y(u)†` for diagonal `ρ`, written
/// into `out`. The buffer grows by one slot for `(+1, g)` and keeps its
/// length otherwise.
pub(crate) fn branch_populations<W: ChannelWeights>(
    probs: &[f64],
    u: ControlInput,
    y: Outcome,
    w: &W,
    out: &mut Vec<f64>,
) {
    out.clear();
    let len = probs.len();
    match (u, y) {
        (ControlInput::Measure, Outcome::G) => {
            out.extend(probs.iter().enumerate().map(|(n, p)| p * w.qnd_g(n)));
        }
        (ControlInput::Measure, Outcome::E) => {
            out.extend(probs.iter().enumerate().map(|(n, p)| p * w.qnd_e(n)));
        }
        (ControlInput::Raise, Outcome::G) => {
            out.push(0.0);
            out.extend(
                probs
                    .iter()
                    .enumerate()
                    .map(|(n, p)| p * w.resonant_sin2(n + 1)),
            );
        }
        (ControlInput::Raise, Outcome::E) => {
            out.extend(
                probs
                    .iter()
                    .enumerate()
                    .map(|(n, p)| p * w.resonant_cos2(n + 1)),
            );
        }
        (ControlInput::Lower, Outcome::G) => {
            out.extend(
                probs
                    .iter()
                    .enumerate()
                    .map(|(n, p)| p * w.resonant_cos2(n)),
            );
        }
        (ControlInput::Lower, Outcome::E) => {
            out.extend((1..len).map(|n| probs[n] * w.resonant_sin2(n)));
            out.push(0.0);
        }
    }
}

/// `Tr(M_y(u) ρ M_y(u)†)` for diagonal `ρ` given as populations.
pub(crate) fn branch_mass<W: ChannelWeights>(
    probs: &[f64],
    u: ControlInput,
    y: Outcome,
    w: &W,
) -> f64 {
    let it = probs.iter().enumerate();
    match (u, y) {
        (ControlInput::Measure, Outcome::G) => it.map(|(n, p)| p * w.qnd_g(n)).sum(),
        (ControlInput::Measure, Outcome::E) => it.map(|(n, p)| p * w.qnd_e(n)).sum(),
        (ControlInput::Raise, Outcome::G) => it.map(|(n, p)| p * w.resonant_sin2(n + 1)).sum(),
        (ControlInput::Raise, Outcome::E) => it.map(|(n, p)| p * w.resonant_cos2(n + 1)).sum(),
        (ControlInput::Lower, Outcome::G) => it.map(|(n, p)| p * w.resonant_cos2(n)).sum(),
        (ControlInput::Lower, Outcome::E) => it.map(|(n, p)| p * w.resonant_sin2(n)).sum(),
    }
}

/// States the Markov chain can act on.
pub trait QuantumState: Clone {
    /// Diagonal entries `ρ_nn`.
    fn populations(&self) -> Cow<'_, [f64]>;

    /// `Tr(M_y(u) ρ M_y(u)†)`.
    fn outcome_probability(&self, u: ControlInput, y: Outcome, params: &InteractionParams) -> f64;

    /// The normalized post-measurement state for outcome `y`.
    fn measure(&self, u: ControlInput, y: Outcome, params: &InteractionParams) -> Result<Self>;
}

impl QuantumState for DiagonalState {
    fn populations(&self) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.probs())
    }

    fn outcome_probability(&self, u: ControlInput, y: Outcome, params: &InteractionParams) -> f64 {
        branch_mass(self.probs(), u, y, params)
    }

    fn measure(&self, u: ControlInput, y: Outcome, params: &InteractionParams) -> Result<Self> {
        diagonal_step(self, u, y, params)
    }
}

impl QuantumState for DensityMatrix {
    fn populations(&self) -> Cow<'_, [f64]> {
        Cow::Owned(DensityMatrix::populations(self))
    }

    fn outcome_probability(&self, u: ControlInput, y: Outcome, params: &InteractionParams) -> f64 {
        dense_branch(self, u, y, params).trace().re
    }

    fn measure(&self, u: ControlInput, y: Outcome, params: &InteractionParams) -> Result<Self> {
        markov_step(self, u, y, params)
    }
}

pub fn outcome_probability<S: QuantumState>(
    rho: &S,
    u: ControlInput,
    y: Outcome,
    params: &InteractionParams,
) -> f64 {
    rho.outcome_probability(u, y, params)
}

fn dense_branch(
    rho: &DensityMatrix,
    u: ControlInput,
    y: Outcome,
    params: &InteractionParams,
) -> DMatrix<Complex64> {
    let m = kraus_element(u, y, params, rho.dim()).map(|x| Complex64::new(x, 0.0));
    &m * rho.entries() * m.transpose()
}

/// `M_y(u) ρ M_y(u)† / Tr(·)` on the full matrix. The dimension grows by one
/// for `(+1, g)` and is otherwise kept (a `(−1, e)` result is zero-padded).
pub fn markov_step(
    rho: &DensityMatrix,
    u: ControlInput,
    y: Outcome,
    params: &InteractionParams,
) -> Result<DensityMatrix> {
    let mut next = dense_branch(rho, u, y, params);
    let mass = next.trace().re;
    if !(mass > IMPOSSIBLE_OUTCOME_THRESHOLD) {
        return Err(Error::ImpossibleOutcome {
            u,
            y,
            probability: mass,
        });
    }
    next.unscale_mut(mass);
    let out = DensityMatrix::from_raw(next).padded(rho.dim());
    out.validate()?;
    Ok(out)
}

/// The closed-form population update for diagonal states.
pub fn diagonal_step(
    d: &DiagonalState,
    u: ControlInput,
    y: Outcome,
    params: &InteractionParams,
) -> Result<DiagonalState> {
    diagonal_step_with(d, u, y, params)
}

pub(crate) fn diagonal_step_with<W: ChannelWeights>(
    d: &DiagonalState,
    u: ControlInput,
    y: Outcome,
    w: &W,
) -> Result<DiagonalState> {
    let mut out = Vec::with_capacity(d.dim() + 1);
    branch_populations(d.probs(), u, y, w, &mut out);
    let mass: f64 = out.iter().sum();
    if !(mass > IMPOSSIBLE_OUTCOME_THRESHOLD) {
        return Err(Error::ImpossibleOutcome {
            u,
            y,
            probability: mass,
        });
    }
    out.iter_mut().for_each(|p| *p /= mass);
    Ok(DiagonalState::from_raw(out))
}

/// `φ₀/π` and `(θ₀/π)²`, the ratios whose irrationality the convergence
/// guarantees rely on.
pub fn irrationality_ratios(params: &InteractionParams) -> (f64, f64) {
    (params.phi0 / PI, (params.theta0 / PI).powi(2))
}
