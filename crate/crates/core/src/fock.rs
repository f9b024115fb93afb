//! Truncated Fock-space state representations.
//!
//! Two representations live here: [`DiagonalState`], a population vector
//! over photon numbers `0..=n_max`, and [`DensityMatrix`], a dense complex
//! Hermitian matrix on the same truncated space. [`dephase`] maps the second
//! onto the first by keeping only the diagonal.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Populations at or below this value are treated as zero when locating the support.
pub const DEFAULT_ZERO_TOLERANCE: f64 = 1e-12;
/// Allowed deviation of the total population (trace) from one.
pub const TRACE_TOLERANCE: f64 = 1e-9;
/// Allowed negative excursion of a population.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-12;
/// Allowed deviation from Hermiticity, entrywise.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
/// Allowed negative excursion of the smallest eigenvalue.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// A photon number `n`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct PhotonIndex(pub usize);

impl PhotonIndex {
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<usize> for PhotonIndex {
    fn from(n: usize) -> Self {
        PhotonIndex(n)
    }
}

impl fmt::Display for PhotonIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Photon-number support of a diagonal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportStats {
    pub n_min: PhotonIndex,
    pub n_max: PhotonIndex,
    pub n_length: usize,
}

/// A diagonal density operator stored as its populations `ρ_nn`, `n = 0..len`.
///
/// The buffer may carry trailing zero slots; the photon-number support is
/// found with [`support_stats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalState {
    probs: Vec<f64>,
}

impl DiagonalState {
    /// Validates non-negativity and unit sum.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidState("empty population vector".into()));
        }
        if let Some((n, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < -NEGATIVITY_TOLERANCE)
        {
            return Err(Error::InvalidState(format!("population {p} at n = {n}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > TRACE_TOLERANCE {
            return Err(Error::InvalidState(format!("populations sum to {total}")));
        }
        Ok(DiagonalState { probs })
    }

    /// Divides by the total. Fails if the total is not positive.
    pub fn from_unnormalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidState(format!(
                "cannot normalize total weight {total}"
            )));
        }
        for w in weights.iter_mut() {
            *w /= total;
        }
        DiagonalState::new(weights)
    }

    /// `|n⟩⟨n|` stored in `n + 1` slots.
    pub fn point_mass(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        DiagonalState { probs }
    }

    /// Uniform mixture over `lo..=hi`.
    pub fn uniform(lo: usize, hi: usize) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidState(format!("empty range {lo}..={hi}")));
        }
        let w = 1.0 / (hi - lo + 1) as f64;
        let mut probs = vec![0.0; hi + 1];
        probs[lo..=hi].iter_mut().for_each(|p| *p = w);
        Ok(DiagonalState { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    /// Number of stored slots (`n_max + 1` of the buffer).
    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    /// Population at `n`, zero beyond the buffer.
    pub fn population(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    /// Zero-pads the buffer to `dim` slots. Never shrinks.
    pub fn padded(&self, dim: usize) -> Self {
        let mut probs = self.probs.clone();
        if probs.len() < dim {
            probs.resize(dim, 0.0);
        }
        DiagonalState { probs }
    }

    /// Drops trailing slots that are exactly zero, keeping at least one.
    pub fn compact(&mut self) {
        while self.probs.len() > 1 && self.probs[self.probs.len() - 1] == 0.0 {
            self.probs.pop();
        }
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        DiagonalState { probs }
    }
}

/// A density matrix on `span{|0⟩, …, |dim−1⟩}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseRepr", into = "DenseRepr")]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Checks squareness, Hermiticity and unit trace. Positivity is checked
    /// separately by [`DensityMatrix::validate_psd`].
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        let rho = DensityMatrix { entries };
        rho.validate()?;
        Ok(rho)
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.entries.shape();
        if r != c || r == 0 {
            return Err(Error::InvalidState(format!("density matrix shape {r}x{c}")));
        }
        for m in 0..r {
            for n in m..r {
                let d = self.entries[(m, n)] - self.entries[(n, m)].conj();
                if d.norm() > HERMITIAN_TOLERANCE {
                    return Err(Error::InvalidState(format!(
                        "not Hermitian at ({m}, {n}): deviation {:e}",
                        d.norm()
                    )));
                }
            }
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        Ok(())
    }

    /// O(d³) eigenvalue check; used on verification paths only.
    pub fn validate_psd(&self) -> Result<()> {
        let min = self
            .entries
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < -PSD_TOLERANCE {
            return Err(Error::InvalidState(format!("smallest eigenvalue {min:e}")));
        }
        Ok(())
    }

    /// `|ψ⟩⟨ψ|/⟨ψ|ψ⟩` for the given amplitudes.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        let norm2: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm2 > 0.0) {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let d = amplitudes.len();
        let entries = DMatrix::from_fn(d, d, |m, n| amplitudes[m] * amplitudes[n].conj() / norm2);
        DensityMatrix::new(entries)
    }

    /// Embeds a diagonal state as a diagonal matrix of the same dimension.
    pub fn from_diagonal(state: &DiagonalState) -> Self {
        let d = state.dim();
        let mut entries = DMatrix::zeros(d, d);
        for (n, p) in state.probs().iter().enumerate() {
            entries[(n, n)] = Complex64::new(*p, 0.0);
        }
        DensityMatrix { entries }
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.diagonal().iter().sum()
    }

    /// Real parts of the diagonal.
    pub fn populations(&self) -> Vec<f64> {
        self.entries.diagonal().iter().map(|z| z.re).collect()
    }

    /// Zero-pads to `dim × dim`. Never shrinks.
    pub fn padded(&self, dim: usize) -> Self {
        let d = self.dim();
        if dim <= d {
            return self.clone();
        }
        let mut entries = DMatrix::zeros(dim, dim);
        entries.view_mut((0, 0), (d, d)).copy_from(&self.entries);
        DensityMatrix { entries }
    }

    pub(crate) fn from_raw(entries: DMatrix<Complex64>) -> Self {
        DensityMatrix { entries }
    }
}

/// Row-major real and imaginary parts.
#[derive(Serialize, Deserialize)]
struct DenseRepr {
    dim: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl From<DensityMatrix> for DenseRepr {
    fn from(rho: DensityMatrix) -> Self {
        let d = rho.dim();
        let mut re = Vec::with_capacity(d * d);
        let mut im = Vec::with_capacity(d * d);
        for m in 0..d {
            for n in 0..d {
                re.push(rho.entries[(m, n)].re);
                im.push(rho.entries[(m, n)].im);
            }
        }
        DenseRepr { dim: d, re, im }
    }
}

impl TryFrom<DenseRepr> for DensityMatrix {
    type Error = Error;

    fn try_from(r: DenseRepr) -> Result<Self> {
        if r.re.len() != r.dim * r.dim || r.im.len() != r.dim * r.dim {
            return Err(Error::InvalidState(format!(
                "expected {} entries for dimension {}",
                r.dim * r.dim,
                r.dim
            )));
        }
        let entries = DMatrix::from_fn(r.dim, r.dim, |m, n| {
            Complex64::new(r.re[m * r.dim + n], r.im[m * r.dim + n])
        });
        DensityMatrix::new(entries)
    }
}

/// Values `g(n) = f(n + shift)` for `n = 0..state_dim`, with `g(n) = 0`
/// wherever `n + shift < 0`. This is the diagonal of `f(N + shift)`.
pub fn apply_number_function<F>(f: F, shift: i64, state_dim: usize) -> Vec<f64>
where
    F: Fn(u64) -> f64,
{
    (0..state_dim as i64)
        .map(|n| {
            let m = n + shift;
            if m < 0 {
                0.0
            } else {
                f(m as u64)
            }
        })
        .collect()
}

/// Keeps the diagonal of `rho`.
pub fn dephase(rho: &DensityMatrix) -> DiagonalState {
    DiagonalState::from_raw(rho.populations())
}

pub fn support_stats(state: &DiagonalState, zero_tolerance: f64) -> Result<SupportStats> {
    let probs = state.probs();
    let n_min = probs
        .iter()
        .position(|p| *p > zero_tolerance)
        .ok_or(Error::AllZero {
            tolerance: zero_tolerance,
        })?;
    let n_max = probs
        .iter()
        .rposition(|p| *p > zero_tolerance)
        .unwrap_or(n_min);
    Ok(SupportStats {
        n_min: PhotonIndex(n_min),
        n_max: PhotonIndex(n_max),
        n_length: n_max - n_min,
    })
}

/// Hilbert–Schmidt distance; the smaller matrix is zero-padded.
pub fn hs_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let d = a.dim().max(b.dim());
    let at = |m: &DensityMatrix, i: usize, j: usize| {
        if i < m.dim() && j < m.dim() {
            m.entries[(i, j)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += (at(a, i, j) - at(b, i, j)).norm_sqr();
        }
    }
    acc.sqrt()
}
