//! Straight-from-the-definitions reimplementations used as test oracles.
#![allow(dead_code)]

use fock_feedback::{ControlInput, DiagonalState, InteractionParams, Outcome};
use rand::Rng;

pub fn s2(theta0: f64, n: usize) -> f64 {
    (theta0 / 2.0 * (n as f64).sqrt()).sin().powi(2)
}

/// Unnormalized post-measurement populations, written index by index from
/// the matrix elements of each Kraus operator.
pub fn branch(p: &InteractionParams, probs: &[f64], u: ControlInput, y: Outcome) -> Vec<f64> {
    let dim = probs.len();
    let mut out = vec![0.0; dim + 1];
    for (n, &rho) in probs.iter().enumerate() {
        let q = (p.phi0 * n as f64 + p.phi_r) / 2.0;
        match (u, y) {
            (ControlInput::Measure, Outcome::G) => out[n] += rho * q.cos().powi(2),
            (ControlInput::Measure, Outcome::E) => out[n] += rho * q.sin().powi(2),
            (ControlInput::Raise, Outcome::G) => out[n + 1] += rho * s2(p.theta0, n + 1),
            (ControlInput::Raise, Outcome::E) => out[n] += rho * (1.0 - s2(p.theta0, n + 1)),
            (ControlInput::Lower, Outcome::G) => out[n] += rho * (1.0 - s2(p.theta0, n)),
            (ControlInput::Lower, Outcome::E) => {
                if n > 0 {
                    out[n - 1] += rho * s2(p.theta0, n)
                }
            }
        }
    }
    out
}

pub fn v_eps(probs: &[f64], nbar: usize, eps: f64) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(n, r)| (n as f64 - nbar as f64).powi(2) * r - eps * r * r)
        .sum()
}

/// `E[V_ε(ρ_{k+1})]`, normalizing each branch explicitly.
pub fn expected_v(p: &InteractionParams, probs: &[f64], u: ControlInput, eps: f64) -> f64 {
    let nbar = p.nbar.0;
    Outcome::ALL
        .iter()
        .map(|&y| {
            let b = branch(p, probs, u, y);
            let m: f64 = b.iter().sum();
            if m > 1e-14 {
                let normed: Vec<f64> = b.iter().map(|x| x / m).collect();
                m * v_eps(&normed, nbar, eps)
            } else {
                0.0
            }
        })
        .sum()
}

/// Index of the control minimizing `E[V_ε]`, or `None` when the best two
/// are closer than `gap`.
pub fn oracle_feedback(
    p: &InteractionParams,
    probs: &[f64],
    eps: f64,
    gap: f64,
) -> Option<ControlInput> {
    let mut vals: Vec<(f64, ControlInput)> = ControlInput::ALL
        .iter()
        .map(|&u| (expected_v(p, probs, u, eps), u))
        .collect();
    vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if vals[1].0 - vals[0].0 < gap {
        None
    } else {
        Some(vals[0].1)
    }
}

/// Closed forms expanded by hand with `d(n) = (n − n̄)²`.
pub fn q_v_expanded(p: &InteractionParams, probs: &[f64], u: ControlInput) -> f64 {
    let nbar = p.nbar.0 as f64;
    probs
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let nf = n as f64;
            match u {
                ControlInput::Measure => 0.0,
                ControlInput::Raise => -r * (2.0 * (nf - nbar) + 1.0) * s2(p.theta0, n + 1),
                ControlInput::Lower => r * (2.0 * (nf - nbar) - 1.0) * s2(p.theta0, n),
            }
        })
        .sum()
}

/// Smallest `k̃` with every entry from `k̃` on above `threshold`, by brute force.
pub fn settling_brute(pops: &[f64], threshold: f64) -> Option<usize> {
    (0..pops.len()).find(|&k| pops[k..].iter().all(|p| *p > threshold))
}

pub fn random_probs<R: Rng>(rng: &mut R, max_dim: usize) -> Vec<f64> {
    let dim = rng.random_range(1..=max_dim);
    let lo = rng.random_range(0..dim);
    let mut w: Vec<f64> = (0..dim)
        .map(|n| {
            if n >= lo {
                rng.random_range(1e-3..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

pub fn diag(probs: &[f64]) -> DiagonalState {
    DiagonalState::new(probs.to_vec()).unwrap()
}

/// `W(ρ) − E[W(ρ_{k+1})]` with `W = −Σρ_n²`, normalizing each branch explicitly.
pub fn q_w_direct(p: &InteractionParams, probs: &[f64], u: ControlInput) -> f64 {
    let w = |v: &[f64]| -v.iter().map(|x| x * x).sum::<f64>();
    let expected: f64 = Outcome::ALL
        .iter()
        .map(|&y| {
            let b = branch(p, probs, u, y);
            let m: f64 = b.iter().sum();
            if m > 1e-14 {
                let normed: Vec<f64> = b.iter().map(|x| x / m).collect();
                m * w(&normed)
            } else {
                0.0
            }
        })
        .sum();
    w(probs) - expected
}

/// `Q_{V_ε}` from the closed-form `Q_V` and the direct purity term, which
/// stays accurate when `d(n)` is large.
pub fn q_v_eps_oracle(p: &InteractionParams, probs: &[f64], u: ControlInput, eps: f64) -> f64 {
    q_v_expanded(p, probs, u) + eps * q_w_direct(p, probs, u)
}
