//! Measurement-based feedback stabilization of photon-number (Fock) states
//! of a cavity field.
//!
//! The cavity state is probed at each sample step by one atom, with three
//! possible controls (QND measurement, photon emission, photon absorption)
//! and two measurement outcomes. A Lyapunov feedback chooses the control that
//! minimizes the expected value of `V_ε(ρ) = Tr(d(N)ρ) − ε·Σρ_nn²`.
//!
//! * [`fock`]: state representations and the dephasing map.
//! * [`kraus`]: measurement channels and the Markov step.
//! * [`controller`]: Lyapunov function, Q-functions, feedback, support bound.
//! * [`trajectory`]: seeded closed-loop realizations and settling times.
//! * [`montecarlo`]: parallel sweeps over the gain `ε`.
//! * [`verify`]: the property suite behind `fock-feedback verify`.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod controller;
pub mod error;
pub mod fock;
pub mod kraus;
pub mod montecarlo;
pub mod trajectory;
pub mod verify;

pub use controller::{
    bound_m0, expected_lyapunov, feedback, lyapunov_value, q_v_closed_form, q_values, q_w,
    window_start, BoundCertificate, ControllerConfig, DistanceWeight, LyapunovReport, WindowMode,
};
pub use error::{Error, Result};
pub use fock::{
    apply_number_function, dephase, hs_distance, support_stats, DensityMatrix, DiagonalState,
    PhotonIndex, SupportStats,
};
pub use kraus::{
    diagonal_step, kraus_element, markov_step, outcome_probability, ControlInput,
    InteractionParams, Outcome, QuantumState,
};
pub use montecarlo::{run_sweep, CensorPolicy, SweepConfig, SweepRow, SweepSummary};
pub use trajectory::{
    settling_time, simulate_closed_loop, FieldState, RunConfig, StepRecord, Trajectory,
};
