//! Acceptance suite: one line per criterion, `PASS` or `FAIL` with the
//! measured numbers. Set `FOCK_ACCEPTANCE_STRICT=1` to turn any failing
//! criterion into a nonzero exit status.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use fock_feedback::controller::lower_threshold;
use fock_feedback::verify::{random_density, random_diagonal, random_diagonal_on};
use fock_feedback::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn reference() -> InteractionParams {
    InteractionParams::reference(10)
}

/// Max-entry deviation of `Σ_y M_y†M_y` from the identity, accumulated from
/// the nonzero entries of each matrix.
fn completeness_error(u: ControlInput, p: &InteractionParams, dim: usize) -> f64 {
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for y in Outcome::ALL {
        let m = kraus_element(u, y, p, dim);
        for r in 0..m.nrows() {
            let row: Vec<(usize, f64)> = (0..m.ncols())
                .filter(|&c| m[(r, c)] != 0.0)
                .map(|c| (c, m[(r, c)]))
                .collect();
            for &(i, a) in &row {
                for &(j, b) in &row {
                    *acc.entry((i, j)).or_default() += a * b;
                }
            }
        }
    }
    let mut worst = 0.0f64;
    for i in 0..dim {
        worst = worst.max((acc.get(&(i, i)).copied().unwrap_or(0.0) - 1.0).abs());
    }
    for (&(i, j), v) in &acc {
        if i != j {
            worst = worst.max(v.abs());
        }
    }
    worst
}

fn criterion_1() -> Check {
    let p = reference();
    let mut worst = 0.0f64;
    for dim in 1..=200 {
        for u in ControlInput::ALL {
            let e = completeness_error(u, &p, dim);
            worst = worst.max(e);
            ensure(e <= 1e-12, || {
                format!("u = {u}, dim = {dim}: deviation {e:e}")
            })?;
        }
    }
    Ok(format!("dims 1..200, worst deviation {worst:e}"))
}

fn criterion_2() -> Check {
    let p = reference();
    let cfg = ControllerConfig::new(10, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_pm, mut worst_0) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let probs = random_probs(&mut rng, 30);
        let d = diag(&probs);
        for u in [ControlInput::Lower, ControlInput::Raise] {
            let direct = v_eps(&probs, 10, 0.0) - expected_v(&p, &probs, u, 0.0);
            let e = (q_v_closed_form(&d, u, &p, &cfg) - direct).abs();
            worst_pm = worst_pm.max(e);
            ensure(e <= 1e-10, || format!("u = {u}: error {e:e} on {probs:?}"))?;
        }
        let q0 = q_v_closed_form(&d, ControlInput::Measure, &p, &cfg).abs();
        let direct0 =
            (v_eps(&probs, 10, 0.0) - expected_v(&p, &probs, ControlInput::Measure, 0.0)).abs();
        worst_0 = worst_0.max(q0).max(direct0);
        ensure(q0 <= 1e-12 && direct0 <= 1e-12, || {
            format!("Q_V(., 0) = {q0:e}, direct {direct0:e}")
        })?;
    }
    Ok(format!(
        "1000 states, worst |error| {worst_pm:e} for u = ±1, worst |Q_V(., 0)| {worst_0:e}"
    ))
}

fn criterion_3() -> Check {
    let p = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut steps = 0;
    for _ in 0..200 {
        let dim = rng.random_range(1..=12);
        let rho = random_density(&mut rng, dim);
        let d = dephase(&rho);
        for u in ControlInput::ALL {
            for y in Outcome::ALL {
                let (a, b) = (
                    outcome_probability(&rho, u, y, &p),
                    outcome_probability(&d, u, y, &p),
                );
                let oracle: f64 = branch(&p, d.probs(), u, y).iter().sum();
                let e = (a - b).abs().max((b - oracle).abs());
                worst = worst.max(e);
                ensure(e <= 1e-10, || {
                    format!("dim {dim}, ({u}, {y}): probabilities differ by {e:e}")
                })?;
                if a <= 1e-12 {
                    continue;
                }
                let full = dephase(&markov_step(&rho, u, y, &p).map_err(|e| e.to_string())?);
                let fast = diagonal_step(&d, u, y, &p).map_err(|e| e.to_string())?;
                for n in 0..full.dim().max(fast.dim()) {
                    let e = (full.population(n) - fast.population(n)).abs();
                    worst = worst.max(e);
                    ensure(e <= 1e-10, || {
                        format!("dim {dim}, ({u}, {y}), n = {n}: {e:e}")
                    })?;
                }
                steps += 1;
            }
        }
    }
    Ok(format!(
        "200 matrices, {steps} nondegenerate steps, worst deviation {worst:e}"
    ))
}

fn support_of(probs: &[f64], tol: f64) -> Option<(usize, usize)> {
    let lo = probs.iter().position(|x| *x > tol)?;
    let hi = probs.iter().rposition(|x| *x > tol)?;
    Some((lo, hi))
}

fn criterion_4() -> Check {
    let p = reference();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut taken = 0;
    let mut violations = Vec::new();
    while taken < 10_000 {
        let d = random_diagonal(&mut rng, 40);
        let u = ControlInput::ALL[rng.random_range(0..3)];
        let y = Outcome::ALL[rng.random_range(0..2)];
        if outcome_probability(&d, u, y, &p) <= 1e-12 {
            continue;
        }
        taken += 1;
        let next = diagonal_step(&d, u, y, &p).map_err(|e| e.to_string())?;
        let (lo0, hi0) = support_of(d.probs(), 1e-12).unwrap();
        let Some((lo1, hi1)) = support_of(next.probs(), 1e-12) else {
            violations.push(format!("empty support after ({u}, {y})"));
            continue;
        };
        let allowed = hi0 + usize::from(u == ControlInput::Raise);
        if hi1 > allowed || hi1 - lo1 > hi0 - lo0 {
            violations.push(format!("({u}, {y}): [{lo0}, {hi0}] -> [{lo1}, {hi1}]"));
        }
        // The library's own support report must agree with the scan above.
        let s = support_stats(&next, 1e-12).map_err(|e| e.to_string())?;
        if (s.n_min.0, s.n_max.0, s.n_length) != (lo1, hi1, hi1 - lo1) {
            violations.push(format!("support_stats disagrees: {s:?} vs [{lo1}, {hi1}]"));
        }
    }
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    Ok("10000 steps, 0 violations".into())
}

fn in_band(theta0: f64, n: usize, a: f64) -> bool {
    let s = s2(theta0, n);
    0.5 - a <= s && s <= 0.5 + a
}

fn criterion_5() -> Check {
    let p = reference();
    let eps = 1000.0;
    for a in [0.1, 0.25, 0.4] {
        for n_total in 1..=50usize {
            let c = bound_m0(eps, n_total - 1, 0, 10, p.theta0, a).map_err(|e| e.to_string())?;
            let start = c.window_start.0;
            ensure(
                c.window_len >= n_total
                    && start > c.lower
                    && c.lower == lower_threshold(eps, 10, a),
                || format!("a = {a}, N0 = {n_total}: malformed certificate {c:?}"),
            )?;
            ensure(
                (start..start + c.window_len).all(|n| in_band(p.theta0, n, a)),
                || format!("a = {a}, N0 = {n_total}: window at {start} leaves the band"),
            )?;
            ensure(c.m0.0 + 1 == start + c.window_len, || {
                format!("a = {a}, N0 = {n_total}: m0 = {}", c.m0)
            })?;
            let scanned =
                (c.lower + 1..=start).find(|&s| (s..s + n_total).all(|n| in_band(p.theta0, n, a)));
            ensure(scanned.is_some(), || {
                format!("a = {a}, N0 = {n_total}: scan finds no window up to {start}")
            })?;
        }
    }

    let cert = bound_m0(eps, 15, 0, 10, p.theta0, 0.4).map_err(|e| e.to_string())?;
    let m0 = cert.m0.0;
    let cfg = ControllerConfig::new(10, eps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut margin = f64::INFINITY;
    for i in 0..100 {
        let len = rng.random_range(0..=15);
        let d = random_diagonal_on(&mut rng, m0 - len, m0);
        let q: Vec<f64> = ControlInput::ALL
            .iter()
            .map(|&u| q_v_eps_oracle(&p, d.probs(), u, eps))
            .collect();
        let report = q_values(&d, &p, &cfg);
        let (lower, others) = (
            q[ControlInput::Lower.index()],
            q[ControlInput::Measure.index()].max(q[ControlInput::Raise.index()]),
        );
        margin = margin.min(lower - others);
        ensure(lower > others, || {
            format!("state {i}: Q(-1) = {lower}, best other {others}")
        })?;
        ensure(
            BoundCertificate::lower_dominates(&report) && report.chosen == ControlInput::Lower,
            || format!("state {i}: controller does not pick -1"),
        )?;
    }
    Ok(format!(
        "150 windows verified (N0 = 1..50, a in {{0.1, 0.25, 0.4}}); m0 = {m0}; min Q(-1) margin {margin:.3e} over 100 states"
    ))
}

fn criterion_6() -> Check {
    let p = reference();
    ensure(p.is_theorem_compliant(), || {
        "reference phase is not theorem-compliant".into()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut min_q0 = f64::INFINITY;
    for _ in 0..1000 {
        let probs = random_probs(&mut rng, 30);
        let q = q_w(&diag(&probs), ControlInput::Measure, &p);
        let direct = q_w_direct(&p, &probs, ControlInput::Measure);
        min_q0 = min_q0.min(q);
        ensure(q >= -1e-12 && (q - direct).abs() <= 1e-12, || {
            format!("Q_W(., 0) = {q:e}, direct {direct:e}")
        })?;
    }
    let mut worst_fock = 0.0f64;
    for m in 0..=50 {
        for u in [ControlInput::Lower, ControlInput::Raise] {
            let q = q_w(&DiagonalState::point_mass(m), u, &p);
            worst_fock = worst_fock.max(q.abs());
            ensure(q.abs() <= 1e-12, || format!("Q_W(|{m}>, {u}) = {q:e}"))?;
        }
    }
    let mut strict = 0;
    let mut min_strict = f64::INFINITY;
    while strict < 100 {
        let probs = random_probs(&mut rng, 20);
        if probs.iter().filter(|x| **x >= 0.1).count() < 2 {
            continue;
        }
        strict += 1;
        let q = q_w(&diag(&probs), ControlInput::Measure, &p);
        min_strict = min_strict.min(q);
        ensure(q > 0.0, || format!("Q_W(., 0) = {q:e} on {probs:?}"))?;
    }
    Ok(format!(
        "min Q_W(., 0) = {min_q0:.3e} over 1000 states; worst Fock |Q_W| {worst_fock:e}; min strict Q_W = {min_strict:.3e}"
    ))
}

fn criterion_7() -> Check {
    let p = reference();
    let eps = 1000.0;
    let cfg = ControllerConfig::new(10, eps).unwrap();
    let m0 = bound_m0(eps, 15, 0, 10, p.theta0, 0.4)
        .map_err(|e| e.to_string())?
        .m0
        .0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut states = vec![DiagonalState::point_mass(10)];
    for i in 0..1000 {
        let d = match i % 3 {
            0 => random_diagonal(&mut rng, 41),
            1 => {
                let hi = rng.random_range(0..=m0);
                let lo = hi.saturating_sub(rng.random_range(0..30));
                random_diagonal_on(&mut rng, lo, hi)
            }
            _ => {
                let hi = rng.random_range(0..=m0);
                let lo = rng.random_range(0..=hi);
                random_diagonal_on(&mut rng, lo, hi)
            }
        };
        states.push(d);
    }
    let mut min_q = f64::INFINITY;
    let mut goal_q = None;
    for d in &states {
        let u = feedback(d, &p, &cfg);
        let q = q_values(d, &p, &cfg).q_v_eps_of(u);
        let oracle: Vec<f64> = ControlInput::ALL
            .iter()
            .map(|&v| q_v_eps_oracle(&p, d.probs(), v, eps))
            .collect();
        let best = oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = oracle.iter().fold(1.0f64, |s, x| s.max(x.abs()));
        ensure((oracle[u.index()] - best).abs() <= 1e-9 * scale, || {
            format!(
                "n_max {}: feedback {u} scores {} but the best is {best}",
                d.dim() - 1,
                oracle[u.index()]
            )
        })?;
        ensure(q >= -1e-12, || format!("Q_V_eps(rho, feedback) = {q:e}"))?;
        let is_goal = d
            .probs()
            .iter()
            .enumerate()
            .all(|(n, x)| if n == 10 { *x == 1.0 } else { *x == 0.0 });
        if is_goal {
            goal_q = Some(q);
        }
        if q.abs() <= 1e-10 {
            ensure(is_goal, || {
                format!(
                    "Q = {q:e} at a state other than the goal: {:?}",
                    &d.probs()[..d.dim().min(20)]
                )
            })?;
        }
        if !is_goal {
            min_q = min_q.min(q);
        }
    }
    ensure(goal_q.is_some_and(|q| q.abs() <= 1e-10), || {
        format!("Q at the goal point mass is {goal_q:?}")
    })?;
    Ok(format!(
        "1001 states in D_m0 (m0 = {m0}); zero only at the goal; min off-goal Q = {min_q:.3e}"
    ))
}

fn criterion_8() -> Check {
    let p = reference();
    let cfg = ControllerConfig::new(10, 1000.0).unwrap();
    let runs = 200;
    let mut converged = 0;
    let mut settled = 0;
    let mut unjustified = Vec::new();
    let mut pulses_after = 0usize;
    for seed in 0..runs {
        let run = RunConfig::new(
            DiagonalState::uniform(0, 15).unwrap(),
            p,
            cfg.clone(),
            500,
            seed,
        );
        let t = simulate_closed_loop(&run).map_err(|e| e.to_string())?;
        let last = t.final_state.populations();
        if last.get(10).copied().unwrap_or(0.0) > 0.99 {
            converged += 1;
        }
        let Some(ks) = t.settled_at else { continue };
        settled += 1;
        for r in &t.records[ks..] {
            if r.u != ControlInput::Measure {
                pulses_after += 1;
                if r.pop_goal >= 1.0 - 1e-9 {
                    unjustified.push(format!(
                        "seed {seed}, k = {}: u = {} at pop_goal {}",
                        r.k, r.u, r.pop_goal
                    ));
                }
            }
        }
    }
    let frac = converged as f64 / runs as f64;
    let detail = format!(
        "{converged}/{runs} runs end with pop_goal > 0.99 ({:.1}%, need 95%); {settled} settled; \
         {pulses_after} pulses after settling, {} at the exact goal",
        100.0 * frac,
        unjustified.len()
    );
    ensure(unjustified.is_empty(), || {
        format!("{detail}; first: {}", unjustified[0])
    })?;
    ensure(frac >= 0.95, || detail.clone())?;
    Ok(detail)
}

struct TableEntry {
    epsilon: f64,
    mean: f64,
    sigma: f64,
}

const TABLE: [TableEntry; 8] = [
    TableEntry {
        epsilon: 0.0,
        mean: 79.94,
        sigma: 164.97,
    },
    TableEntry {
        epsilon: 0.1,
        mean: 79.95,
        sigma: 166.61,
    },
    TableEntry {
        epsilon: 1.0,
        mean: 81.24,
        sigma: 174.29,
    },
    TableEntry {
        epsilon: 10.0,
        mean: 71.33,
        sigma: 150.95,
    },
    TableEntry {
        epsilon: 100.0,
        mean: 60.41,
        sigma: 119.39,
    },
    TableEntry {
        epsilon: 1000.0,
        mean: 44.18,
        sigma: 44.12,
    },
    TableEntry {
        epsilon: 10000.0,
        mean: 47.05,
        sigma: 37.37,
    },
    TableEntry {
        epsilon: 100000.0,
        mean: 53.77,
        sigma: 16.84,
    },
];

fn criterion_9() -> Check {
    let p = reference();
    let cfg = SweepConfig {
        epsilons: TABLE.iter().map(|t| t.epsilon).collect(),
        realizations: 1000,
        base_run: RunConfig::new(
            DiagonalState::uniform(0, 15).unwrap(),
            p,
            ControllerConfig::new(10, 0.0).unwrap(),
            10_000,
            0,
        ),
        master_seed: 0,
        censor_policy: CensorPolicy::Exclude,
        workers: None,
    };
    let summary = run_sweep(&cfg).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    let mut lines = Vec::new();
    for (row, t) in summary.rows.iter().zip(&TABLE) {
        let dm = (row.mean_ks - t.mean).abs() / t.mean;
        let ds = (row.stddev_ks - t.sigma).abs() / t.sigma;
        lines.push(format!(
            "eps={}: mean {:.2} (table {}, {:+.0}%), sigma {:.2} (table {}, {:+.0}%), censored {}",
            t.epsilon,
            row.mean_ks,
            t.mean,
            100.0 * (row.mean_ks / t.mean - 1.0),
            row.stddev_ks,
            t.sigma,
            100.0 * (row.stddev_ks / t.sigma - 1.0),
            row.censored
        ));
        if (t.epsilon == 0.0 || t.epsilon == 1000.0) && (dm > 0.15 || dm.is_nan()) {
            problems.push(format!(
                "mean at eps={} off by {:.0}%",
                t.epsilon,
                100.0 * dm
            ));
        }
        if ds > 0.35 || ds.is_nan() {
            problems.push(format!(
                "sigma at eps={} off by {:.0}%",
                t.epsilon,
                100.0 * ds
            ));
        }
    }
    let mean = |e: f64| {
        summary
            .rows
            .iter()
            .find(|r| r.epsilon == e)
            .unwrap()
            .mean_ks
    };
    let sigma = |e: f64| {
        summary
            .rows
            .iter()
            .find(|r| r.epsilon == e)
            .unwrap()
            .stddev_ks
    };
    let ordering = mean(1000.0) < mean(0.0);
    lines.push(format!("ordering mean(1e3) < mean(0): {ordering}"));
    if !ordering {
        problems.push("ordering mean(1e3) < mean(0) fails".into());
    }
    let argmin = summary
        .rows
        .iter()
        .min_by(|a, b| a.mean_ks.total_cmp(&b.mean_ks))
        .map(|r| r.epsilon)
        .unwrap();
    if ![100.0, 1000.0, 10000.0].contains(&argmin) {
        problems.push(format!("minimum mean at eps={argmin}, not near 1e3"));
    }
    if !(sigma(100000.0) < sigma(1000.0) && sigma(1000.0) < sigma(0.0)) {
        problems.push("sigma does not decrease from eps=0 through 1e3 to 1e5".into());
    }
    for l in &lines {
        println!("    {l}");
    }
    ensure(problems.is_empty(), || problems.join("; "))?;
    Ok("table reproduced".into())
}

fn run_bin(dir: &Path, args: &[&str]) -> std::result::Result<Vec<u8>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_fock-feedback"))
        .args(args)
        .current_dir(dir)
        .env_remove("FOCK_FEEDBACK_WORKERS")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr))
    })?;
    Ok(o.stdout)
}

fn criterion_10() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let sweep = [
        "sweep",
        "--epsilons",
        "0,10,1000",
        "--realizations",
        "40",
        "--horizon",
        "2000",
        "--seed",
        "9",
    ];
    let mut compared = 0;
    for (a, b) in [
        (
            vec!["simulate", "--seed", "4", "--out", "s1.csv"],
            vec!["simulate", "--seed", "4", "--out", "s2.csv"],
        ),
        (
            vec![
                "simulate", "--seed", "4", "--format", "json", "--out", "s1.json",
            ],
            vec![
                "simulate", "--seed", "4", "--format", "json", "--out", "s2.json",
            ],
        ),
        (
            [&sweep[..], &["--workers", "1", "--out", "w1.csv"]].concat(),
            [&sweep[..], &["--workers", "4", "--out", "w4.csv"]].concat(),
        ),
        (
            [
                &sweep[..],
                &["--workers", "1", "--format", "json", "--out", "w1.json"],
            ]
            .concat(),
            [
                &sweep[..],
                &["--workers", "3", "--format", "json", "--out", "w3.json"],
            ]
            .concat(),
        ),
        (
            vec!["bound", "--n0", "20", "--out", "b1.txt"],
            vec!["bound", "--n0", "20", "--out", "b2.txt"],
        ),
    ] {
        let (oa, ob) = (run_bin(dir, &a)?, run_bin(dir, &b)?);
        ensure(oa == ob, || {
            format!("stdout differs between {a:?} and {b:?}")
        })?;
        let (fa, fb) = (a.last().unwrap(), b.last().unwrap());
        ensure(read(fa)? == read(fb)?, || format!("{fa} and {fb} differ"))?;
        compared += 1;
    }
    let (va, vb) = (
        run_bin(dir, &["verify", "--quick", "--seed", "3"])?,
        run_bin(dir, &["verify", "--quick", "--seed", "3"])?,
    );
    ensure(va == vb, || "verify output differs between runs".into())?;
    Ok(format!(
        "{} command pairs byte-identical, sweeps identical across 1/3/4 workers",
        compared + 1
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "Kraus completeness", criterion_1),
        (2, "closed-form Q_V", criterion_2),
        (3, "dephasing commutes", criterion_3),
        (4, "support rules", criterion_4),
        (5, "support bound certificate", criterion_5),
        (6, "purity term", criterion_6),
        (7, "supermartingale certificate", criterion_7),
        (8, "convergence", criterion_8),
        (9, "settling-time table", criterion_9),
        (10, "determinism", criterion_10),
    ];
    let mut failed = Vec::new();
    for (n, name, f) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n}: PASS ({name}; {detail}; {secs:.1} s)"),
            Err(detail) => {
                println!("criterion {n}: FAIL ({name}; {detail}; {secs:.1} s)");
                failed.push(n);
            }
        }
    }
    let total = criteria.len();
    println!(
        "acceptance: {} of {total} criteria pass",
        total - failed.len()
    );
    if !failed.is_empty() {
        println!("failing criteria: {failed:?}");
        if std::env::var_os("FOCK_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
