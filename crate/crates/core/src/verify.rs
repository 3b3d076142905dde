//! Numerical verification: fixed-step integration, sample-and-hold closed-loop
//! simulation, the exponential-attraction check, the level-set cover check and
//! monitoring of `V(x) = xᵀPx` along trajectories.

use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::Controller;
use crate::dataset::{median, nearest_neighbor_distances, seeded_rng, BoundEstimates, SystemOracle};
use crate::error::{Error, Result};
use crate::matnum::{distance, norm, spectral_range, sym_eig, SymMatrix};

/// Relative slack of the attraction bound.
pub const ATTRACTION_SLACK: f64 = 1e-9;

/// Allowed per-step increase of `V`, relative to `V(x(0))`.
pub const DECREASE_SLACK: f64 = 1e-6;

/// Default number of probes for the cover check.
pub const DEFAULT_PROBES: usize = 10_000;

/// States on a uniform time grid starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least the initial time")
    }
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn rk4_step(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], dt: f64) -> Vec<f64> {
    let k1 = f(x);
    let k2 = f(&axpy(x, dt / 2.0, &k1));
    let k3 = f(&axpy(x, dt / 2.0, &k2));
    let k4 = f(&axpy(x, dt, &k3));
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn step_count(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Invalid(format!("step must be positive, got {dt}")));
    }
    if !(t_end.is_finite() && t_end >= dt) {
        return Err(Error::Invalid(format!(
            "horizon too short: t_end = {t_end} is below the step {dt}"
        )));
    }
    Ok((t_end / dt).round() as usize)
}

/// Classical fourth-order Runge–Kutta with a fixed step; the grid is `k·dt`
/// for `k = 0, …, round(t_end/dt)`.
pub fn integrate_rk4(
    rhs: impl Fn(&[f64]) -> Vec<f64>,
    x0: &[f64],
    dt: f64,
    t_end: f64,
) -> Result<Trajectory> {
    let steps = step_count(dt, t_end)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    for k in 1..=steps {
        x = rk4_step(&rhs, &x, dt);
        let t = k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { time: t });
        }
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// A closed-loop run: the trajectory and the input applied from each grid time.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub trajectory: Trajectory,
    pub inputs: Vec<Vec<f64>>,
}

/// Simulates `ẋ = f(x, u)` where `u = ctrl(x(t_k))` is held over `[t_k, t_k + dt)`.
pub fn simulate_closed_loop(
    oracle: &SystemOracle,
    ctrl: &Controller,
    x0: &[f64],
    dt: f64,
    t_end: f64,
) -> Result<ClosedLoop> {
    if x0.len() != oracle.n() || ctrl.n() != oracle.n() || ctrl.m() != oracle.m() {
        return Err(Error::Dimension(format!(
            "system is {}x{}, controller {}x{}, start has length {}",
            oracle.n(),
            oracle.m(),
            ctrl.n(),
            ctrl.m(),
            x0.len()
        )));
    }
    let steps = step_count(dt, t_end)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    times.push(0.0);
    states.push(x.clone());
    for k in 1..=steps {
        let u = ctrl.evaluate(&x);
        x = rk4_step(&|s: &[f64]| oracle.rhs(s, &u), &x, dt);
        inputs.push(u);
        let t = k as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { time: t });
        }
        times.push(t);
        states.push(x.clone());
    }
    inputs.push(ctrl.evaluate(&x));
    Ok(ClosedLoop {
        trajectory: Trajectory { times, states },
        inputs,
    })
}

/// Simulates independent starts in parallel; results keep the input order.
pub fn simulate_batch(
    oracle: &SystemOracle,
    ctrl: &Controller,
    starts: &[Vec<f64>],
    dt: f64,
    t_end: f64,
) -> Vec<Result<ClosedLoop>> {
    starts
        .par_iter()
        .map(|x0| simulate_closed_loop(oracle, ctrl, x0, dt, t_end))
        .collect()
}

/// Writes `t,x1..xn,u1..um`, one row per grid time.
pub fn write_trajectory_csv(run: &ClosedLoop, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let traj = &run.trajectory;
    let n = traj.initial().len();
    let m = run.inputs.first().map_or(0, Vec::len);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x{i}")))
        .chain((1..=m).map(|i| format!("u{i}")))
        .collect();
    w.write_record(&header).map_err(wrap)?;
    for ((t, x), u) in traj.times.iter().zip(&traj.states).zip(&run.inputs) {
        let row: Vec<String> = std::iter::once(t)
            .chain(x)
            .chain(u)
            .map(|v| format!("{v}"))
            .collect();
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Constants of the exponential-attraction bound `‖φ(τ; x)‖ ≤ α‖x‖e^{−λτ}` on `[0, δ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttractionConstants {
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

/// `k₁ = λ_min(P)`, `k₂ = λ_max(P)`, `k₃ = λ_min(Q)`, `α = k₂/k₁`,
/// `δ = ε/(l_f·d)` and, unless overridden, `λ = k₃/(2k₂)`.
pub fn attraction_constants(
    p: &SymMatrix,
    q: &SymMatrix,
    bounds: BoundEstimates,
    epsilon: f64,
    lambda: Option<f64>,
) -> Result<AttractionConstants> {
    let (k1, k2) = spectral_range(p)?;
    let (k3, _) = spectral_range(q)?;
    if k1 <= 0.0 || k3 <= 0.0 {
        return Err(Error::Invalid(format!(
            "P and Q must be positive definite (λ_min(P) = {k1:e}, λ_min(Q) = {k3:e})"
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Invalid(format!("ε must be positive, got {epsilon}")));
    }
    if !(bounds.d > 0.0 && bounds.l_f > 0.0) {
        return Err(Error::Invalid(format!(
            "d and l_f must be positive, got d = {}, l_f = {}",
            bounds.d, bounds.l_f
        )));
    }
    let lambda = lambda.unwrap_or(0.5 * k3 / k2);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid(format!("λ must be positive, got {lambda}")));
    }
    Ok(AttractionConstants {
        alpha: k2 / k1,
        lambda,
        epsilon,
        delta: epsilon / (bounds.l_f * bounds.d),
        k1,
        k2,
        k3,
    })
}

/// Half the median nearest-neighbor distance between states.
pub fn default_epsilon(states: &[&[f64]]) -> Result<f64> {
    let mut nn: Vec<f64> = nearest_neighbor_distances(states)
        .into_iter()
        .filter(|v| v.is_finite())
        .collect();
    if nn.is_empty() {
        return Err(Error::Data("ε needs at least two distinct states".into()));
    }
    Ok(0.5 * median(&mut nn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub run: usize,
    pub time: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractionReport {
    pub passed: bool,
    /// Largest `‖x(τ)‖ / (α‖x(0)‖e^{−λτ})` seen on `[0, δ]`.
    pub worst_ratio: f64,
    pub violations: Vec<Violation>,
}

/// Checks the attraction bound at every grid time in `[0, δ]`.
pub fn check_attraction(
    trajs: &[Trajectory],
    consts: &AttractionConstants,
) -> Result<AttractionReport> {
    let mut worst = 0.0f64;
    let mut violations = Vec::new();
    for (run, traj) in trajs.iter().enumerate() {
        if traj.is_empty() || traj.t_end() < consts.delta * (1.0 - 1e-12) {
            return Err(Error::Invalid(format!(
                "trajectory {run} ends before δ = {}",
                consts.delta
            )));
        }
        let r0 = norm(traj.initial());
        for (t, x) in traj.times.iter().zip(&traj.states) {
            if *t > consts.delta * (1.0 + 1e-12) {
                break;
            }
            let r = norm(x);
            let envelope = consts.alpha * r0 * (-consts.lambda * t).exp();
            let ratio = if envelope > 0.0 {
                r / envelope
            } else if r == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(ratio);
            if ratio > 1.0 + ATTRACTION_SLACK {
                violations.push(Violation {
                    run,
                    time: *t,
                    ratio,
                });
            }
        }
    }
    Ok(AttractionReport {
        passed: violations.is_empty(),
        worst_ratio: worst,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverReport {
    pub covered: bool,
    pub n_probe: usize,
    /// Largest distance from a probe to its nearest state.
    pub max_gap: f64,
    pub uncovered: Vec<Vec<f64>>,
}

/// Monte-Carlo check that the level set `{x : xᵀPx = l}` lies within `ε` of the states.
pub fn check_level_cover(
    states: &[&[f64]],
    epsilon: f64,
    p: &SymMatrix,
    level: f64,
    n_probe: usize,
    seed: u64,
) -> Result<CoverReport> {
    let n = p.n();
    if !(level > 0.0) || !(epsilon > 0.0) || n_probe == 0 {
        return Err(Error::Invalid(format!(
            "cover check needs l > 0, ε > 0 and probes (got l = {level}, ε = {epsilon}, {n_probe})"
        )));
    }
    if states.is_empty() || states.iter().any(|x| x.len() != n) {
        return Err(Error::Dimension(format!("cover states must be non-empty of length {n}")));
    }
    let eig = sym_eig(p)?;
    if eig.min() <= 0.0 {
        return Err(Error::Invalid("P must be positive definite".into()));
    }
    let map = eig.map(|l| (level / l).sqrt());

    let mut rng = seeded_rng(seed);
    let probes: Vec<Vec<f64>> = (0..n_probe)
        .map(|_| loop {
            let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let r = norm(&z);
            if r > 0.0 {
                let unit: Vec<f64> = z.iter().map(|v| v / r).collect();
                break map.as_matrix().matvec(&unit);
            }
        })
        .collect();

    let gaps: Vec<f64> = probes
        .par_iter()
        .map(|x| {
            states
                .iter()
                .map(|s| distance(x, s))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let uncovered: Vec<Vec<f64>> = probes
        .into_iter()
        .zip(&gaps)
        .filter(|(_, g)| **g > epsilon)
        .map(|(x, _)| x)
        .collect();
    Ok(CoverReport {
        covered: uncovered.is_empty(),
        n_probe,
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        uncovered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecreaseReport {
    pub passed: bool,
    pub v0: f64,
    /// Largest increase of `V` between consecutive samples (0 if none).
    pub max_jump: f64,
    /// `V(x(t_end)) / V(x(0))`.
    pub final_ratio: f64,
}

/// Monitors `V(x) = xᵀPx` along a trajectory; passes when no step raises `V`
/// by more than `1e−6·V(x(0))`.
pub fn check_decrease(p: &SymMatrix, traj: &Trajectory) -> Result<DecreaseReport> {
    if traj.is_empty() || traj.initial().len() != p.n() {
        return Err(Error::Dimension("trajectory and P disagree".into()));
    }
    let v: Vec<f64> = traj.states.iter().map(|x| p.quad(x)).collect();
    let v0 = v[0];
    let max_jump = v.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(DecreaseReport {
        passed: max_jump <= DECREASE_SLACK * v0,
        v0,
        max_jump,
        final_ratio: if v0 > 0.0 { v[v.len() - 1] / v0 } else { 0.0 },
    })
}
