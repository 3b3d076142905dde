//! Observation sets, built-in system oracles, seeded sampling and bound estimation.

mod csv_io;
mod oracle;

pub use csv_io::{
    load_autonomous_csv, load_control_csv, save_autonomous_csv, save_control_csv,
};
pub use oracle::{
    preset, ControlAtom, ControlSet, DomainBox, Dynamics, Preset, SystemOracle, PRESET_NAMES,
    TORA_COUPLING,
};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matnum::distance;

/// The generator used for every seeded draw: xoshiro256** seeded through splitmix64.
pub type SeededRng = Xoshiro256StarStar;

pub fn seeded_rng(seed: u64) -> SeededRng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Uniform draw in `[0, 1)` from the top 53 bits of one 64-bit output.
pub fn unit_draw(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Draws `n_points` states uniformly from `domain`, deterministic in `seed`.
pub fn sample_uniform(domain: &DomainBox, n_points: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    domain.validate()?;
    if n_points == 0 {
        return Err(Error::Invalid("at least one sample is required".into()));
    }
    let mut rng = seeded_rng(seed);
    Ok((0..n_points)
        .map(|_| sample_point(domain, &mut rng))
        .collect())
}

pub(crate) fn sample_point(domain: &DomainBox, rng: &mut impl RngCore) -> Vec<f64> {
    domain
        .bounds
        .iter()
        .map(|(lo, hi)| lo + (hi - lo) * unit_draw(rng))
        .collect()
}

/// One observation `(x_i, ẋ_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutonomousSample {
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
}

/// Observation set `{(ẋ_i, x_i)}` of an autonomous system.
#[derive(Debug, Clone, PartialEq)]
pub struct AutonomousDataset {
    n: usize,
    samples: Vec<AutonomousSample>,
}

impl AutonomousDataset {
    pub fn new(samples: Vec<AutonomousSample>) -> Result<Self> {
        let n = samples
            .first()
            .map(|s| s.x.len())
            .ok_or_else(|| Error::Data("autonomous dataset is empty".into()))?;
        if n == 0 {
            return Err(Error::Dimension("zero-dimensional state".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != n || s.xdot.len() != n {
                return Err(Error::Dimension(format!("sample {} has mismatched dims", i + 1)));
            }
            if s.x.iter().chain(&s.xdot).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sample {}", i + 1)));
            }
        }
        Ok(AutonomousDataset { n, samples })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[AutonomousSample] {
        &self.samples
    }
}

/// Observation set `{(ẋ_ij, x_i, u_j)}`: every state paired with every control.
///
/// `inputs[i][j]` is the realized input `u_j(x_i)` and `derivs[i][j]` the
/// observed derivative under it.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDataset {
    n: usize,
    m: usize,
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<Vec<f64>>>,
    derivs: Vec<Vec<Vec<f64>>>,
}

impl ControlDataset {
    pub fn new(
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<Vec<f64>>>,
        derivs: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = states
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Data("control dataset is empty".into()))?;
        let groups = inputs
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Data("control dataset has no inputs".into()))?;
        if groups == 0 {
            return Err(Error::Data("control dataset has no controls".into()));
        }
        let m = inputs[0][0].len();
        if n == 0 {
            return Err(Error::Dimension("zero-dimensional state".into()));
        }
        if inputs.len() != states.len() || derivs.len() != states.len() {
            return Err(Error::Data("incomplete factorial: state count mismatch".into()));
        }
        for i in 0..states.len() {
            if states[i].len() != n {
                return Err(Error::Dimension(format!("state {} has wrong length", i + 1)));
            }
            if inputs[i].len() != groups || derivs[i].len() != groups {
                return Err(Error::Data(format!(
                    "incomplete factorial: state {} lacks some controls",
                    i + 1
                )));
            }
            for j in 0..groups {
                if inputs[i][j].len() != m || derivs[i][j].len() != n {
                    return Err(Error::Dimension(format!("entry ({}, {})", i + 1, j + 1)));
                }
            }
            let finite = states[i]
                .iter()
                .chain(inputs[i].iter().flatten())
                .chain(derivs[i].iter().flatten())
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("state {}", i + 1)));
            }
        }
        Ok(ControlDataset {
            n,
            m,
            states,
            inputs,
            derivs,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of states N.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of controls M.
    pub fn n_controls(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn input(&self, i: usize, j: usize) -> &[f64] {
        &self.inputs[i][j]
    }

    pub fn deriv(&self, i: usize, j: usize) -> &[f64] {
        &self.derivs[i][j]
    }

    /// Autonomous view of control column `j`.
    pub fn column(&self, j: usize) -> AutonomousDataset {
        AutonomousDataset {
            n: self.n,
            samples: self
                .states
                .iter()
                .zip(&self.derivs)
                .map(|(x, d)| AutonomousSample {
                    x: x.clone(),
                    xdot: d[j].clone(),
                })
                .collect(),
        }
    }
}

/// Evaluates `ẋ_i = f(x_i, 0)` at every state.
pub fn build_autonomous(oracle: &SystemOracle, states: &[Vec<f64>]) -> Result<AutonomousDataset> {
    let samples = states
        .iter()
        .map(|x| {
            check_dim(oracle, x)?;
            Ok(AutonomousSample {
                x: x.clone(),
                xdot: oracle.rhs_free(x),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AutonomousDataset::new(samples)
}

/// Evaluates `ẋ_ij = f(x_i, u_j(x_i))` on the full states × controls factorial.
pub fn build_control(
    oracle: &SystemOracle,
    states: &[Vec<f64>],
    controls: &ControlSet,
) -> Result<ControlDataset> {
    if controls.input_dim() != oracle.m() {
        return Err(Error::Dimension(format!(
            "controls have dimension {} but '{}' takes {} inputs",
            controls.input_dim(),
            oracle.name,
            oracle.m()
        )));
    }
    controls.check_state_dim(oracle.n())?;
    let mut inputs = Vec::with_capacity(states.len());
    let mut derivs = Vec::with_capacity(states.len());
    for x in states {
        check_dim(oracle, x)?;
        let us: Vec<Vec<f64>> = controls.atoms().iter().map(|a| a.apply(x)).collect();
        derivs.push(us.iter().map(|u| oracle.rhs(x, u)).collect());
        inputs.push(us);
    }
    ControlDataset::new(states.to_vec(), inputs, derivs)
}

fn check_dim(oracle: &SystemOracle, x: &[f64]) -> Result<()> {
    if x.len() != oracle.n() {
        return Err(Error::Dimension(format!(
            "state of length {} for '{}' with {} states",
            x.len(),
            oracle.name,
            oracle.n()
        )));
    }
    Ok(())
}

/// Data-driven surrogates for the state bound `d` and the Lipschitz constant `l_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimates {
    pub d: f64,
    pub l_f: f64,
}

/// Safety factor applied to the largest observed difference quotient.
pub const LIPSCHITZ_SAFETY: f64 = 1.5;

/// Neighborhood radius, in multiples of the median nearest-neighbor distance.
pub const NEIGHBOR_RADIUS_FACTOR: f64 = 3.0;

/// Read access shared by both dataset kinds for bound estimation.
pub trait Observations {
    fn states(&self) -> Vec<&[f64]>;
    /// Derivative columns: one per fixed control (a single column if autonomous).
    fn derivative_columns(&self) -> Vec<Vec<&[f64]>>;
}

impl Observations for AutonomousDataset {
    fn states(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.x.as_slice()).collect()
    }

    fn derivative_columns(&self) -> Vec<Vec<&[f64]>> {
        vec![self.samples.iter().map(|s| s.xdot.as_slice()).collect()]
    }
}

impl Observations for ControlDataset {
    fn states(&self) -> Vec<&[f64]> {
        self.states.iter().map(Vec::as_slice).collect()
    }

    fn derivative_columns(&self) -> Vec<Vec<&[f64]>> {
        (0..self.n_controls())
            .map(|j| self.derivs.iter().map(|d| d[j].as_slice()).collect())
            .collect()
    }
}

/// Distance from each state to its nearest distinct neighbor.
pub fn nearest_neighbor_distances(states: &[&[f64]]) -> Vec<f64> {
    states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            states
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, y)| distance(x, y))
                .filter(|d| *d > 0.0)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// `d = max ‖x_i‖`; `l_f` = 1.5 × the largest difference quotient
/// ‖ẋ_i − ẋ_k‖ / ‖x_i − x_k‖ over pairs within 3× the median nearest-neighbor
/// distance, taken per fixed control column.
pub fn estimate_bounds(ds: &impl Observations) -> Result<BoundEstimates> {
    let states = ds.states();
    if states.len() < 2 {
        return Err(Error::Data(
            "bound estimation needs at least two samples".into(),
        ));
    }
    let d = states
        .iter()
        .map(|x| crate::matnum::norm(x))
        .fold(0.0, f64::max);

    let mut nn: Vec<f64> = nearest_neighbor_distances(&states)
        .into_iter()
        .filter(|v| v.is_finite())
        .collect();
    if nn.is_empty() {
        return Err(Error::Data("all samples share the same state".into()));
    }
    let radius = NEIGHBOR_RADIUS_FACTOR * median(&mut nn);

    let mut best: Option<f64> = None;
    for column in ds.derivative_columns() {
        for i in 0..states.len() {
            for k in (i + 1)..states.len() {
                let dx = distance(states[i], states[k]);
                if dx == 0.0 || dx > radius {
                    continue;
                }
                let q = distance(column[i], column[k]) / dx;
                best = Some(best.map_or(q, |b: f64| b.max(q)));
            }
        }
    }
    let quotient = best.ok_or_else(|| {
        Error::Data(format!("no sample pairs within radius {radius:e}; data too sparse"))
    })?;
    let bounds = BoundEstimates {
        d,
        l_f: LIPSCHITZ_SAFETY * quotient,
    };
    if !(bounds.d > 0.0 && bounds.l_f > 0.0 && bounds.d.is_finite() && bounds.l_f.is_finite()) {
        return Err(Error::Data(format!(
            "degenerate bound estimates d = {}, l_f = {}",
            bounds.d, bounds.l_f
        )));
    }
    Ok(bounds)
}
