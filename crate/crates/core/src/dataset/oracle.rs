use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matnum::Matrix;

/// Axis-aligned box `[lo_k, hi_k]` per state coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainBox {
    pub bounds: Vec<(f64, f64)>,
}

impl DomainBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        DomainBox { bounds }
    }

    pub fn cube(n: usize, half_width: f64) -> Self {
        DomainBox {
            bounds: vec![(-half_width, half_width); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.bounds)
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Every axis must have finite `lo < hi`.
    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Invalid("box has no axes".into()));
        }
        for (k, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Invalid(format!(
                    "box axis {} is degenerate: [{lo}, {hi}]",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Right-hand side families the library can evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// ẋ = A·x + B·u (B has zero columns for autonomous systems).
    Linear { a: Matrix, b: Option<Matrix> },
    /// Translational oscillator with rotating actuator:
    /// ẋ₁ = x₂, ẋ₂ = −x₁ + ε·sin x₃, ẋ₃ = x₄, ẋ₄ = u.
    Tora { coupling: f64 },
}

/// A system that can be queried for derivatives at any state and input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOracle {
    pub name: String,
    pub dynamics: Dynamics,
    pub domain: DomainBox,
}

impl SystemOracle {
    pub fn linear(name: &str, a: Matrix, b: Option<Matrix>, domain: DomainBox) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("A must be square".into()));
        }
        if let Some(b) = &b {
            if b.rows() != a.rows() {
                return Err(Error::Dimension(format!(
                    "B has {} rows but A is {}x{}",
                    b.rows(),
                    a.rows(),
                    a.cols()
                )));
            }
        }
        if domain.dim() != a.rows() {
            return Err(Error::Dimension(format!(
                "box has {} axes for a {}-state system",
                domain.dim(),
                a.rows()
            )));
        }
        Ok(SystemOracle {
            name: name.to_string(),
            dynamics: Dynamics::Linear { a, b },
            domain,
        })
    }

    pub fn n(&self) -> usize {
        match &self.dynamics {
            Dynamics::Linear { a, .. } => a.rows(),
            Dynamics::Tora { .. } => 4,
        }
    }

    pub fn m(&self) -> usize {
        match &self.dynamics {
            Dynamics::Linear { b, .. } => b.as_ref().map_or(0, Matrix::cols),
            Dynamics::Tora { .. } => 1,
        }
    }

    /// f(x, u). Panics on dimension mismatch; callers validate dims up front.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n(), "state dimension");
        assert_eq!(u.len(), self.m(), "input dimension");
        match &self.dynamics {
            Dynamics::Linear { a, b } => {
                let mut dx = a.matvec(x);
                if let Some(b) = b {
                    for (d, bu) in dx.iter_mut().zip(b.matvec(u)) {
                        *d += bu;
                    }
                }
                dx
            }
            Dynamics::Tora { coupling } => {
                vec![x[1], -x[0] + coupling * x[2].sin(), x[3], u[0]]
            }
        }
    }

    /// f(x, 0).
    pub fn rhs_free(&self, x: &[f64]) -> Vec<f64> {
        self.rhs(x, &vec![0.0; self.m()])
    }
}

/// One element of a finite control set: a constant input or a static gain `u = K·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlAtom {
    Constant { value: Vec<f64> },
    Gain { k: Matrix },
}

impl ControlAtom {
    pub fn constant(value: Vec<f64>) -> Self {
        ControlAtom::Constant { value }
    }

    pub fn gain(k: Matrix) -> Self {
        ControlAtom::Gain { k }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ControlAtom::Constant { value } => value.len(),
            ControlAtom::Gain { k } => k.rows(),
        }
    }

    /// Realized input `u_j(x)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ControlAtom::Constant { value } => value.clone(),
            ControlAtom::Gain { k } => k.matvec(x),
        }
    }
}

/// Finite, non-empty set of pairwise distinct control atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ControlAtom>", into = "Vec<ControlAtom>")]
pub struct ControlSet {
    atoms: Vec<ControlAtom>,
}

impl ControlSet {
    pub fn new(atoms: Vec<ControlAtom>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::Invalid("control set is empty".into()))?;
        let m = first.input_dim();
        for (j, atom) in atoms.iter().enumerate() {
            if atom.input_dim() != m {
                return Err(Error::Dimension(format!(
                    "control {} has input dimension {} (expected {m})",
                    j + 1,
                    atom.input_dim()
                )));
            }
            if let ControlAtom::Constant { value } = atom {
                if value.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("control {}", j + 1)));
                }
            }
            if atoms[..j].contains(atom) {
                return Err(Error::Invalid(format!("control {} is a duplicate", j + 1)));
            }
        }
        Ok(ControlSet { atoms })
    }

    pub fn atoms(&self) -> &[ControlAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.atoms[0].input_dim()
    }

    /// Checks gain atoms against the state dimension.
    pub fn check_state_dim(&self, n: usize) -> Result<()> {
        for (j, atom) in self.atoms.iter().enumerate() {
            if let ControlAtom::Gain { k } = atom {
                if k.cols() != n {
                    return Err(Error::Dimension(format!(
                        "gain control {} has {} columns for a {n}-state system",
                        j + 1,
                        k.cols()
                    )));
                }
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<ControlAtom>> for ControlSet {
    type Error = Error;
    fn try_from(atoms: Vec<ControlAtom>) -> Result<Self> {
        ControlSet::new(atoms)
    }
}

impl From<ControlSet> for Vec<ControlAtom> {
    fn from(c: ControlSet) -> Self {
        c.atoms
    }
}

/// A named built-in system with its sampling defaults.
#[derive(Debug, Clone)]
pub struct Preset {
    pub oracle: SystemOracle,
    pub n_samples: usize,
    pub controls: Option<ControlSet>,
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 4] = ["example1", "tora", "stable", "unstable"];

/// Coupling strength of the TORA benchmark.
pub const TORA_COUPLING: f64 = 0.2;

/// Built-in systems:
///
/// * `example1`: harmonic oscillator ẋ₁ = x₂, ẋ₂ = −x₁ + u with output y = x₁ and
///   hybrid output feedback U = {−y, y/2}; box [−2,2]², N = 100.
/// * `tora`: the TORA plant with U = {−1, +1}; box [−2.5,2.5]² × (−π/2, π/2) × [−2.5,2.5], N = 5000.
/// * `stable` / `unstable`: ẋ = ∓x in two dimensions; box [−2,2]², N = 100.
pub fn preset(name: &str) -> Result<Preset> {
    let p = match name {
        "example1" => {
            let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]])?;
            let b = Matrix::column(&[0.0, 1.0]);
            let controls = ControlSet::new(vec![
                ControlAtom::gain(Matrix::row(&[-1.0, 0.0])),
                ControlAtom::gain(Matrix::row(&[0.5, 0.0])),
            ])?;
            Preset {
                oracle: SystemOracle::linear(name, a, Some(b), DomainBox::cube(2, 2.0))?,
                n_samples: 100,
                controls: Some(controls),
            }
        }
        "tora" => {
            // the open angle interval is shrunk so samples stay strictly inside
            let angle = FRAC_PI_2 - 1e-6;
            let domain = DomainBox::new(vec![(-2.5, 2.5), (-2.5, 2.5), (-angle, angle), (-2.5, 2.5)]);
            let controls = ControlSet::new(vec![
                ControlAtom::constant(vec![-1.0]),
                ControlAtom::constant(vec![1.0]),
            ])?;
            Preset {
                oracle: SystemOracle {
                    name: name.to_string(),
                    dynamics: Dynamics::Tora {
                        coupling: TORA_COUPLING,
                    },
                    domain,
                },
                n_samples: 5000,
                controls: Some(controls),
            }
        }
        "stable" | "unstable" => {
            let sign = if name == "stable" { -1.0 } else { 1.0 };
            Preset {
                oracle: SystemOracle::linear(
                    name,
                    Matrix::identity(2).scale(sign),
                    None,
                    DomainBox::cube(2, 2.0),
                )?,
                n_samples: 100,
                controls: None,
            }
        }
        other => {
            return Err(Error::Invalid(format!(
                "unknown system '{other}'; available presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_rhs() {
        let p = preset("example1").unwrap();
        let controls = p.controls.unwrap();
        let x = [1.0, 0.0];
        let u = controls.atoms()[0].apply(&x);
        assert_eq!(u, vec![-1.0]);
        assert_eq!(p.oracle.rhs(&x, &u), vec![0.0, -2.0]);
    }

    #[test]
    fn tora_rhs() {
        let p = preset("tora").unwrap();
        let dx = p.oracle.rhs(&[0.0, 0.0, std::f64::consts::PI / 6.0, 0.0], &[0.0]);
        assert_eq!(dx[0], 0.0);
        assert!((dx[1] - 0.1).abs() < 1e-15);
        assert_eq!(dx[2], 0.0);
        assert_eq!(dx[3], 0.0);
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("pendulum").unwrap_err().to_string();
        for name in PRESET_NAMES {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn control_set_validation() {
        assert!(ControlSet::new(vec![]).is_err());
        let dup = vec![ControlAtom::constant(vec![1.0]), ControlAtom::constant(vec![1.0])];
        assert!(ControlSet::new(dup).is_err());
        let ragged = vec![ControlAtom::constant(vec![1.0]), ControlAtom::constant(vec![1.0, 2.0])];
        assert!(ControlSet::new(ragged).is_err());
    }

    #[test]
    fn control_set_serde() {
        let set = preset("example1").unwrap().controls.unwrap();
        let text = serde_json::to_string(&set).unwrap();
        assert_eq!(
            text,
            r#"[{"kind":"gain","k":[[-1.0,0.0]]},{"kind":"gain","k":[[0.5,0.0]]}]"#
        );
        let back: ControlSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn degenerate_box() {
        assert!(DomainBox::new(vec![(0.0, 0.0), (0.0, 0.0)]).validate().is_err());
        assert!(DomainBox::cube(3, 1.0).validate().is_ok());
    }
}
