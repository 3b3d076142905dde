//! Run configuration: one TOML file with nested sections, every field optional.
//!
//! ```toml
//! output_dir = "out"
//!
//! [system]
//! preset = "example1"          # or [system.linear] / dataset paths
//! seed = 1
//! n_samples = 100
//! box = [[-2.0, 2.0], [-2.0, 2.0]]
//! controls = [{ kind = "gain", k = [[-1.0, 0.0]] }, { kind = "gain", k = [[0.5, 0.0]] }]
//!
//! [train]
//! bounds = { a1 = 0.1, a2 = 0.1 }
//! margin_floor = 1e-12
//! max_passes = 200
//! poles = [-1.0, -2.0]
//! controller = "bilinear"      # or "nearest-neighbor"
//!
//! [simulate]
//! dt = 1e-3
//! t_end = 50.0
//! runs = 10
//!
//! [verify]
//! starts = 20
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{preset, ControlSet, DomainBox, SystemOracle};
use crate::error::{Error, Result};
use crate::features::SpectralBounds;
use crate::matnum::Matrix;
use crate::perceptron::{DEFAULT_MARGIN_FLOOR, DEFAULT_MAX_PASSES};

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "DATALYAP_OUT";

/// Output directory used when neither flag, config nor environment names one.
pub const DEFAULT_OUTPUT_DIR: &str = "datalyap-out";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    pub system: SystemSection,
    pub train: TrainSection,
    pub simulate: SimulateSection,
    pub verify: VerifySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSpec {
    pub a: Matrix,
    pub b: Option<Matrix>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub preset: Option<String>,
    pub linear: Option<LinearSpec>,
    /// Autonomous dataset CSV used instead of sampling an oracle.
    pub dataset: Option<PathBuf>,
    /// Control dataset CSV used instead of sampling an oracle.
    pub control_dataset: Option<PathBuf>,
    #[serde(rename = "box")]
    pub domain: Option<DomainBox>,
    pub n_samples: Option<usize>,
    pub seed: u64,
    pub controls: Option<ControlSet>,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            preset: None,
            linear: None,
            dataset: None,
            control_dataset: None,
            domain: None,
            n_samples: None,
            seed: 1,
            controls: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ControllerKind {
    #[default]
    #[serde(rename = "bilinear")]
    Bilinear,
    #[serde(rename = "nearest-neighbor")]
    NearestNeighbor,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub bounds: SpectralBounds,
    pub margin_floor: f64,
    pub max_passes: usize,
    pub poles: Option<Vec<f64>>,
    pub controller: ControllerKind,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            bounds: SpectralBounds::default(),
            margin_floor: DEFAULT_MARGIN_FLOOR,
            max_passes: DEFAULT_MAX_PASSES,
            poles: None,
            controller: ControllerKind::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub dt: f64,
    pub t_end: f64,
    pub runs: usize,
    /// Seed for the start points; defaults to the system seed plus one.
    pub seed: Option<u64>,
    pub controller: Option<PathBuf>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            dt: 1e-3,
            t_end: 50.0,
            runs: 10,
            seed: None,
            controller: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub epsilon: Option<f64>,
    pub lambda: Option<f64>,
    /// Number of perturbed dataset states re-simulated by `certify`.
    pub starts: usize,
    /// Integration steps per horizon δ.
    pub steps_per_delta: usize,
    pub n_probe: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            epsilon: None,
            lambda: None,
            starts: 20,
            steps_per_delta: 50,
            n_probe: crate::verify::DEFAULT_PROBES,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Range checks that can be made before any work starts.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::Invalid(msg));
        let s = &self.system;
        let sources = [s.preset.is_some(), s.linear.is_some()];
        if sources.iter().filter(|b| **b).count() > 1 {
            return invalid("set at most one of system.preset and system.linear".into());
        }
        if let Some(b) = &s.domain {
            b.validate()?;
        }
        if s.n_samples == Some(0) {
            return invalid("system.n_samples must be positive".into());
        }
        for p in [&s.dataset, &s.control_dataset].into_iter().flatten() {
            if !p.is_file() {
                return invalid(format!("dataset file {} does not exist", p.display()));
            }
        }
        self.train.bounds.validate()?;
        if !(self.train.margin_floor >= 0.0 && self.train.margin_floor.is_finite()) {
            return invalid("train.margin_floor must be finite and non-negative".into());
        }
        if self.train.max_passes == 0 {
            return invalid("train.max_passes must be positive".into());
        }
        let sim = &self.simulate;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return invalid("simulate.dt must be positive".into());
        }
        if !(sim.t_end.is_finite() && sim.t_end >= sim.dt) {
            return invalid(format!(
                "horizon too short: simulate.t_end = {} is below the step {}",
                sim.t_end, sim.dt
            ));
        }
        if sim.runs == 0 {
            return invalid("simulate.runs must be positive".into());
        }
        let v = &self.verify;
        for (name, x) in [("verify.epsilon", v.epsilon), ("verify.lambda", v.lambda)] {
            if let Some(x) = x {
                if !(x > 0.0 && x.is_finite()) {
                    return invalid(format!("{name} must be positive"));
                }
            }
        }
        if v.starts == 0 || v.steps_per_delta == 0 || v.n_probe == 0 {
            return invalid("verify.starts, steps_per_delta and n_probe must be positive".into());
        }
        Ok(())
    }

    /// The oracle named by the config, if any, with box and control overrides applied.
    pub fn system(&self) -> Result<Option<ResolvedSystem>> {
        let s = &self.system;
        let mut resolved = if let Some(name) = &s.preset {
            let p = preset(name)?;
            ResolvedSystem {
                oracle: p.oracle,
                n_samples: p.n_samples,
                controls: p.controls,
            }
        } else if let Some(lin) = &s.linear {
            let n = lin.a.rows();
            let domain = s.domain.clone().unwrap_or_else(|| DomainBox::cube(n, 1.0));
            ResolvedSystem {
                oracle: SystemOracle::linear("linear", lin.a.clone(), lin.b.clone(), domain)?,
                n_samples: 100,
                controls: None,
            }
        } else {
            return Ok(None);
        };
        if let Some(b) = &s.domain {
            if b.dim() != resolved.oracle.n() {
                return Err(Error::Dimension(format!(
                    "box has {} axes for a {}-state system",
                    b.dim(),
                    resolved.oracle.n()
                )));
            }
            resolved.oracle.domain = b.clone();
        }
        if let Some(n) = s.n_samples {
            resolved.n_samples = n;
        }
        if let Some(c) = &s.controls {
            resolved.controls = Some(c.clone());
        }
        if let Some(c) = &resolved.controls {
            c.check_state_dim(resolved.oracle.n())?;
            if c.input_dim() != resolved.oracle.m() {
                return Err(Error::Dimension(format!(
                    "controls have {} inputs but the system has {}",
                    c.input_dim(),
                    resolved.oracle.m()
                )));
            }
        }
        Ok(Some(resolved))
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedSystem {
    pub oracle: SystemOracle,
    pub n_samples: usize,
    pub controls: Option<ControlSet>,
}
