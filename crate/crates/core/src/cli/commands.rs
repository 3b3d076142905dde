use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{ControllerKind, ResolvedSystem, RunConfig};
use super::{exit, Outcome};
use crate::control::{label_states, uncertified, Controller};
use crate::dataset::{
    build_autonomous, build_control, load_autonomous_csv, load_control_csv, median, preset,
    sample_uniform, save_autonomous_csv, save_control_csv, seeded_rng, unit_draw, AutonomousDataset,
    ControlDataset, DomainBox, Observations, SystemOracle,
};
use crate::error::{Error, Result};
use crate::features::{autonomous_features, control_features, LyapParam};
use crate::matnum::{norm, SymMatrix};
use crate::perceptron::{train_autonomous, train_control, TrainConfig, TrainReport};
use crate::sysid::{identify, identify_autonomous, init_lyapunov, initialize_from, into_bounds};
use crate::verify::{
    attraction_constants, check_attraction, check_decrease, check_level_cover, default_epsilon,
    integrate_rk4, simulate_batch, write_trajectory_csv, Trajectory,
};

/// Version tag written into every JSON document.
pub const SCHEMA: u32 = 1;

/// Violations listed verbatim in the certificate; the rest are only counted.
const LISTED_VIOLATIONS: usize = 20;

/// Controller document written by `synthesize` and read by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerFile {
    pub schema: u32,
    pub system: String,
    pub n: usize,
    pub m: usize,
    /// Certificate `V(x) = xᵀPx` used for monitoring.
    #[serde(rename = "P")]
    pub p: SymMatrix,
    #[serde(rename = "Q")]
    pub q: SymMatrix,
    pub controller: Controller,
}

impl ControllerFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        check_schema(path, &value)?;
        let file: ControllerFile =
            serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))?;
        file.controller
            .validate()
            .map_err(|e| Error::format(path, e.to_string()))?;
        if file.controller.n() != file.n || file.controller.m() != file.m || file.p.n() != file.n {
            return Err(Error::format(path, "declared dimensions disagree with the controller"));
        }
        Ok(file)
    }
}

fn check_schema(path: &Path, value: &Value) -> Result<()> {
    match value.get("schema").and_then(Value::as_u64) {
        Some(v) if v == SCHEMA as u64 => Ok(()),
        Some(v) => Err(Error::format(
            path,
            format!("schema mismatch: found {v}, expected {SCHEMA}"),
        )),
        None => Err(Error::format(path, "schema mismatch: no \"schema\" field")),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_system(cfg: &RunConfig, command: &str) -> Result<ResolvedSystem> {
    cfg.system()?.ok_or_else(|| {
        Error::Invalid(format!(
            "{command} needs system.preset (or --preset) or system.linear"
        ))
    })
}

fn train_config(cfg: &RunConfig, theta_init: LyapParam) -> TrainConfig {
    TrainConfig {
        theta_init,
        max_passes: cfg.train.max_passes,
        margin_floor: cfg.train.margin_floor,
        bounds: cfg.train.bounds,
        record_trace: false,
    }
}

fn training_json(rep: &TrainReport) -> Value {
    json!({
        "converged": rep.converged,
        "corrections": rep.corrections,
        "passes": rep.passes,
        "final_margin": rep.final_margin,
    })
}

/// Smallest box containing every state.
fn bounding_box(states: &[&[f64]]) -> DomainBox {
    let n = states[0].len();
    DomainBox::new(
        (0..n)
            .map(|c| {
                states.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x[c]), hi.max(x[c]))
                })
            })
            .collect(),
    )
}

/// Points drawn uniformly from `ε`-balls around a seeded choice of states.
fn perturbed_starts(states: &[&[f64]], count: usize, eps: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    let picks = index::sample(&mut rng, states.len(), count.min(states.len())).into_vec();
    picks
        .into_iter()
        .map(|i| {
            let x = states[i];
            let z: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&z).max(f64::MIN_POSITIVE);
            let r = eps * unit_draw(&mut rng).powf(1.0 / x.len() as f64);
            x.iter().zip(&z).map(|(a, d)| a + r * d / len).collect()
        })
        .collect()
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let sys = require_system(cfg, "generate")?;
    let seed = cfg.system.seed;
    let states = sample_uniform(&sys.oracle.domain, sys.n_samples, seed)?;
    create_dir(out)?;

    let auto = build_autonomous(&sys.oracle, &states)?;
    let auto_path = out.join("autonomous.csv");
    save_autonomous_csv(&auto, &auto_path)?;
    let mut files = vec![auto_path];
    let mut n_controls = 0;
    if let Some(controls) = &sys.controls {
        let ds = build_control(&sys.oracle, &states, controls)?;
        let path = out.join("control.csv");
        save_control_csv(&ds, &path)?;
        files.push(path);
        n_controls = controls.len();
    }
    let manifest = json!({
        "schema": SCHEMA,
        "command": "generate",
        "system": sys.oracle.name,
        "dynamics": sys.oracle.dynamics,
        "box": sys.oracle.domain,
        "n_samples": sys.n_samples,
        "n_controls": n_controls,
        "seed": seed,
        "controls": sys.controls,
        "files": files,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(Outcome {
        code: exit::SUCCESS,
        summary: format!(
            "generated {} states ({} controls) for '{}' in {}",
            sys.n_samples,
            n_controls,
            sys.oracle.name,
            out.display()
        ),
    })
}

fn autonomous_source(cfg: &RunConfig) -> Result<(AutonomousDataset, Option<SystemOracle>, String)> {
    let sys = cfg.system()?;
    if let Some(path) = &cfg.system.dataset {
        let ds = load_autonomous_csv(path)?;
        return Ok((ds, sys.map(|s| s.oracle), path.display().to_string()));
    }
    let sys = sys.ok_or_else(|| {
        Error::Invalid("certify needs system.dataset, system.preset (or --preset) or system.linear".into())
    })?;
    let states = sample_uniform(&sys.oracle.domain, sys.n_samples, cfg.system.seed)?;
    let ds = build_autonomous(&sys.oracle, &states)?;
    let name = sys.oracle.name.clone();
    Ok((ds, Some(sys.oracle), name))
}

pub fn certify(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (ds, oracle, source) = autonomous_source(cfg)?;
    let bounds = cfg.train.bounds;
    let n = ds.n();

    // start from the Lyapunov solution of a fitted linear drift when it is stable
    let fitted = identify_autonomous(&ds).ok();
    let lyap = fitted
        .as_ref()
        .and_then(|m| init_lyapunov(&m.a_hat, &SymMatrix::identity(n)).ok());
    let (theta_init, init_kind) = match &lyap {
        Some(p0) => (into_bounds(p0, &SymMatrix::identity(n), bounds)?.0, "lyapunov"),
        None => (
            into_bounds(&SymMatrix::identity(n), &SymMatrix::identity(n), bounds)?.0,
            "identity",
        ),
    };

    let features = autonomous_features(&ds);
    let rep = train_autonomous(&features, &train_config(cfg, theta_init))?;
    let (p, q) = (rep.theta_hat.p(), rep.theta_hat.q());

    let mut attraction = Value::Null;
    let mut cover = Value::Null;
    let mut certified = false;
    if rep.converged {
        let states = Observations::states(&ds);
        let est = crate::dataset::estimate_bounds(&ds)?;
        let eps = match cfg.verify.epsilon {
            Some(e) => e,
            None => default_epsilon(&states)?,
        };
        let consts = attraction_constants(&p, &q, est, eps, cfg.verify.lambda)?;

        let (simulator, simulator_kind) = match oracle {
            Some(o) => (o, "oracle"),
            None => {
                let model = fitted.ok_or_else(|| {
                    Error::Data("no oracle and no linear surrogate for re-simulation".into())
                })?;
                let o = SystemOracle::linear("surrogate", model.a_hat, None, bounding_box(&states))?;
                (o, "linear-surrogate")
            }
        };
        let starts = perturbed_starts(&states, cfg.verify.starts, eps, cfg.system.seed.wrapping_add(2));
        let dt = consts.delta / cfg.verify.steps_per_delta as f64;
        let trajs: Vec<Trajectory> = starts
            .par_iter()
            .map(|x0| integrate_rk4(|x: &[f64]| simulator.rhs_free(x), x0, dt, consts.delta))
            .collect::<Result<_>>()?;
        let check = check_attraction(&trajs, &consts)?;
        certified = check.passed;

        let mut levels: Vec<f64> = states.iter().map(|x| p.quad(x)).collect();
        let level = median(&mut levels);
        let cov = check_level_cover(&states, eps, &p, level, cfg.verify.n_probe, cfg.system.seed)?;

        attraction = json!({
            "constants": consts,
            "bounds": est,
            "simulator": simulator_kind,
            "starts": starts.len(),
            "dt": dt,
            "passed": check.passed,
            "worst_ratio": check.worst_ratio,
            "n_violations": check.violations.len(),
            "violations": &check.violations[..check.violations.len().min(LISTED_VIOLATIONS)],
        });
        cover = json!({
            "level": level,
            "epsilon": eps,
            "n_probe": cov.n_probe,
            "covered": cov.covered,
            "max_gap": cov.max_gap,
            "n_uncovered": cov.uncovered.len(),
        });
    }

    create_dir(out)?;
    let report = json!({
        "schema": SCHEMA,
        "command": "certify",
        "source": source,
        "n_samples": ds.len(),
        "init": init_kind,
        "training": training_json(&rep),
        "P": p,
        "Q": q,
        "theta": rep.theta_hat.theta(),
        "spectral_bounds": bounds,
        "attraction": attraction,
        "level_cover": cover,
        "certified": certified,
    });
    write_json(&out.join("certificate.json"), &report)?;

    let verdict = if certified {
        "certified"
    } else if rep.converged {
        "not certified (attraction check failed)"
    } else {
        "not certified (training did not converge)"
    };
    Ok(Outcome {
        code: if certified { exit::SUCCESS } else { exit::FAILURE },
        summary: format!(
            "{verdict}: {} corrections in {} passes, margin {:e}",
            rep.corrections, rep.passes, rep.final_margin
        ),
    })
}

fn control_source(cfg: &RunConfig) -> Result<(ControlDataset, Option<ResolvedSystem>, String)> {
    let sys = cfg.system()?;
    if let Some(path) = &cfg.system.control_dataset {
        let ds = load_control_csv(path)?;
        return Ok((ds, sys, path.display().to_string()));
    }
    let sys = sys.ok_or_else(|| {
        Error::Invalid(
            "synthesize needs system.control_dataset, system.preset (or --preset) or system.linear"
                .into(),
        )
    })?;
    let controls = sys.controls.as_ref().ok_or_else(|| {
        Error::Invalid(format!("system '{}' has no control set; set system.controls", sys.oracle.name))
    })?;
    let states = sample_uniform(&sys.oracle.domain, sys.n_samples, cfg.system.seed)?;
    let ds = build_control(&sys.oracle, &states, controls)?;
    let name = sys.oracle.name.clone();
    Ok((ds, Some(sys), name))
}

pub fn synthesize(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (ds, sys, source) = control_source(cfg)?;
    let controls = match (&cfg.system.controls, &sys) {
        (Some(c), _) => c.clone(),
        (None, Some(s)) if s.controls.is_some() => s.controls.clone().unwrap(),
        _ => {
            return Err(Error::Invalid(
                "the control set must be given (system.controls) when synthesizing from a file".into(),
            ))
        }
    };
    if controls.len() != ds.n_controls() || controls.input_dim() != ds.m() {
        return Err(Error::Dimension(format!(
            "dataset has {} controls of dimension {}, control set has {} of dimension {}",
            ds.n_controls(),
            ds.m(),
            controls.len(),
            controls.input_dim()
        )));
    }
    let n = ds.n();
    let bounds = cfg.train.bounds;

    let model = identify(&ds)?;
    let (theta_init, init) = match initialize_from(model.clone(), cfg.train.poles.as_deref(), bounds) {
        Ok(init) => {
            let info = json!({
                "method": "lyapunov",
                "K": init.k,
                "A_cl": init.a_cl,
                "P0": init.p0,
                "Q0": init.q0,
                "clamped": init.clamped,
            });
            (init.theta_init, info)
        }
        Err(e) => {
            let (lp, _) = into_bounds(&SymMatrix::identity(n), &SymMatrix::identity(n), bounds)?;
            (lp, json!({ "method": "identity", "reason": e.to_string() }))
        }
    };

    let groups = control_features(&ds);
    let rep = train_control(&groups, &train_config(cfg, theta_init))?;
    let labels = label_states(&ds, &rep.theta_hat)?;
    let bad: Vec<usize> = uncertified(&labels).into_iter().map(|i| i + 1).collect();
    let mut counts = vec![0usize; controls.len()];
    for l in &labels {
        counts[l.label] += 1;
    }

    let (p, q) = (rep.theta_hat.p(), rep.theta_hat.q());
    let controller = match cfg.train.controller {
        ControllerKind::Bilinear => Controller::bilinear(p.clone(), model.b_hat.clone(), controls.clone())?,
        ControllerKind::NearestNeighbor => Controller::nearest_neighbor(controls.clone(), labels)?,
    };
    let system = sys.as_ref().map_or_else(|| source.clone(), |s| s.oracle.name.clone());
    let file = ControllerFile {
        schema: SCHEMA,
        system: system.clone(),
        n,
        m: ds.m(),
        p: p.clone(),
        q: q.clone(),
        controller,
    };
    create_dir(out)?;
    let ctrl_path = out.join("controller.json");
    write_json(&ctrl_path, &file)?;

    let default_bang_bang = system == "tora" && cfg.system.controls.is_none();
    let report = json!({
        "schema": SCHEMA,
        "command": "synthesize",
        "system": system,
        "source": source,
        "n_samples": ds.len(),
        "n_controls": ds.n_controls(),
        "controls": controls,
        "control_set_note": if default_bang_bang {
            Value::from("default bang-bang set U = {-1, +1}; override with system.controls")
        } else {
            Value::Null
        },
        "identification": {
            "A_hat": model.a_hat,
            "B_hat": model.b_hat,
            "residual_rms": model.residual_rms,
        },
        "initialization": init,
        "training": training_json(&rep),
        "P": p,
        "Q": q,
        "label_counts": counts,
        "uncertified_states": bad,
        "controller_kind": cfg.train.controller,
        "controller_file": ctrl_path,
    });
    write_json(&out.join("synthesis.json"), &report)?;
    Ok(Outcome {
        code: if rep.converged { exit::SUCCESS } else { exit::FAILURE },
        summary: format!(
            "{}: {} corrections in {} passes, {} uncertified states; controller written to {}",
            if rep.converged { "converged" } else { "did not converge" },
            rep.corrections,
            rep.passes,
            bad.len(),
            ctrl_path.display()
        ),
    })
}

pub fn simulate(cfg: &RunConfig, out: &Path, controller: Option<&Path>) -> Result<Outcome> {
    let path: PathBuf = controller
        .map(Path::to_path_buf)
        .or_else(|| cfg.simulate.controller.clone())
        .unwrap_or_else(|| out.join("controller.json"));
    let file = ControllerFile::load(&path)?;
    let oracle = match cfg.system()? {
        Some(s) => s.oracle,
        None => preset(&file.system)
            .map_err(|_| {
                Error::Invalid(format!(
                    "controller system '{}' is not built in; set system.preset or system.linear",
                    file.system
                ))
            })?
            .oracle,
    };
    let sim = &cfg.simulate;
    let seed = sim.seed.unwrap_or_else(|| cfg.system.seed.wrapping_add(1));
    let starts = sample_uniform(&oracle.domain, sim.runs, seed)?;
    let results = simulate_batch(&oracle, &file.controller, &starts, sim.dt, sim.t_end);

    create_dir(out)?;
    let width = sim.runs.to_string().len().max(2);
    let mut runs = Vec::new();
    let mut diverged = Vec::new();
    let mut max_ratio = 0.0f64;
    let mut all_decrease = true;
    for (k, (x0, res)) in starts.iter().zip(results).enumerate() {
        match res {
            Ok(run) => {
                let name = format!("traj_{:0width$}.csv", k + 1);
                write_trajectory_csv(&run, out.join(&name))?;
                let dec = check_decrease(&file.p, &run.trajectory)?;
                let ratio = norm(run.trajectory.last()) / norm(x0);
                max_ratio = max_ratio.max(ratio);
                all_decrease &= dec.passed;
                runs.push(json!({
                    "index": k + 1,
                    "x0": x0,
                    "x_end": run.trajectory.last(),
                    "norm_ratio": ratio,
                    "v_decrease": dec,
                    "file": name,
                }));
            }
            Err(Error::Diverged { time }) => {
                diverged.push(k + 1);
                all_decrease = false;
                max_ratio = f64::INFINITY;
                runs.push(json!({ "index": k + 1, "x0": x0, "diverged_at": time }));
            }
            Err(e) => return Err(e),
        }
    }
    let summary = json!({
        "schema": SCHEMA,
        "command": "simulate",
        "system": oracle.name,
        "controller": path,
        "dt": sim.dt,
        "t_end": sim.t_end,
        "seed": seed,
        "runs": runs,
        "max_norm_ratio": if max_ratio.is_finite() { Value::from(max_ratio) } else { Value::Null },
        "all_v_decrease_passed": all_decrease,
        "diverged_runs": diverged,
    });
    write_json(&out.join("simulation.json"), &summary)?;
    Ok(Outcome {
        code: if diverged.is_empty() { exit::SUCCESS } else { exit::FAILURE },
        summary: format!(
            "{} runs, max ‖x(t_end)‖/‖x0‖ = {max_ratio:.3e}, V non-increasing in all runs: {all_decrease}{}",
            sim.runs,
            if diverged.is_empty() {
                String::new()
            } else {
                format!(", diverged: {diverged:?}")
            }
        ),
    })
}

pub fn report(path: &Path) -> Result<Outcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    check_schema(path, &value)?;
    let pretty = serde_json::to_string_pretty(&value).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(Outcome {
        code: exit::SUCCESS,
        summary: pretty,
    })
}
