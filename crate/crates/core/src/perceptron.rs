//! Projected fixed-increment perceptron.
//!
//! Samples are visited cyclically in index order. A sample is misclassified
//! when its score is at or below `margin_floor`; the estimate is then moved by
//! the feature and projected back onto the constraint set. A full pass without
//! corrections ends training.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{best_in_group, project, Feature, LyapParam, SpectralBounds};
use crate::matnum::dot;

/// Default pass cap.
pub const DEFAULT_MAX_PASSES: usize = 200;

/// Default correction threshold: a score must exceed this to count as classified.
pub const DEFAULT_MARGIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub theta_init: LyapParam,
    /// Maximum number of passes that contain a correction.
    pub max_passes: usize,
    pub margin_floor: f64,
    pub bounds: SpectralBounds,
    pub record_trace: bool,
}

impl TrainConfig {
    pub fn new(theta_init: LyapParam) -> Self {
        let bounds = theta_init.bounds();
        TrainConfig {
            theta_init,
            max_passes: DEFAULT_MAX_PASSES,
            margin_floor: DEFAULT_MARGIN_FLOOR,
            bounds,
            record_trace: true,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.max_passes == 0 {
            return Err(Error::Invalid("max_passes must be at least 1".into()));
        }
        if !(self.margin_floor >= 0.0 && self.margin_floor.is_finite()) {
            return Err(Error::Invalid(format!(
                "margin floor must be finite and non-negative, got {}",
                self.margin_floor
            )));
        }
        self.bounds.validate()?;
        if self.theta_init.theta().len() != dim {
            return Err(Error::Dimension(format!(
                "features have length {dim} but θ has length {}",
                self.theta_init.theta().len()
            )));
        }
        Ok(())
    }

    /// Initial estimate inside this config's constraint set.
    fn start(&self) -> Result<LyapParam> {
        if self.theta_init.bounds() == self.bounds {
            Ok(self.theta_init.clone())
        } else {
            project(self.theta_init.theta(), self.theta_init.n(), self.bounds)
        }
    }
}

/// One applied update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Correction {
    /// 1-based pass number.
    pub pass: usize,
    pub sample: usize,
    pub control: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub theta_hat: LyapParam,
    pub corrections: usize,
    pub passes: usize,
    pub converged: bool,
    pub final_margin: f64,
    pub trace: Vec<Correction>,
}

fn step(theta: &LyapParam, y: &Feature, bounds: SpectralBounds) -> Result<LyapParam> {
    let raw: Vec<f64> = theta.theta().iter().zip(&y.y).map(|(a, b)| a + b).collect();
    project(&raw, theta.n(), bounds)
}

/// Trains on an autonomous feature set.
pub fn train_autonomous(features: &[Feature], cfg: &TrainConfig) -> Result<TrainReport> {
    let dim = features
        .first()
        .map(|f| f.y.len())
        .ok_or_else(|| Error::Data("no features to train on".into()))?;
    if features.iter().any(|f| f.y.len() != dim) {
        return Err(Error::Dimension("features of unequal length".into()));
    }
    cfg.validate(dim)?;

    let mut theta = cfg.start()?;
    let mut corrections = 0;
    let mut trace = Vec::new();
    let mut passes = 0;
    let mut converged = false;
    while passes < cfg.max_passes {
        passes += 1;
        let mut flag = false;
        for (i, y) in features.iter().enumerate() {
            if theta.score(y) <= cfg.margin_floor {
                theta = step(&theta, y, cfg.bounds)?;
                corrections += 1;
                flag = true;
                if cfg.record_trace {
                    trace.push(Correction {
                        pass: passes,
                        sample: i,
                        control: None,
                    });
                }
            }
        }
        if !flag {
            converged = true;
            break;
        }
    }
    let final_margin = crate::features::margin_autonomous(&theta, features)?;
    Ok(TrainReport {
        theta_hat: theta,
        corrections,
        passes,
        converged,
        final_margin,
        trace,
    })
}

/// Trains on grouped control features: a state is misclassified when even its
/// best control scores at or below the floor, and only that best feature is
/// used for the update.
pub fn train_control(groups: &[Vec<Feature>], cfg: &TrainConfig) -> Result<TrainReport> {
    let width = groups
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Data("no feature groups to train on".into()))?;
    if width == 0 {
        return Err(Error::Data("empty feature group".into()));
    }
    if groups.iter().any(|g| g.len() != width) {
        return Err(Error::Data("ragged feature groups".into()));
    }
    let dim = groups[0][0].y.len();
    if groups.iter().flatten().any(|f| f.y.len() != dim) {
        return Err(Error::Dimension("features of unequal length".into()));
    }
    cfg.validate(dim)?;

    let mut theta = cfg.start()?;
    let mut corrections = 0;
    let mut trace = Vec::new();
    let mut count = 0;
    let mut passes = 0;
    let converged = loop {
        passes += 1;
        let mut flag = false;
        for (i, group) in groups.iter().enumerate() {
            let (j, best) = best_in_group(&theta, group);
            if best <= cfg.margin_floor {
                theta = step(&theta, &group[j], cfg.bounds)?;
                corrections += 1;
                flag = true;
                if cfg.record_trace {
                    trace.push(Correction {
                        pass: passes,
                        sample: i,
                        control: Some(j),
                    });
                }
            }
        }
        if !flag {
            break true;
        }
        count += 1;
        if count >= cfg.max_passes {
            break false;
        }
    };
    let final_margin = crate::features::margin_control(&theta, groups)?;
    Ok(TrainReport {
        theta_hat: theta,
        corrections,
        passes,
        converged,
        final_margin,
        trace,
    })
}

/// Constants of the correction bound for a unit-norm strict separator θ*.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceBound {
    /// Scale at which αθ* is reached: β²/γ.
    pub alpha: f64,
    /// Maximum number of corrections: ‖θ̂(1) − αθ*‖² / β².
    pub k0: f64,
    /// max_i ‖y_i‖².
    pub beta_sq: f64,
    /// min_i y_iᵀθ*.
    pub gamma: f64,
}

pub fn convergence_bound(
    features: &[Feature],
    theta_star: &[f64],
    theta_init: &[f64],
) -> Result<ConvergenceBound> {
    if features.is_empty() {
        return Err(Error::Data("no features".into()));
    }
    let dim = theta_star.len();
    if theta_init.len() != dim || features.iter().any(|f| f.y.len() != dim) {
        return Err(Error::Dimension("separator, initial point and features disagree".into()));
    }
    let norm = dot(theta_star, theta_star).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("separator must have unit norm, has {norm}")));
    }
    let beta_sq = features.iter().map(Feature::norm_sq).fold(0.0, f64::max);
    let gamma = features
        .iter()
        .map(|f| dot(&f.y, theta_star))
        .fold(f64::INFINITY, f64::min);
    if gamma <= 0.0 {
        return Err(Error::Invalid(format!(
            "θ* is not a strict separator (min score {gamma:e})"
        )));
    }
    let alpha = beta_sq / gamma;
    let gap: f64 = theta_init
        .iter()
        .zip(theta_star)
        .map(|(a, s)| (a - alpha * s).powi(2))
        .sum();
    Ok(ConvergenceBound {
        alpha,
        k0: gap / beta_sq,
        beta_sq,
        gamma,
    })
}
