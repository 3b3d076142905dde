//! Controllers synthesized from a trained certificate.
//!
//! Every dataset state is labeled with the control whose feature scores best
//! against θ̂. Two switching laws are provided: the closed-form rule
//! `u(x) = argmin_j xᵀPB·u_j(x)` and a nearest-neighbor classifier over the
//! labeled states.

use serde::{Deserialize, Serialize};

use crate::dataset::{ControlDataset, ControlSet};
use crate::error::{Error, Result};
use crate::features::{best_in_group, control_features, LyapParam};
use crate::matnum::{distance, spectral_range, Matrix, SymMatrix};

/// A dataset state and the index of its best control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    pub x: Vec<f64>,
    pub label: usize,
    /// `max_j y_ijᵀθ̂`.
    pub score: f64,
}

impl LabeledState {
    /// A state is certified when its best score is non-negative.
    pub fn certified(&self) -> bool {
        self.score >= 0.0
    }
}

/// Labels every state with `argmax_j y_ijᵀθ̂` (first index on ties).
pub fn label_states(ds: &ControlDataset, lp: &LyapParam) -> Result<Vec<LabeledState>> {
    if ds.n() != lp.n() {
        return Err(Error::Dimension(format!(
            "dataset has n = {} but θ has n = {}",
            ds.n(),
            lp.n()
        )));
    }
    Ok(control_features(ds)
        .iter()
        .zip(ds.states())
        .map(|(group, x)| {
            let (label, score) = best_in_group(lp, group);
            LabeledState {
                x: x.clone(),
                label,
                score,
            }
        })
        .collect())
}

/// Indices of states whose best score is negative.
pub fn uncertified(labels: &[LabeledState]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.certified())
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Controller {
    #[serde(rename = "bilinear")]
    Bilinear {
        #[serde(rename = "P")]
        p: SymMatrix,
        #[serde(rename = "B")]
        b: Matrix,
        controls: ControlSet,
    },
    #[serde(rename = "nearest-neighbor")]
    NearestNeighbor {
        controls: ControlSet,
        labeled: Vec<LabeledState>,
    },
}

impl Controller {
    pub fn bilinear(p: SymMatrix, b: Matrix, controls: ControlSet) -> Result<Self> {
        let c = Controller::Bilinear { p, b, controls };
        c.validate()?;
        Ok(c)
    }

    pub fn nearest_neighbor(controls: ControlSet, labeled: Vec<LabeledState>) -> Result<Self> {
        let c = Controller::NearestNeighbor { controls, labeled };
        c.validate()?;
        Ok(c)
    }

    /// Checks the invariants; deserialized controllers should be validated before use.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        self.controls().check_state_dim(n)?;
        match self {
            Controller::Bilinear { p, b, controls } => {
                if b.shape() != (n, controls.input_dim()) {
                    return Err(Error::Dimension(format!(
                        "B is {}x{}, expected {n}x{}",
                        b.rows(),
                        b.cols(),
                        controls.input_dim()
                    )));
                }
                let (lo, _) = spectral_range(p)?;
                if lo <= 0.0 {
                    return Err(Error::Invalid(format!(
                        "P must be positive definite (min eigenvalue {lo:e})"
                    )));
                }
            }
            Controller::NearestNeighbor { controls, labeled } => {
                if labeled.is_empty() {
                    return Err(Error::Data("no labeled states".into()));
                }
                for (i, s) in labeled.iter().enumerate() {
                    if s.x.len() != n {
                        return Err(Error::Dimension(format!("labeled state {i} has wrong length")));
                    }
                    if s.label >= controls.len() {
                        return Err(Error::Invalid(format!(
                            "labeled state {i} refers to control {} of {}",
                            s.label + 1,
                            controls.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        match self {
            Controller::Bilinear { p, .. } => p.n(),
            Controller::NearestNeighbor { labeled, .. } => labeled.first().map_or(0, |s| s.x.len()),
        }
    }

    pub fn m(&self) -> usize {
        self.controls().input_dim()
    }

    pub fn controls(&self) -> &ControlSet {
        match self {
            Controller::Bilinear { controls, .. } | Controller::NearestNeighbor { controls, .. } => {
                controls
            }
        }
    }

    /// Index of the control applied at `x`.
    pub fn select(&self, x: &[f64]) -> usize {
        match self {
            Controller::Bilinear { p, b, controls } => {
                // xᵀPB as a row vector
                let pb = b.transpose().matvec(&p.as_matrix().matvec(x));
                let mut best = (0, f64::INFINITY);
                for (j, atom) in controls.atoms().iter().enumerate() {
                    let s: f64 = pb.iter().zip(atom.apply(x)).map(|(a, u)| a * u).sum();
                    if s < best.1 {
                        best = (j, s);
                    }
                }
                best.0
            }
            Controller::NearestNeighbor { labeled, .. } => {
                let mut best = (0, f64::INFINITY);
                for s in labeled {
                    let d = distance(&s.x, x);
                    if d < best.1 {
                        best = (s.label, d);
                    }
                }
                best.0
            }
        }
    }

    /// Realized control `u(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.controls().atoms()[self.select(x)].apply(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ControlAtom;
    use crate::features::{pack, SpectralBounds};
    use proptest::prelude::*;

    fn published_p() -> SymMatrix {
        SymMatrix::new(Matrix::from_rows(&[vec![3.0942, -0.0555], vec![-0.0555, 3.2443]]).unwrap())
            .unwrap()
    }

    fn output_feedback() -> ControlSet {
        ControlSet::new(vec![
            ControlAtom::gain(Matrix::row(&[-1.0, 0.0])),
            ControlAtom::gain(Matrix::row(&[0.5, 0.0])),
        ])
        .unwrap()
    }

    fn constants(values: &[f64]) -> ControlSet {
        ControlSet::new(values.iter().map(|v| ControlAtom::constant(vec![*v])).collect()).unwrap()
    }

    #[test]
    fn single_control_labels_everything_first() {
        let ds = ControlDataset::new(
            vec![vec![1.0], vec![-2.0]],
            vec![vec![vec![0.0]], vec![vec![0.0]]],
            vec![vec![vec![3.0]], vec![vec![-1.0]]],
        )
        .unwrap();
        let lp = pack(&SymMatrix::diag(&[1.0]), &SymMatrix::diag(&[1.0]), SpectralBounds::default())
            .unwrap();
        let labels = label_states(&ds, &lp).unwrap();
        assert!(labels.iter().all(|l| l.label == 0));
        assert_eq!(uncertified(&labels), vec![0, 1]);
    }

    #[test]
    fn hand_scored_label() {
        let ds = ControlDataset::new(
            vec![vec![1.0]],
            vec![vec![vec![0.0], vec![1.0]]],
            vec![vec![vec![-1.0], vec![1.0]]],
        )
        .unwrap();
        let lp = pack(&SymMatrix::diag(&[1.0]), &SymMatrix::diag(&[1.0]), SpectralBounds::default())
            .unwrap();
        let labels = label_states(&ds, &lp).unwrap();
        assert_eq!(labels[0].label, 0);
        assert!((labels[0].score - 1.0).abs() < 1e-15);
        assert!(uncertified(&labels).is_empty());
    }

    #[test]
    fn bilinear_rule_at_the_origin_picks_first() {
        let c = Controller::bilinear(published_p(), Matrix::column(&[0.0, 1.0]), constants(&[2.0, -3.0]))
            .unwrap();
        assert_eq!(c.select(&[0.0, 0.0]), 0);
        assert_eq!(c.evaluate(&[0.0, 0.0]), vec![2.0]);
    }

    #[test]
    fn bilinear_rule_with_published_p() {
        let c = Controller::bilinear(published_p(), Matrix::column(&[0.0, 1.0]), output_feedback())
            .unwrap();
        // xᵀPB = −0.0555, realized U(x) = {−1, 0.5}: scores {0.0555, −0.02775}
        assert_eq!(c.select(&[1.0, 0.0]), 1);
        assert_eq!(c.evaluate(&[1.0, 0.0]), vec![0.5]);
        // both xᵀPB and U(x) flip sign, so the scores (and the label) do not
        assert_eq!(c.select(&[-1.0, 0.0]), 1);
        assert_eq!(c.evaluate(&[-1.0, 0.0]), vec![-0.5]);

        // with constant inputs the scores do flip
        let c = Controller::bilinear(published_p(), Matrix::column(&[0.0, 1.0]), constants(&[-1.0, 0.5]))
            .unwrap();
        assert_eq!(c.evaluate(&[1.0, 0.0]), vec![0.5]);
        assert_eq!(c.evaluate(&[-1.0, 0.0]), vec![-1.0]);
    }

    #[test]
    fn nearest_neighbor_rule() {
        let s = |x: f64, label| LabeledState {
            x: vec![x],
            label,
            score: 1.0,
        };
        let one = Controller::nearest_neighbor(constants(&[-1.0, 1.0]), vec![s(0.3, 1)]).unwrap();
        for q in [-5.0, 0.0, 0.3, 7.0] {
            assert_eq!(one.select(&[q]), 1);
        }
        let two = Controller::nearest_neighbor(constants(&[-1.0, 1.0]), vec![s(-1.0, 0), s(1.0, 1)])
            .unwrap();
        assert_eq!(two.select(&[0.9]), 1);
        assert_eq!(two.select(&[-0.9]), 0);
        assert_eq!(two.select(&[0.0]), 0);
    }

    #[test]
    fn invalid_controllers() {
        let u = constants(&[-1.0, 1.0]);
        assert!(Controller::nearest_neighbor(u.clone(), vec![]).is_err());
        let bad = LabeledState {
            x: vec![0.0],
            label: 2,
            score: 0.0,
        };
        assert!(Controller::nearest_neighbor(u.clone(), vec![bad]).is_err());
        assert!(Controller::bilinear(SymMatrix::diag(&[1.0, -1.0]), Matrix::column(&[0.0, 1.0]), u.clone())
            .is_err());
        assert!(Controller::bilinear(SymMatrix::identity(2), Matrix::column(&[1.0]), u).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = Controller::bilinear(published_p(), Matrix::column(&[0.0, 1.0]), output_feedback())
            .unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"kind\":\"bilinear\""));
        assert_eq!(serde_json::from_str::<Controller>(&text).unwrap(), c);
        let nn = Controller::nearest_neighbor(
            output_feedback(),
            vec![LabeledState {
                x: vec![1.0, 2.0],
                label: 1,
                score: 0.5,
            }],
        )
        .unwrap();
        let text = serde_json::to_string(&nn).unwrap();
        assert!(text.contains("nearest-neighbor"));
        assert_eq!(serde_json::from_str::<Controller>(&text).unwrap(), nn);
    }

    proptest! {
        #[test]
        fn bilinear_choice_is_minimal_and_scale_free(
            x in prop::array::uniform2(-3.0f64..3.0),
            us in prop::collection::vec(-2.0f64..2.0, 1..5),
            c in 0.01f64..100.0,
        ) {
            let mut us = us;
            us.sort_by(f64::total_cmp);
            us.dedup();
            let u = constants(&us);
            let p = published_p();
            let b = Matrix::column(&[0.3, 1.0]);
            let ctrl = Controller::bilinear(p.clone(), b.clone(), u.clone()).unwrap();
            let j = ctrl.select(&x);
            let pb = b.transpose().matvec(&p.as_matrix().matvec(&x))[0];
            for v in &us {
                prop_assert!(pb * us[j] <= pb * v);
            }
            let scaled = Controller::bilinear(p.scale(c), b, u).unwrap();
            prop_assert_eq!(scaled.select(&x), j);
        }

        #[test]
        fn nearest_neighbor_reproduces_training_labels(
            pts in prop::collection::vec(prop::array::uniform2(-2.0f64..2.0), 1..30),
        ) {
            let labeled: Vec<LabeledState> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| LabeledState { x: p.to_vec(), label: i % 3, score: 0.0 })
                .collect();
            let ctrl = Controller::nearest_neighbor(constants(&[-1.0, 0.0, 1.0]), labeled.clone()).unwrap();
            for (i, s) in labeled.iter().enumerate() {
                // duplicates resolve to the first occurrence
                let first = labeled.iter().position(|t| t.x == s.x).unwrap();
                prop_assert_eq!(ctrl.select(&s.x), labeled[first].label, "state {}", i);
            }
        }
    }
}
