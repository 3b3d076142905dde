//! Quadratic Lyapunov parameterization.
//!
//! A candidate `V(x) = xᵀPx` with decay weight `xᵀQx` is stored as the stacked
//! vector `θ = [vec(P); vec(Q)]`. Each observation `(x, ẋ)` becomes a feature
//! `y = −[x⊗ẋ + ẋ⊗x; x⊗x]` whose inner product with θ is the decrease slack
//! `−(ẋᵀPx + xᵀPẋ + xᵀQx)`. The data certify the candidate when every slack is
//! non-negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matnum::{dot, invec1, invec2, kron_vec, spectral_clamp, spectral_range, vec, SymMatrix};

/// Spectral-interval tolerance used when validating membership.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-8;

/// Spectral bounds `a1·I ≤ P ≤ a3·I`, `a2·I ≤ Q ≤ a4·I`.
///
/// Upper bounds may be infinite; they serialize as `null`. Missing fields take
/// their default values when deserializing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralBounds {
    pub a1: f64,
    pub a2: f64,
    #[serde(with = "infinite_as_null")]
    pub a3: f64,
    #[serde(with = "infinite_as_null")]
    pub a4: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for SpectralBounds {
    fn default() -> Self {
        SpectralBounds {
            a1: 0.1,
            a2: 0.1,
            a3: f64::INFINITY,
            a4: f64::INFINITY,
        }
    }
}

impl SpectralBounds {
    pub fn new(a1: f64, a2: f64, a3: f64, a4: f64) -> Result<Self> {
        let b = SpectralBounds { a1, a2, a3, a4 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.a1 > 0.0
            && self.a2 > 0.0
            && self.a1.is_finite()
            && self.a2.is_finite()
            && self.a1 <= self.a3
            && self.a2 <= self.a4;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "spectral bounds need 0 < a1 <= a3 and 0 < a2 <= a4, got {self:?}"
            )))
        }
    }
}

/// θ = [vec(P); vec(Q)] together with the set it must lie in.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapParam {
    n: usize,
    theta: Vec<f64>,
    bounds: SpectralBounds,
}

impl LyapParam {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn bounds(&self) -> SpectralBounds {
        self.bounds
    }

    pub fn p(&self) -> SymMatrix {
        invec1(&self.theta, self.n).expect("LyapParam holds a valid stacked pair")
    }

    pub fn q(&self) -> SymMatrix {
        invec2(&self.theta, self.n).expect("LyapParam holds a valid stacked pair")
    }

    pub fn score(&self, y: &Feature) -> f64 {
        dot(&y.y, &self.theta)
    }
}

/// Stacks `P` and `Q` after checking their spectra against `bounds`.
pub fn pack(p: &SymMatrix, q: &SymMatrix, bounds: SpectralBounds) -> Result<LyapParam> {
    bounds.validate()?;
    let n = p.n();
    if q.n() != n {
        return Err(Error::Dimension(format!("P is {n}x{n} but Q is {0}x{0}", q.n())));
    }
    check_spectrum("P", p, bounds.a1, bounds.a3)?;
    check_spectrum("Q", q, bounds.a2, bounds.a4)?;
    Ok(LyapParam {
        n,
        theta: stack(p, q),
        bounds,
    })
}

fn stack(p: &SymMatrix, q: &SymMatrix) -> Vec<f64> {
    let mut theta = vec(p.as_matrix());
    theta.extend(vec(q.as_matrix()));
    theta
}

fn check_spectrum(name: &str, s: &SymMatrix, lo: f64, hi: f64) -> Result<()> {
    let (min, max) = spectral_range(s)?;
    let tol = MEMBERSHIP_TOLERANCE * (1.0 + max.abs());
    if min < lo - tol {
        return Err(Error::Bounds(format!(
            "{name} has eigenvalue {min} below the lower bound {lo}"
        )));
    }
    if max > hi + tol {
        return Err(Error::Bounds(format!(
            "{name} has eigenvalue {max} above the upper bound {hi}"
        )));
    }
    Ok(())
}

pub fn unpack(lp: &LyapParam) -> (SymMatrix, SymMatrix) {
    (lp.p(), lp.q())
}

/// Euclidean projection of a raw stacked vector onto the constraint set:
/// both blocks are symmetrized and their spectra clamped into
/// `[a1, a3]` and `[a2, a4]`.
pub fn project(theta_raw: &[f64], n: usize, bounds: SpectralBounds) -> Result<LyapParam> {
    bounds.validate()?;
    let nn = n * n;
    if n == 0 || theta_raw.len() != 2 * nn {
        return Err(Error::Dimension(format!(
            "θ of length {} for n = {n}",
            theta_raw.len()
        )));
    }
    let p_raw = crate::matnum::unvec(&theta_raw[..nn], n, n)?;
    let q_raw = crate::matnum::unvec(&theta_raw[nn..], n, n)?;
    let p = spectral_clamp(&SymMatrix::symmetrize(&p_raw), bounds.a1, bounds.a3)?;
    let q = spectral_clamp(&SymMatrix::symmetrize(&q_raw), bounds.a2, bounds.a4)?;
    Ok(LyapParam {
        n,
        theta: stack(&p, &q),
        bounds,
    })
}

/// Classification feature of one observation, with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub y: Vec<f64>,
    pub sample: usize,
    pub control: Option<usize>,
}

impl Feature {
    pub fn norm_sq(&self) -> f64 {
        dot(&self.y, &self.y)
    }
}

/// Maps an observation `(x, ẋ)` to a feature vector. Only the quadratic map ships.
pub trait FeatureMap {
    fn dim(&self, n: usize) -> usize;
    fn map(&self, x: &[f64], xdot: &[f64]) -> Vec<f64>;
}

/// `y = −[x⊗ẋ + ẋ⊗x; x⊗x]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

impl FeatureMap for Quadratic {
    fn dim(&self, n: usize) -> usize {
        2 * n * n
    }

    fn map(&self, x: &[f64], xdot: &[f64]) -> Vec<f64> {
        let xv = kron_vec(x, xdot);
        let vx = kron_vec(xdot, x);
        let xx = kron_vec(x, x);
        xv.iter()
            .zip(&vx)
            .map(|(a, b)| -(a + b))
            .chain(xx.iter().map(|v| -v))
            .collect()
    }
}

pub fn feature(x: &[f64], xdot: &[f64]) -> Result<Feature> {
    if x.len() != xdot.len() {
        return Err(Error::Dimension(format!(
            "state of length {} with derivative of length {}",
            x.len(),
            xdot.len()
        )));
    }
    Ok(Feature {
        y: Quadratic.map(x, xdot),
        sample: 0,
        control: None,
    })
}

/// One feature per sample of an autonomous dataset.
pub fn autonomous_features(ds: &crate::dataset::AutonomousDataset) -> Vec<Feature> {
    ds.samples()
        .iter()
        .enumerate()
        .map(|(i, s)| Feature {
            y: Quadratic.map(&s.x, &s.xdot),
            sample: i,
            control: None,
        })
        .collect()
}

/// Features grouped by state: `groups[i][j]` belongs to `(x_i, u_j)`.
pub fn control_features(ds: &crate::dataset::ControlDataset) -> Vec<Vec<Feature>> {
    ds.states()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            (0..ds.n_controls())
                .map(|j| Feature {
                    y: Quadratic.map(x, ds.deriv(i, j)),
                    sample: i,
                    control: Some(j),
                })
                .collect()
        })
        .collect()
}

/// `min_i y_iᵀθ`; the data certify θ iff this is non-negative.
pub fn margin_autonomous(lp: &LyapParam, features: &[Feature]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::Data("no features".into()));
    }
    Ok(features
        .iter()
        .map(|y| lp.score(y))
        .fold(f64::INFINITY, f64::min))
}

/// Best score of one state group and the first index attaining it.
pub fn best_in_group(lp: &LyapParam, group: &[Feature]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, y) in group.iter().enumerate() {
        let s = lp.score(y);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// `min_i max_j y_ijᵀθ`.
pub fn margin_control(lp: &LyapParam, groups: &[Vec<Feature>]) -> Result<f64> {
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(Error::Data("empty feature groups".into()));
    }
    Ok(groups
        .iter()
        .map(|g| best_in_group(lp, g).1)
        .fold(f64::INFINITY, f64::min))
}

/// Decrease slack `−(ẋᵀPx + xᵀPẋ + xᵀQx)`; the sample satisfies the
/// Lyapunov inequality iff the slack is non-negative.
pub fn vdot_check(p: &SymMatrix, q: &SymMatrix, x: &[f64], xdot: &[f64]) -> Result<f64> {
    if p.n() != x.len() || q.n() != x.len() || xdot.len() != x.len() {
        return Err(Error::Dimension("vdot_check dimensions disagree".into()));
    }
    let pm = p.as_matrix();
    Ok(-(pm.bilinear(xdot, x) + pm.bilinear(x, xdot) + q.quad(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matnum::{sym_eig, Matrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn wide() -> SpectralBounds {
        SpectralBounds::new(0.1, 0.1, 10.0, 10.0).unwrap()
    }

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    fn rand_sym(rng: &mut impl Rng, n: usize) -> SymMatrix {
        let data = (0..n * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        SymMatrix::symmetrize(&Matrix::from_row_major(n, n, data).unwrap())
    }

    fn raw_theta(p: &SymMatrix, q: &SymMatrix) -> Vec<f64> {
        stack(p, q)
    }

    #[test]
    fn scalar_feature_by_hand() {
        let f = feature(&[2.0], &[-3.0]).unwrap();
        assert_eq!(f.y, vec![12.0, -4.0]);
        let (p, q) = (0.7, 1.3);
        let s = dot(&f.y, &[p, q]);
        assert!((s - (12.0 * p - 4.0 * q)).abs() < 1e-14);
        assert!((s + (2.0 * 2.0 * -3.0 * p + 4.0 * q)).abs() < 1e-14);
    }

    #[test]
    fn zero_state_gives_zero_feature() {
        let f = feature(&[0.0; 3], &[1.0, -2.0, 3.0]).unwrap();
        assert!(f.y.iter().all(|v| *v == 0.0));
        assert_eq!(f.y.len(), 18);
    }

    #[test]
    fn defining_identity_on_random_tuples() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=4);
            let x = rand_vec(&mut rng, n);
            let xd = rand_vec(&mut rng, n);
            let p = rand_sym(&mut rng, n);
            let q = rand_sym(&mut rng, n);
            let lhs = dot(&feature(&x, &xd).unwrap().y, &raw_theta(&p, &q));
            let pm = p.as_matrix();
            let rhs = -(pm.bilinear(&xd, &x) + pm.bilinear(&x, &xd) + q.quad(&x));
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            assert!((lhs - rhs).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn pack_unpack_round_trip() {
        let lp = pack(&SymMatrix::identity(2), &SymMatrix::identity(2), wide()).unwrap();
        let (p, q) = unpack(&lp);
        assert_eq!(p, SymMatrix::identity(2));
        assert_eq!(q, SymMatrix::identity(2));
    }

    #[test]
    fn pack_rejects_indefinite_p() {
        let err = pack(&SymMatrix::diag(&[1.0, -1.0]), &SymMatrix::identity(2), wide()).unwrap_err();
        assert!(matches!(err, Error::Bounds(_)));
        assert!(err.to_string().contains("-1"));
    }

    #[test]
    fn pack_accepts_published_example_p() {
        let p = SymMatrix::new(
            Matrix::from_rows(&[vec![3.0942, -0.0555], vec![-0.0555, 3.2443]]).unwrap(),
        )
        .unwrap();
        // λ = (tr ± √(tr² − 4 det)) / 2 by hand
        let (tr, det) = (3.0942 + 3.2443, 3.0942 * 3.2443 - 0.0555f64.powi(2));
        let disc = (tr * tr - 4.0 * det).sqrt();
        let (hi, lo) = ((tr + disc) / 2.0, (tr - disc) / 2.0);
        assert!((hi - 3.26259).abs() < 1e-5 && (lo - 3.07591).abs() < 1e-5);
        let eig = sym_eig(&p).unwrap();
        assert!((eig.max() - hi).abs() < 1e-12 && (eig.min() - lo).abs() < 1e-12);
        let bounds = SpectralBounds::new(0.1, 0.1, 100.0, 100.0).unwrap();
        assert!(pack(&p, &SymMatrix::identity(2), bounds).is_ok());
    }

    #[test]
    fn projection_clamps_each_block() {
        let bounds = SpectralBounds::new(0.1, 0.1, 3.0, 3.0).unwrap();
        let raw = raw_theta(&SymMatrix::diag(&[5.0, -1.0]), &SymMatrix::diag(&[0.01, 1.0]));
        let lp = project(&raw, 2, bounds).unwrap();
        let close = |a: &SymMatrix, b: &SymMatrix| (a.as_matrix() - b.as_matrix()).max_abs() < 1e-14;
        assert!(close(&lp.p(), &SymMatrix::diag(&[3.0, 0.1])));
        assert!(close(&lp.q(), &SymMatrix::diag(&[0.1, 1.0])));
    }

    #[test]
    fn projection_fixed_point() {
        let p = SymMatrix::new(Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap()).unwrap();
        let lp = pack(&p, &SymMatrix::identity(2), wide()).unwrap();
        let again = project(lp.theta(), 2, wide()).unwrap();
        for (a, b) in lp.theta().iter().zip(again.theta()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    /// Projection optimality against brute-force enumeration of the 2×2 set:
    /// no grid member may be closer to the raw point than the projection.
    #[test]
    fn projection_beats_grid_members() {
        let bounds = SpectralBounds::new(0.5, 0.5, 2.0, 2.0).unwrap();
        let mut rng = Xoshiro256StarStar::seed_from_u64(17);
        let members = grid_members(bounds);
        for _ in 0..20 {
            let raw = rand_vec(&mut rng, 8).iter().map(|v| v * 2.0).collect::<Vec<_>>();
            let proj = project(&raw, 2, bounds).unwrap();
            let d_proj = dist(proj.theta(), &raw);
            for m in &members {
                assert!(d_proj <= dist(m, &raw) + 1e-12);
            }
        }
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    /// R(φ)·diag(μ₁, μ₂)·R(φ)ᵀ for grids of angles and in-range eigenvalues.
    fn grid_sym(lo: f64, hi: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let steps = 8;
        for a in 0..24 {
            let phi = std::f64::consts::PI * a as f64 / 24.0;
            let (c, s) = (phi.cos(), phi.sin());
            for i in 0..=steps {
                for k in 0..=steps {
                    let m1 = lo + (hi - lo) * i as f64 / steps as f64;
                    let m2 = lo + (hi - lo) * k as f64 / steps as f64;
                    let p11 = c * c * m1 + s * s * m2;
                    let p22 = s * s * m1 + c * c * m2;
                    let p12 = c * s * (m1 - m2);
                    out.push(vec![p11, p12, p12, p22]);
                }
            }
        }
        out
    }

    fn grid_members(b: SpectralBounds) -> Vec<Vec<f64>> {
        let ps = grid_sym(b.a1, b.a3);
        let qs: Vec<Vec<f64>> = grid_sym(b.a2, b.a4).into_iter().step_by(7).collect();
        let mut out = Vec::new();
        for p in ps.iter().step_by(5) {
            for q in &qs {
                let mut t = p.clone();
                t.extend(q);
                out.push(t);
            }
        }
        out
    }

    #[test]
    fn margins_by_hand() {
        let lp = LyapParam {
            n: 1,
            theta: vec![2.0, 0.0],
            bounds: SpectralBounds::default(),
        };
        let y = Feature {
            y: vec![1.0, 0.0],
            sample: 0,
            control: None,
        };
        assert_eq!(margin_autonomous(&lp, &[y]).unwrap(), 2.0);

        let lp = pack(&SymMatrix::identity(1), &SymMatrix::identity(1), wide()).unwrap();
        let ys: Vec<Feature> = [1.0, 2.0]
            .iter()
            .map(|x| feature(&[*x], &[-*x]).unwrap())
            .collect();
        assert_eq!(margin_autonomous(&lp, &ys).unwrap(), 1.0);
        assert!(margin_autonomous(&lp, &[]).is_err());
        assert!(margin_control(&lp, &[]).is_err());
    }

    #[test]
    fn vdot_examples() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(vdot_check(&i2, &i2, &[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(vdot_check(&i2, &i2, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), -3.0);
    }

    #[test]
    fn vdot_equals_feature_score() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..=3);
            let x = rand_vec(&mut rng, n);
            let xd = rand_vec(&mut rng, n);
            let p = spectral_clamp(&rand_sym(&mut rng, n), 0.1, 10.0).unwrap();
            let q = spectral_clamp(&rand_sym(&mut rng, n), 0.1, 10.0).unwrap();
            let lp = pack(&p, &q, wide()).unwrap();
            let s = vdot_check(&p, &q, &x, &xd).unwrap();
            let f = feature(&x, &xd).unwrap();
            assert!((s - lp.score(&f)).abs() <= 1e-10 * (1.0 + s.abs()));
        }
    }

    proptest! {
        #[test]
        fn scale_equivariance(
            c in -3.0f64..3.0,
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            xd in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let f = feature(&x, &xd).unwrap().y;
            let xs: Vec<f64> = x.iter().map(|v| c * v).collect();
            let xds: Vec<f64> = xd.iter().map(|v| c * v).collect();
            let g = feature(&xs, &xds).unwrap().y;
            for (a, b) in f.iter().zip(&g) {
                prop_assert!((c * c * a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn projection_is_idempotent_and_feasible(raw in proptest::collection::vec(-5.0f64..5.0, 8)) {
            let b = SpectralBounds::new(0.2, 0.3, 4.0, f64::INFINITY).unwrap();
            let once = project(&raw, 2, b).unwrap();
            let twice = project(once.theta(), 2, b).unwrap();
            prop_assert!(dist(once.theta(), twice.theta()) <= 1e-9);
            prop_assert!(pack(&once.p(), &once.q(), b).is_ok());
        }

        #[test]
        fn margin_sign_matches_slacks(
            pts in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0), 1..12),
        ) {
            let p = SymMatrix::new(Matrix::from_rows(&[vec![1.5, 0.2], vec![0.2, 1.0]]).unwrap()).unwrap();
            let q = SymMatrix::diag(&[0.3, 0.5]);
            let lp = pack(&p, &q, wide()).unwrap();
            let samples: Vec<(Vec<f64>, Vec<f64>)> =
                pts.iter().map(|(a, b, c, d)| (vec![*a, *b], vec![*c, *d])).collect();
            let feats: Vec<Feature> =
                samples.iter().map(|(x, xd)| feature(x, xd).unwrap()).collect();
            let margin = margin_autonomous(&lp, &feats).unwrap();
            let all_ok = samples.iter().all(|(x, xd)| vdot_check(&p, &q, x, xd).unwrap() >= 0.0);
            // the two evaluation orders can differ in the last bits near zero
            if margin.abs() > 1e-12 {
                prop_assert_eq!(margin >= 0.0, all_ok);
            }
        }
    }
}
