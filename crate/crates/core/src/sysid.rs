//! Initialization from data: least-squares identification of a linear model,
//! pole placement for a stabilizing feedback, and a Lyapunov-equation solve
//! for the starting `(P₀, Q₀)`.

use serde::Serialize;

use crate::dataset::{AutonomousDataset, ControlDataset};
use crate::error::{Error, Result};
use crate::features::{pack, project, LyapParam, SpectralBounds};
use crate::matnum::{
    kron, lstsq, max_real_eigenvalue, solve_linear, spectral_range, unvec, vec, Matrix, SymMatrix,
};

/// Largest acceptable condition number of the regressor Gram matrix and of
/// the controllability matrix.
pub const CONDITION_LIMIT: f64 = 1e10;

/// A closed-loop matrix counts as Hurwitz when its spectral abscissa is below this.
pub const HURWITZ_MARGIN: f64 = -1e-9;

/// Identified model `ẋ ≈ Âx + B̂u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModel {
    pub a_hat: Matrix,
    pub b_hat: Matrix,
    pub residual_rms: f64,
}

impl LinearModel {
    pub fn n(&self) -> usize {
        self.a_hat.rows()
    }

    pub fn m(&self) -> usize {
        self.b_hat.cols()
    }

    /// `Â + B̂K`.
    pub fn closed_loop(&self, k: &Matrix) -> Result<Matrix> {
        if k.shape() != (self.m(), self.n()) {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, expected {}x{}",
                k.rows(),
                k.cols(),
                self.m(),
                self.n()
            )));
        }
        Ok(&self.a_hat + &self.b_hat.matmul(k))
    }
}

fn condition_of_gram(g: &SymMatrix) -> Result<f64> {
    let (lo, hi) = spectral_range(g)?;
    Ok(if lo <= 0.0 { f64::INFINITY } else { hi / lo })
}

/// Fits `[Â B̂]` to every `(x_i, u_ij, ẋ_ij)` triple of the dataset.
pub fn identify(ds: &ControlDataset) -> Result<LinearModel> {
    let (n, m) = (ds.n(), ds.m());
    let p = n + m;
    let rows = ds.len() * ds.n_controls();
    if rows < p {
        return Err(Error::Data(format!(
            "{rows} observations cannot determine {p} regressors"
        )));
    }
    let mut z = Matrix::zeros(rows, p);
    let mut xdot = Matrix::zeros(rows, n);
    let mut r = 0;
    for (i, x) in ds.states().iter().enumerate() {
        for j in 0..ds.n_controls() {
            for (c, v) in x.iter().chain(ds.input(i, j)).enumerate() {
                z[(r, c)] = *v;
            }
            for (c, v) in ds.deriv(i, j).iter().enumerate() {
                xdot[(r, c)] = *v;
            }
            r += 1;
        }
    }

    let gram = SymMatrix::symmetrize(&z.transpose().matmul(&z));
    let cond = condition_of_gram(&gram)?;
    if cond > CONDITION_LIMIT {
        return Err(Error::Singular(format!(
            "regressor [X; U] is rank deficient (Gram condition {cond:e})"
        )));
    }
    let theta = lstsq(&z, &xdot)?.transpose();
    let a_hat = theta.columns(0, n);
    let b_hat = theta.columns(n, p);

    let fitted = z.matmul(&theta.transpose());
    let sq: f64 = (&xdot - &fitted).as_slice().iter().map(|e| e * e).sum();
    let residual_rms = (sq / rows as f64).sqrt();
    Ok(LinearModel {
        a_hat,
        b_hat,
        residual_rms,
    })
}

/// Fits `ẋ ≈ Âx` to autonomous data; the returned model has no inputs.
pub fn identify_autonomous(ds: &AutonomousDataset) -> Result<LinearModel> {
    let n = ds.n();
    if ds.len() < n {
        return Err(Error::Data(format!(
            "{} observations cannot determine {n} regressors",
            ds.len()
        )));
    }
    let mut z = Matrix::zeros(ds.len(), n);
    let mut xdot = Matrix::zeros(ds.len(), n);
    for (r, s) in ds.samples().iter().enumerate() {
        for c in 0..n {
            z[(r, c)] = s.x[c];
            xdot[(r, c)] = s.xdot[c];
        }
    }
    let cond = condition_of_gram(&SymMatrix::symmetrize(&z.transpose().matmul(&z)))?;
    if cond > CONDITION_LIMIT {
        return Err(Error::Singular(format!(
            "state regressor is rank deficient (Gram condition {cond:e})"
        )));
    }
    let a_hat = lstsq(&z, &xdot)?.transpose();
    let fitted = z.matmul(&a_hat.transpose());
    let sq: f64 = (&xdot - &fitted).as_slice().iter().map(|e| e * e).sum();
    Ok(LinearModel {
        a_hat,
        b_hat: Matrix::zeros(n, 0),
        residual_rms: (sq / ds.len() as f64).sqrt(),
    })
}

/// Default closed-loop targets `{−1, −2, …, −n}`.
pub fn default_poles(n: usize) -> Vec<f64> {
    (1..=n).map(|i| -(i as f64)).collect()
}

/// State feedback `K` (for `u = Kx`) placing the spectrum of `Â + B̂K` at the default targets.
pub fn stabilize(model: &LinearModel) -> Result<Matrix> {
    stabilize_with(model, &default_poles(model.n()))
}

/// Ackermann placement at the given real poles. Single-input only.
pub fn stabilize_with(model: &LinearModel, poles: &[f64]) -> Result<Matrix> {
    let n = model.n();
    if model.m() != 1 {
        return Err(Error::Unsupported(format!(
            "pole placement needs a single input, model has {}",
            model.m()
        )));
    }
    if poles.len() != n {
        return Err(Error::Dimension(format!("{} poles for a state of dimension {n}", poles.len())));
    }
    if poles.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("pole target".into()));
    }
    let a = &model.a_hat;

    // C = [B, AB, …, Aⁿ⁻¹B]
    let mut ctrb = Matrix::zeros(n, n);
    let mut col = model.b_hat.col_vec(0);
    for j in 0..n {
        for i in 0..n {
            ctrb[(i, j)] = col[i];
        }
        col = a.matvec(&col);
    }
    let gram = SymMatrix::symmetrize(&ctrb.transpose().matmul(&ctrb));
    let cond = condition_of_gram(&gram)?.sqrt();
    if !(cond < CONDITION_LIMIT) {
        return Err(Error::Uncontrollable(format!(
            "controllability matrix condition {cond:e}"
        )));
    }

    // φ(A) = Π (A − pᵢI)
    let mut phi = Matrix::identity(n);
    for p in poles {
        phi = phi.matmul(&(a - &Matrix::identity(n).scale(*p)));
    }
    let mut e_n = vec![0.0; n];
    e_n[n - 1] = 1.0;
    let w = solve_linear(&ctrb.transpose(), &e_n)?;
    let k: Vec<f64> = (0..n)
        .map(|c| -(0..n).map(|r| w[r] * phi[(r, c)]).sum::<f64>())
        .collect();
    Ok(Matrix::row(&k))
}

/// Solves `A_clᵀP + P·A_cl = −Q₀` for a Hurwitz `A_cl`.
pub fn init_lyapunov(a_cl: &Matrix, q0: &SymMatrix) -> Result<SymMatrix> {
    let n = a_cl.rows();
    if !a_cl.is_square() || q0.n() != n {
        return Err(Error::Dimension(format!(
            "closed loop {}x{} with Q₀ of size {}",
            a_cl.rows(),
            a_cl.cols(),
            q0.n()
        )));
    }
    if !a_cl.is_finite() {
        return Err(Error::NonFinite("closed-loop matrix".into()));
    }
    let abscissa = max_real_eigenvalue(a_cl)?;
    if !(abscissa < HURWITZ_MARGIN) {
        return Err(Error::NotHurwitz(format!("spectral abscissa {abscissa:e}")));
    }
    let (q_lo, _) = spectral_range(q0)?;
    if q_lo <= 0.0 {
        return Err(Error::Invalid(format!(
            "Q₀ must be positive definite (min eigenvalue {q_lo:e})"
        )));
    }

    let at = a_cl.transpose();
    let eye = Matrix::identity(n);
    let op = &kron(&eye, &at) + &kron(&at, &eye);
    let rhs: Vec<f64> = vec(q0.as_matrix()).iter().map(|v| -v).collect();
    let p = SymMatrix::symmetrize(&unvec(&solve_linear(&op, &rhs)?, n, n)?);
    let (p_lo, _) = spectral_range(&p)?;
    if p_lo <= 0.0 {
        return Err(Error::NotHurwitz(format!(
            "Lyapunov solution is indefinite (min eigenvalue {p_lo:e})"
        )));
    }
    Ok(p)
}

/// `‖AᵀP + PA + Q‖_max`.
pub fn lyapunov_residual(a: &Matrix, p: &SymMatrix, q: &SymMatrix) -> f64 {
    let pm = p.as_matrix();
    let r = &(&a.transpose().matmul(pm) + &pm.matmul(a)) + q.as_matrix();
    r.max_abs()
}

/// Everything produced while deriving the perceptron's starting point.
#[derive(Debug, Clone, Serialize)]
pub struct Initialization {
    pub model: LinearModel,
    pub k: Matrix,
    pub a_cl: Matrix,
    pub p0: SymMatrix,
    pub q0: SymMatrix,
    /// Whether projecting onto the constraint set altered `(P₀, Q₀)`.
    pub clamped: bool,
    #[serde(skip)]
    pub theta_init: LyapParam,
}

/// Runs identification, placement and the Lyapunov solve, then moves the
/// result into the constraint set.
pub fn initialize(
    ds: &ControlDataset,
    poles: Option<&[f64]>,
    bounds: SpectralBounds,
) -> Result<Initialization> {
    initialize_from(identify(ds)?, poles, bounds)
}

/// [`initialize`] for an already identified model.
pub fn initialize_from(
    model: LinearModel,
    poles: Option<&[f64]>,
    bounds: SpectralBounds,
) -> Result<Initialization> {
    let k = match poles {
        Some(p) => stabilize_with(&model, p)?,
        None => stabilize(&model)?,
    };
    let a_cl = model.closed_loop(&k)?;
    let q0 = SymMatrix::identity(model.n());
    let p0 = init_lyapunov(&a_cl, &q0)?;
    let (theta_init, clamped) = into_bounds(&p0, &q0, bounds)?;
    Ok(Initialization {
        model,
        k,
        a_cl,
        p0,
        q0,
        clamped,
        theta_init,
    })
}

/// Packs `(P, Q)`, projecting onto the constraint set when they fall outside;
/// the flag reports whether projection was needed.
pub fn into_bounds(p: &SymMatrix, q: &SymMatrix, bounds: SpectralBounds) -> Result<(LyapParam, bool)> {
    match pack(p, q, bounds) {
        Ok(lp) => Ok((lp, false)),
        Err(Error::Bounds(_)) => {
            let mut raw = vec(p.as_matrix());
            raw.extend(vec(q.as_matrix()));
            Ok((project(&raw, p.n(), bounds)?, true))
        }
        Err(e) => Err(e),
    }
}
