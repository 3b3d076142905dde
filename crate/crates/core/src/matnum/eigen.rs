use crate::error::{Error, Result};

use super::matrix::{Matrix, SymMatrix};

/// Sweep cap for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 100;

/// Off-diagonal Frobenius norm, relative to ‖S‖_F, at which Jacobi stops.
pub const OFF_DIAGONAL_TOLERANCE: f64 = 1e-12;

/// Eigen-decomposition S = U·diag(λ)·Uᵀ of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order and column `i` of `eigvecs`
/// is the unit eigenvector for `eigvals[i]`.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub eigvals: Vec<f64>,
    pub eigvecs: Matrix,
}

impl EigenDecomp {
    pub fn min(&self) -> f64 {
        *self.eigvals.last().expect("non-empty spectrum")
    }

    pub fn max(&self) -> f64 {
        self.eigvals[0]
    }

    /// U·diag(f(λ))·Uᵀ, symmetrized.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.eigvals.len();
        let mut out = Matrix::zeros(n, n);
        for (k, lam) in self.eigvals.iter().enumerate() {
            let w = f(*lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let ui = self.eigvecs[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += ui * self.eigvecs[(j, k)];
                }
            }
        }
        SymMatrix::symmetrize(&out)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|l| l)
    }
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenDecomp> {
    let n = s.n();
    let mut a = s.as_matrix().clone();
    let mut v = Matrix::identity(n);
    let threshold = OFF_DIAGONAL_TOLERANCE * a.frobenius();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut v, p, q, c, sn);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > threshold {
        return Err(Error::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigvals = order.iter().map(|&k| a[(k, k)]).collect();
    let mut eigvecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            eigvecs[(i, dst)] = v[(i, src)];
        }
    }
    Ok(EigenDecomp { eigvals, eigvecs })
}

fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    // exact zero for the annihilated pair keeps the sweep count honest
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Frobenius-nearest symmetric matrix whose spectrum lies in `[lo, hi]`.
///
/// With `lo = 0` and `hi = ∞` this is the projection onto the PSD cone.
pub fn spectral_clamp(s: &SymMatrix, lo: f64, hi: f64) -> Result<SymMatrix> {
    if lo > hi || lo.is_nan() || hi.is_nan() {
        return Err(Error::Invalid(format!("empty spectral interval [{lo}, {hi}]")));
    }
    let eig = sym_eig(s)?;
    Ok(eig.map(|l| l.clamp(lo, hi)))
}

/// Smallest and largest eigenvalue.
pub fn spectral_range(s: &SymMatrix) -> Result<(f64, f64)> {
    let eig = sym_eig(s)?;
    Ok((eig.min(), eig.max()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matnum::tests_support::random_sym;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256StarStar;

    fn sym(rows: &[Vec<f64>]) -> SymMatrix {
        SymMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn orthogonality_error(u: &Matrix) -> f64 {
        let n = u.rows();
        (&(&u.transpose() * u) - &Matrix::identity(n)).max_abs()
    }

    #[test]
    fn diagonal_input() {
        let e = sym_eig(&SymMatrix::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(e.eigvals, vec![3.0, 1.0]);
        assert_eq!(e.eigvecs[(0, 0)].abs(), 0.0);
        assert_eq!(e.eigvecs[(1, 0)].abs(), 1.0);
    }

    #[test]
    fn two_by_two_hand_solved() {
        let e = sym_eig(&sym(&[vec![2.0, 1.0], vec![1.0, 2.0]])).unwrap();
        assert!((e.eigvals[0] - 3.0).abs() < 1e-14);
        assert!((e.eigvals[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // column signs are arbitrary
        assert!((e.eigvecs[(0, 0)].abs() - r).abs() < 1e-14);
        assert!((e.eigvecs[(0, 0)] - e.eigvecs[(1, 0)]).abs() < 1e-14);
        assert!((e.eigvecs[(0, 1)] + e.eigvecs[(1, 1)]).abs() < 1e-14);
    }

    #[test]
    fn random_reconstruction_and_trace() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(11);
        for n in 1..=8 {
            for _ in 0..20 {
                let s = random_sym(&mut rng, n, 5.0);
                let e = sym_eig(&s).unwrap();
                let scale = 1.0 + s.as_matrix().max_abs();
                let recon = (e.reconstruct().as_matrix() - s.as_matrix()).max_abs();
                assert!(recon <= 1e-8 * scale, "reconstruction {recon}");
                assert!(orthogonality_error(&e.eigvecs) <= 1e-9);
                let tr: f64 = e.eigvals.iter().sum();
                assert!((tr - s.as_matrix().trace()).abs() <= 1e-8 * scale);
                assert!(e.eigvals.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }

    #[test]
    fn zero_and_repeated_spectrum() {
        let e = sym_eig(&SymMatrix::diag(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(e.eigvals, vec![0.0; 3]);
        let e = sym_eig(&SymMatrix::identity(4).scale(2.0)).unwrap();
        assert!(e.eigvals.iter().all(|l| (*l - 2.0).abs() < 1e-15));
    }

    #[test]
    fn clamp_examples() {
        let c = spectral_clamp(&SymMatrix::diag(&[1.0, -2.0]), 0.0, f64::INFINITY).unwrap();
        assert!((c.as_matrix() - SymMatrix::diag(&[1.0, 0.0]).as_matrix()).max_abs() < 1e-15);

        let psd = sym(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let c = spectral_clamp(&psd, 0.0, f64::INFINITY).unwrap();
        assert!((c.as_matrix() - psd.as_matrix()).max_abs() < 1e-14);

        assert!(spectral_clamp(&psd, 2.0, 1.0).is_err());
    }

    #[test]
    fn clamp_is_idempotent_and_psd() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        for n in 1..=5 {
            for _ in 0..30 {
                let s = random_sym(&mut rng, n, 3.0);
                let once = spectral_clamp(&s, 0.0, f64::INFINITY).unwrap();
                let twice = spectral_clamp(&once, 0.0, f64::INFINITY).unwrap();
                assert!((once.as_matrix() - twice.as_matrix()).max_abs() <= 1e-9);
                assert!(spectral_range(&once).unwrap().0 >= -1e-9);

                let boxed = spectral_clamp(&s, 0.5, 2.0).unwrap();
                let (lo, hi) = spectral_range(&boxed).unwrap();
                assert!(lo >= 0.5 - 1e-9 && hi <= 2.0 + 1e-9);
            }
        }
    }
}
