use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Relative pivot size below which a matrix is treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Solves the square system `a·x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if !a.is_square() || b.len() != n {
        return Err(Error::Dimension(format!(
            "solve of {}x{} system with rhs of length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(Error::Singular("zero matrix".into()));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();

    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs()))
            .expect("non-empty pivot range");
        if m[(pivot_row, k)].abs() < PIVOT_TOLERANCE * scale {
            return Err(Error::Singular(format!(
                "pivot {:e} in column {k} (scale {scale:e})",
                m[(pivot_row, k)]
            )));
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = m[(k, j)];
                m[(k, j)] = m[(pivot_row, j)];
                m[(pivot_row, j)] = tmp;
            }
            x.swap(k, pivot_row);
        }
        let pivot = m[(k, k)];
        for i in (k + 1)..n {
            let factor = m[(i, k)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in k..n {
                m[(i, j)] -= factor * m[(k, j)];
            }
            x[i] -= factor * x[k];
        }
    }
    for k in (0..n).rev() {
        let tail: f64 = ((k + 1)..n).map(|j| m[(k, j)] * x[j]).sum();
        x[k] = (x[k] - tail) / m[(k, k)];
    }
    Ok(x)
}

/// Least-squares solution `x = argmin ‖a·x − b‖_F` for a tall, full-column-rank `a`,
/// computed with Householder QR.
pub fn lstsq(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let (rows, cols) = a.shape();
    if b.rows() != rows {
        return Err(Error::Dimension(format!(
            "lstsq with {rows} equations but rhs of {} rows",
            b.rows()
        )));
    }
    if rows < cols {
        return Err(Error::Singular(format!(
            "{rows} equations for {cols} unknowns"
        )));
    }
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(Error::Singular("zero design matrix".into()));
    }
    let mut r = a.clone();
    let mut qtb = b.clone();
    let nrhs = b.cols();

    for k in 0..cols {
        let col_norm = (k..rows).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        if col_norm < PIVOT_TOLERANCE * scale {
            return Err(Error::Singular(format!("rank deficient at column {k}")));
        }
        let alpha = if r[(k, k)] > 0.0 { -col_norm } else { col_norm };
        let mut v: Vec<f64> = (k..rows).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..cols {
                let s: f64 = v.iter().enumerate().map(|(t, vi)| vi * r[(k + t, j)]).sum();
                let f = 2.0 * s / vnorm2;
                for (t, vi) in v.iter().enumerate() {
                    r[(k + t, j)] -= f * vi;
                }
            }
            for j in 0..nrhs {
                let s: f64 = v.iter().enumerate().map(|(t, vi)| vi * qtb[(k + t, j)]).sum();
                let f = 2.0 * s / vnorm2;
                for (t, vi) in v.iter().enumerate() {
                    qtb[(k + t, j)] -= f * vi;
                }
            }
        }
        if r[(k, k)].abs() < PIVOT_TOLERANCE * scale {
            return Err(Error::Singular(format!("rank deficient at column {k}")));
        }
    }

    let mut x = Matrix::zeros(cols, nrhs);
    for j in 0..nrhs {
        for k in (0..cols).rev() {
            let tail: f64 = ((k + 1)..cols).map(|t| r[(k, t)] * x[(t, j)]).sum();
            x[(k, j)] = (qtb[(k, j)] - tail) / r[(k, k)];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    #[test]
    fn identity_and_diagonal_solves() {
        let b = vec![1.5, -2.0, 3.0];
        assert_eq!(solve_linear(&Matrix::identity(3), &b).unwrap(), b);
        let a = Matrix::diag(&[2.0, 4.0]);
        assert_eq!(solve_linear(&a, &[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn singular_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(solve_linear(&a, &[1.0, 1.0]), Err(Error::Singular(_))));
        assert!(solve_linear(&Matrix::zeros(2, 2), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn random_solve_residual() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        for n in 1..=10 {
            let data = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = Matrix::from_row_major(n, n, data).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = solve_linear(&a, &b).unwrap();
            let r: f64 = a
                .matvec(&x)
                .iter()
                .zip(&b)
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                .sqrt();
            let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r <= 1e-8 * (1.0 + bn), "n={n} residual {r}");
        }
    }

    #[test]
    fn lstsq_recovers_generator() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(4);
        let a = Matrix::from_row_major(40, 4, (0..160).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        let x0 = Matrix::from_row_major(4, 3, (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .unwrap();
        let b = &a * &x0;
        let x = lstsq(&a, &b).unwrap();
        assert!((&x - &x0).max_abs() <= 1e-8);
    }

    #[test]
    fn lstsq_normal_equation_stationarity() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(8);
        let a = Matrix::from_row_major(30, 3, (0..90).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let b = Matrix::from_row_major(30, 2, (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let x = lstsq(&a, &b).unwrap();
        // aᵀ(a·x − b) = 0 at the minimizer
        let grad = &a.transpose() * &(&(&a * &x) - &b);
        assert!(grad.max_abs() <= 1e-7);
    }

    #[test]
    fn lstsq_rank_deficient() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let b = Matrix::column(&[1.0, 2.0, 3.0]);
        assert!(matches!(lstsq(&a, &b), Err(Error::Singular(_))));
    }
}
