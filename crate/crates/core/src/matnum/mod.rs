//! Dense matrix kernels: Kronecker products, vec/invec, symmetric
//! eigen-decomposition, spectral projection and linear solves.

mod eigen;
mod matrix;
mod solve;

pub use eigen::{
    spectral_clamp, spectral_range, sym_eig, EigenDecomp, MAX_SWEEPS, OFF_DIAGONAL_TOLERANCE,
};
pub use matrix::{distance, dot, norm, Matrix, SymMatrix, SYMMETRY_TOLERANCE};
pub use solve::{lstsq, solve_linear, PIVOT_TOLERANCE};

use crate::error::{Error, Result};

/// Kronecker product: the block matrix `[a_ij · b]`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two vectors, `a ⊗ b`.
pub fn kron_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x * y))
        .collect()
}

/// Stacks the columns of `m` into one vector.
pub fn vec(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`] for an `rows × cols` matrix.
pub fn unvec(z: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if z.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            z.len()
        )));
    }
    let mut m = Matrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = z[j * rows + i];
        }
    }
    Ok(m)
}

fn invec_block(z: &[f64], n: usize, block: usize) -> Result<SymMatrix> {
    let nn = n * n;
    if n == 0 || z.len() != 2 * nn {
        return Err(Error::Dimension(format!(
            "stacked pair of {n}x{n} matrices needs {} entries, got {}",
            2 * nn,
            z.len()
        )));
    }
    SymMatrix::new(unvec(&z[block * nn..(block + 1) * nn], n, n)?)
}

/// First symmetric block of `z = [vec(A₁); vec(A₂)]`.
pub fn invec1(z: &[f64], n: usize) -> Result<SymMatrix> {
    invec_block(z, n, 0)
}

/// Second symmetric block of `z = [vec(A₁); vec(A₂)]`.
pub fn invec2(z: &[f64], n: usize) -> Result<SymMatrix> {
    invec_block(z, n, 1)
}

/// Largest real part over the (possibly complex) spectrum of a square matrix.
pub fn max_real_eigenvalue(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension("spectrum of a non-square matrix".into()));
    }
    let n = m.rows();
    let na = nalgebra::DMatrix::from_row_slice(n, n, m.as_slice());
    Ok(na
        .complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use rand::Rng;

    pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
        Matrix::from_row_major(rows, cols, data).unwrap()
    }

    pub fn random_sym(rng: &mut impl Rng, n: usize, scale: f64) -> SymMatrix {
        SymMatrix::symmetrize(&random_matrix(rng, n, n, scale))
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::*;
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256StarStar;

    #[test]
    fn kron_identity() {
        let k = kron(&Matrix::identity(2), &Matrix::identity(2));
        assert_eq!(k, Matrix::identity(4));
    }

    #[test]
    fn kron_expansion() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let expected = vec![
            vec![0.0, 1.0, 0.0, 2.0],
            vec![1.0, 0.0, 2.0, 0.0],
            vec![0.0, 3.0, 0.0, 4.0],
            vec![3.0, 0.0, 4.0, 0.0],
        ];
        assert_eq!(kron(&a, &b).to_rows(), expected);
    }

    #[test]
    fn vec_of_triple_product() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(21);
        for _ in 0..10 {
            let x = random_matrix(&mut rng, 2, 3, 2.0);
            let y = random_matrix(&mut rng, 3, 2, 2.0);
            let z = random_matrix(&mut rng, 2, 2, 2.0);
            let lhs = vec(&(&(&x * &y) * &z));
            let rhs = kron(&z.transpose(), &x).matvec(&vec(&y));
            for (l, r) in lhs.iter().zip(&rhs) {
                assert!((l - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kron_vec_matches_matrix_kron() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 4.0];
        let m = kron(&Matrix::column(&a), &Matrix::column(&b));
        assert_eq!(kron_vec(&a, &b), m.col_vec(0));
    }

    #[test]
    fn vec_and_invec_examples() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(vec(&m), vec![1.0, 3.0, 2.0, 4.0]);

        let mut z = vec(&Matrix::identity(2));
        z.extend(vec(&Matrix::identity(2).scale(2.0)));
        assert_eq!(invec1(&z, 2).unwrap(), SymMatrix::identity(2));
        assert_eq!(invec2(&z, 2).unwrap(), SymMatrix::identity(2).scale(2.0));
    }

    #[test]
    fn invec_errors() {
        assert!(matches!(invec1(&[1.0; 7], 2), Err(Error::Dimension(_))));
        let mut z = vec![1.0, 0.5, 0.0, 1.0];
        z.extend([1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(invec1(&z, 2), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn hurwitz_spectrum() {
        let rot = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(max_real_eigenvalue(&rot).unwrap().abs() < 1e-12);
        let damped = Matrix::from_rows(&[vec![-1.0, 5.0], vec![0.0, -2.0]]).unwrap();
        assert!((max_real_eigenvalue(&damped).unwrap() + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kron_is_bilinear(
            alpha in -5.0f64..5.0,
            a in proptest::collection::vec(-3.0f64..3.0, 6),
            b in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let a = Matrix::from_row_major(2, 3, a).unwrap();
            let b = Matrix::from_row_major(2, 2, b).unwrap();
            let lhs = kron(&a.scale(alpha), &b);
            let rhs = kron(&a, &b).scale(alpha);
            prop_assert!((&lhs - &rhs).max_abs() <= 1e-12);
        }

        #[test]
        fn invec_round_trip(
            p in proptest::collection::vec(-3.0f64..3.0, 9),
            q in proptest::collection::vec(-3.0f64..3.0, 9),
        ) {
            let p = SymMatrix::symmetrize(&Matrix::from_row_major(3, 3, p).unwrap());
            let q = SymMatrix::symmetrize(&Matrix::from_row_major(3, 3, q).unwrap());
            let mut z = vec(p.as_matrix());
            z.extend(vec(q.as_matrix()));
            prop_assert_eq!(invec1(&z, 3).unwrap(), p);
            prop_assert_eq!(invec2(&z, 3).unwrap(), q);
        }
    }
}
