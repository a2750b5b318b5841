//! Small dense real linear-algebra helpers built on nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A rotation of modes `(mode, mode + 1)` whose 2x2 block is `[[c, -s], [s, c]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacentRotation {
    pub mode: usize,
    pub c: f64,
    pub s: f64,
}

pub fn check_symmetric(h: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !h.is_square() {
        return Err(Error::input(format!(
            "matrix is {}x{}, expected square",
            h.nrows(),
            h.ncols()
        )));
    }
    for i in 0..h.nrows() {
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > tol {
                return Err(Error::input(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    h[(i, j)],
                    h[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Eigenvalues ascending with matching eigenvector columns.
pub fn sorted_eigen(h: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = h.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(h.nrows(), h.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn sorted_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Largest `|Q Q^T - I|` entry.
pub fn row_orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let gram = q * q.transpose();
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Factors an orthogonal `v` as `R_1 R_2 ... R_K diag(±1)` with adjacent
/// rotations, returned in the order `R_1, ..., R_K`.
pub fn decompose_orthogonal(v: &DMatrix<f64>) -> (Vec<AdjacentRotation>, Vec<f64>) {
    let n = v.nrows();
    let mut a = v.clone();
    let mut rotations = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for col in 0..n.saturating_sub(1) {
        for row in (col + 1..n).rev() {
            let (x, y) = (a[(row - 1, col)], a[(row, col)]);
            let r = x.hypot(y);
            let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (x / r, y / r) };
            // rows (row-1, row) <- R^T rows
            for k in 0..n {
                let (p, q) = (a[(row - 1, k)], a[(row, k)]);
                a[(row - 1, k)] = c * p + s * q;
                a[(row, k)] = -s * p + c * q;
            }
            rotations.push(AdjacentRotation { mode: row - 1, c, s });
        }
    }
    let signs = (0..n).map(|i| a[(i, i)].signum()).collect();
    (rotations, signs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        m.qr().q()
    }

    #[test]
    fn orthogonal_factorization_reconstructs() {
        for n in 1..7 {
            let v = random_orthogonal(n, n as u64);
            let (rots, signs) = decompose_orthogonal(&v);
            assert_eq!(rots.len(), n * (n - 1) / 2);
            let mut prod = DMatrix::<f64>::identity(n, n);
            for r in &rots {
                let mut g = DMatrix::<f64>::identity(n, n);
                g[(r.mode, r.mode)] = r.c;
                g[(r.mode, r.mode + 1)] = -r.s;
                g[(r.mode + 1, r.mode)] = r.s;
                g[(r.mode + 1, r.mode + 1)] = r.c;
                prod *= g;
            }
            prod *= DMatrix::from_diagonal(&nalgebra::DVector::from_vec(signs));
            assert!((prod - v).amax() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
        assert!(check_symmetric(&m, 1e-12).is_err());
    }
}
