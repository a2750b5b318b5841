//! Free-fermion operations under Jordan-Wigner ordering.
//!
//! The basis state with occupied sites `i_1 < i_2 < ... < i_M` is
//! `c†_{i_1} c†_{i_2} ... c†_{i_M} |vac>`, so a hopping `c†_a c_b` picks up
//! `(-1)^(occupied sites strictly between a and b)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::StateVector;
use crate::basis::fixed_weight;
use crate::error::{Error, Result};
use crate::linalg::{self, AdjacentRotation};

const SYMMETRY_TOL: f64 = 1e-12;

#[inline]
fn between_mask(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    ((1usize << hi) - 1) & !((1usize << (lo + 1)) - 1)
}

/// `H |psi>` for `H = sum_{ab} h_ab c†_a c_b`.
pub fn apply_one_body(state: &StateVector, h: &DMatrix<f64>) -> Result<StateVector> {
    let n = state.n_qubits();
    if h.nrows() != n || h.ncols() != n {
        return Err(Error::input(format!(
            "one-body matrix is {}x{}, state has {n} modes",
            h.nrows(),
            h.ncols()
        )));
    }
    let terms: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|a| (0..n).map(move |b| (a, b)))
        .filter_map(|(a, b)| (h[(a, b)] != 0.0).then(|| (a, b, h[(a, b)])))
        .collect();
    let amps = state.amplitudes();
    let mut out = vec![Complex64::new(0.0, 0.0); amps.len()];
    for (x, &amp) in amps.iter().enumerate() {
        if amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        for &(a, b, v) in &terms {
            if a == b {
                if x >> a & 1 == 1 {
                    out[x] += amp * v;
                }
                continue;
            }
            if x >> b & 1 == 0 || x >> a & 1 == 1 {
                continue;
            }
            let y = x ^ (1 << a) ^ (1 << b);
            let sign = if (x & between_mask(a, b)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            out[y] += amp * (sign * v);
        }
    }
    StateVector::from_amplitudes(n, out)
}

/// Slater determinant `prod_q (sum_i Q[q,i] c†_i) |vac>` for the rows of `orbitals`.
///
/// The amplitude on occupied set `T` is `det(Q[:, T])`.
pub fn slater_state(orbitals: &DMatrix<f64>) -> Result<StateVector> {
    let (m, n) = orbitals.shape();
    if m > n {
        return Err(Error::input(format!("{m} orbitals on {n} modes")));
    }
    let mut state = StateVector::vacuum(n)?;
    let amps = state.amplitudes_mut();
    amps[0] = Complex64::new(0.0, 0.0);
    let mut sub = DMatrix::<f64>::zeros(m, m);
    for bits in fixed_weight(n, m) {
        let mut col = 0;
        for site in 0..n {
            if bits >> site & 1 == 1 {
                sub.set_column(col, &orbitals.column(site));
                col += 1;
            }
        }
        let det = if m == 0 { 1.0 } else { sub.clone().determinant() };
        amps[bits as usize] = Complex64::new(det, 0.0);
    }
    Ok(state)
}

/// Precomputed exact propagator `exp(-i beta sum_ab h_ab c†_a c_b)`.
///
/// `h = V diag(eps) V^T`; `V` is factored into adjacent mode rotations so the
/// basis change acts on the statevector without Jordan-Wigner strings.
#[derive(Debug, Clone)]
pub struct QuadraticPropagator {
    n_modes: usize,
    rotations: Vec<AdjacentRotation>,
    /// Summed single-particle energy of each eigenmode occupation integer.
    mode_energy: Vec<f64>,
}

impl QuadraticPropagator {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        linalg::check_symmetric(h, SYMMETRY_TOL)?;
        let n = h.nrows();
        if n > super::MAX_QUBITS {
            return Err(Error::Capacity {
                what: "modes".into(),
                actual: n as u128,
                limit: super::MAX_QUBITS as u128,
            });
        }
        let (eps, v) = linalg::sorted_eigen(h);
        // The trailing diag(±1) of V conjugates the diagonal phase to itself.
        let (rotations, _signs) = linalg::decompose_orthogonal(&v);
        let mut mode_energy = vec![0.0; 1 << n];
        for k in 1..mode_energy.len() {
            mode_energy[k] = mode_energy[k & (k - 1)] + eps[k.trailing_zeros() as usize];
        }
        Ok(QuadraticPropagator {
            n_modes: n,
            rotations,
            mode_energy,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Maps site amplitudes into eigenmode amplitudes (`U_V†`).
    fn to_modes(&self, state: &mut StateVector) -> Result<()> {
        for r in &self.rotations {
            // U_{R^T}: psi_a' = c psi_a + s psi_b
            state.rotate_exchange(r.mode, r.mode + 1, r.c, r.s)?;
        }
        Ok(())
    }

    fn to_sites(&self, state: &mut StateVector) -> Result<()> {
        for r in self.rotations.iter().rev() {
            state.rotate_exchange(r.mode, r.mode + 1, r.c, -r.s)?;
        }
        Ok(())
    }

    pub fn apply(&self, state: &mut StateVector, beta: f64) -> Result<()> {
        if state.n_qubits() != self.n_modes {
            return Err(Error::input(format!(
                "propagator on {} modes applied to {} qubits",
                self.n_modes,
                state.n_qubits()
            )));
        }
        if beta == 0.0 {
            return Ok(());
        }
        self.to_modes(state)?;
        state
            .amplitudes_mut()
            .iter_mut()
            .zip(&self.mode_energy)
            .for_each(|(a, &e)| *a *= Complex64::from_polar(1.0, -beta * e));
        self.to_sites(state)
    }
}

/// Exact `exp(-i beta H)` for a real symmetric single-particle `h`.
pub fn apply_quadratic_exponential(state: &mut StateVector, h: &DMatrix<f64>, beta: f64) -> Result<()> {
    QuadraticPropagator::new(h)?.apply(state, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense many-body matrix of H built from explicit creation/annihilation
    /// actions; independent of `apply_one_body`'s sign shortcut.
    fn many_body_matrix(h: &DMatrix<f64>) -> DMatrix<f64> {
        let n = h.nrows();
        let dim = 1usize << n;
        let annihilate = |x: usize, i: usize| -> Option<(usize, f64)> {
            if x >> i & 1 == 0 {
                return None;
            }
            let sign = if (x & ((1 << i) - 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            Some((x ^ (1 << i), sign))
        };
        let create = |x: usize, i: usize| -> Option<(usize, f64)> {
            if x >> i & 1 == 1 {
                return None;
            }
            let sign = if (x & ((1 << i) - 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            Some((x | (1 << i), sign))
        };
        let mut m = DMatrix::zeros(dim, dim);
        for x in 0..dim {
            for a in 0..n {
                for b in 0..n {
                    if h[(a, b)] == 0.0 {
                        continue;
                    }
                    if let Some((y, s1)) = annihilate(x, b) {
                        if let Some((z, s2)) = create(y, a) {
                            m[(z, x)] += h[(a, b)] * s1 * s2;
                        }
                    }
                }
            }
        }
        m
    }

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..1 << n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut s = StateVector::from_amplitudes(n, amps).unwrap();
        s.normalize();
        s
    }

    /// Taylor series of exp(-i beta H) applied through repeated H|v>, split
    /// into steps small enough that each series converges below 1e-16.
    pub(crate) fn taylor_oracle(state: &StateVector, h: &DMatrix<f64>, beta: f64) -> StateVector {
        let norm_bound: f64 = h.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
        let steps = ((beta.abs() * norm_bound) / 0.5).ceil().max(1.0) as usize;
        let dt = beta / steps as f64;
        let mut cur = state.clone();
        for _ in 0..steps {
            let mut term = cur.clone();
            let mut acc = cur.clone();
            for k in 1..60 {
                let hv = apply_one_body(&term, h).unwrap();
                let factor = Complex64::new(0.0, -dt) / k as f64;
                let next: Vec<Complex64> = hv.amplitudes().iter().map(|a| a * factor).collect();
                term = StateVector::from_amplitudes(cur.n_qubits(), next).unwrap();
                for (a, t) in acc.amplitudes_mut().iter_mut().zip(term.amplitudes()) {
                    *a += t;
                }
                if term.norm_sqr().sqrt() < 1e-17 {
                    break;
                }
            }
            cur = acc;
        }
        cur
    }

    #[test]
    fn one_body_matches_dense_matrix() {
        let h = random_symmetric(5, 3);
        let m = many_body_matrix(&h);
        let s = random_state(5, 4);
        let out = apply_one_body(&s, &h).unwrap();
        for z in 0..32 {
            let expect: Complex64 = (0..32).map(|x| s.amplitudes()[x] * m[(z, x)]).sum();
            assert!((out.amplitudes()[z] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn quadratic_exponential_matches_taylor() {
        for (n, seed) in [(3, 1u64), (5, 2), (8, 3)] {
            let h = random_symmetric(n, seed);
            let s = random_state(n, seed + 10);
            for beta in [0.3, -1.7, 2.9] {
                let mut a = s.clone();
                apply_quadratic_exponential(&mut a, &h, beta).unwrap();
                let b = taylor_oracle(&s, &h, beta);
                assert!(a.max_distance(&b) < 1e-10, "n={n} beta={beta}: {}", a.max_distance(&b));
            }
        }
    }

    #[test]
    fn zero_beta_is_identity() {
        let h = random_symmetric(4, 5);
        let s = random_state(4, 6);
        let mut a = s.clone();
        apply_quadratic_exponential(&mut a, &h, 0.0).unwrap();
        assert_eq!(a, s);
    }

    #[test]
    fn single_adjacent_edge_equals_xy_pair() {
        // h = -t (|1><2| + |2><1|) on modes 1,2 of 5
        let t = 0.8;
        let beta = 0.61;
        let mut h = DMatrix::zeros(5, 5);
        h[(1, 2)] = -t;
        h[(2, 1)] = -t;
        let s = random_state(5, 7);
        let mut a = s.clone();
        apply_quadratic_exponential(&mut a, &h, beta).unwrap();
        let mut b = s.clone();
        b.apply_xy_pair(1, 2, beta * t).unwrap();
        assert!(a.max_distance(&b) < 1e-9);
    }

    #[test]
    fn asymmetric_h_is_rejected() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        let mut s = StateVector::vacuum(2).unwrap();
        assert!(matches!(
            apply_quadratic_exponential(&mut s, &h, 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn slater_of_unit_vectors_is_basis_state() {
        let mut q = DMatrix::zeros(2, 4);
        q[(0, 1)] = 1.0;
        q[(1, 3)] = 1.0;
        let s = slater_state(&q).unwrap();
        assert!((s.amplitude(0b1010) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slater_state_is_eigenstate_of_its_hamiltonian() {
        let h = random_symmetric(6, 11);
        let (eps, v) = crate::linalg::sorted_eigen(&h);
        let q = v.columns(0, 3).transpose();
        let s = slater_state(&q).unwrap();
        let hs = apply_one_body(&s, &h).unwrap();
        let e0: f64 = eps[..3].iter().sum();
        for (a, b) in hs.amplitudes().iter().zip(s.amplitudes()) {
            assert!((a - b * e0).norm() < 1e-10);
        }
    }
}
