//! Dense statevector over occupation-number bitstrings.
//!
//! Amplitude `k` belongs to the occupation integer `k` (see [`crate::basis`]),
//! so qubit `q` is site `q + 1`. All kernels are sequential and deterministic.

pub mod fermion;
pub mod noise;

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::basis::{self, Bits};
use crate::error::{Error, Result};

pub use fermion::{apply_one_body, apply_quadratic_exponential, slater_state, QuadraticPropagator};
pub use noise::{run_noisy_trajectory, NoiseModel, Pauli, TrajectoryRunner};

/// 2^26 amplitudes is 1 GiB; anything larger is refused.
pub const MAX_QUBITS: usize = 26;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub type Matrix2 = [[Complex64; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

/// Inserts a zero bit at position `pos` of `k`.
#[inline(always)]
fn insert_zero(k: usize, pos: usize) -> usize {
    let low = k & ((1 << pos) - 1);
    ((k >> pos) << (pos + 1)) | low
}

impl StateVector {
    /// `|0...0>`, the fermionic vacuum.
    pub fn vacuum(n_qubits: usize) -> Result<Self> {
        Self::basis_state(n_qubits, 0)
    }

    pub fn basis_state(n_qubits: usize, bits: Bits) -> Result<Self> {
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity {
                what: "statevector qubits".into(),
                actual: n_qubits as u128,
                limit: MAX_QUBITS as u128,
            });
        }
        if n_qubits < 64 && bits >> n_qubits != 0 {
            return Err(Error::input(format!(
                "basis state {bits:#b} does not fit in {n_qubits} qubits"
            )));
        }
        let mut amps = vec![ZERO; 1 << n_qubits];
        amps[bits as usize] = ONE;
        Ok(StateVector { n_qubits, amps })
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex64>) -> Result<Self> {
        if n_qubits > MAX_QUBITS || amps.len() != 1 << n_qubits {
            return Err(Error::input(format!(
                "{} amplitudes do not describe {n_qubits} qubits",
                amps.len()
            )));
        }
        Ok(StateVector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn amplitude(&self, bits: Bits) -> Complex64 {
        self.amps[bits as usize]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let norm = self.norm_sqr().sqrt();
        if norm > 0.0 {
            self.amps.iter_mut().for_each(|a| *a /= norm);
        }
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Max amplitude deviation after removing the best global phase.
    pub fn distance_up_to_phase(&self, other: &StateVector) -> f64 {
        let ov = self.inner(other);
        let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a * phase - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_distance(&self, other: &StateVector) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn check_qubit(&self, q: usize) -> Result<()> {
        if q >= self.n_qubits {
            return Err(Error::input(format!(
                "qubit {q} out of range for {} qubits",
                self.n_qubits
            )));
        }
        Ok(())
    }

    fn check_pair(&self, a: usize, b: usize) -> Result<()> {
        self.check_qubit(a)?;
        self.check_qubit(b)?;
        if a == b {
            return Err(Error::input(format!("two-qubit gate on repeated qubit {a}")));
        }
        Ok(())
    }

    /// Applies an arbitrary 2x2 unitary to qubit `q`.
    pub fn apply_matrix(&mut self, q: usize, m: &Matrix2) -> Result<()> {
        self.check_qubit(q)?;
        let bit = 1 << q;
        for k in 0..self.amps.len() / 2 {
            let i0 = insert_zero(k, q);
            let i1 = i0 | bit;
            let (a0, a1) = (self.amps[i0], self.amps[i1]);
            self.amps[i0] = m[0][0] * a0 + m[0][1] * a1;
            self.amps[i1] = m[1][0] * a0 + m[1][1] * a1;
        }
        Ok(())
    }

    /// Multiplies amplitudes with qubit `q` equal to 0 / 1 by `d0` / `d1`.
    pub fn apply_diagonal(&mut self, q: usize, d0: Complex64, d1: Complex64) -> Result<()> {
        self.check_qubit(q)?;
        let bit = 1 << q;
        if d0 == ONE {
            for (i, a) in self.amps.iter_mut().enumerate() {
                if i & bit != 0 {
                    *a *= d1;
                }
            }
        } else {
            for (i, a) in self.amps.iter_mut().enumerate() {
                *a *= if i & bit != 0 { d1 } else { d0 };
            }
        }
        Ok(())
    }

    pub fn apply_x(&mut self, q: usize) -> Result<()> {
        self.check_qubit(q)?;
        let bit = 1 << q;
        for k in 0..self.amps.len() / 2 {
            let i0 = insert_zero(k, q);
            self.amps.swap(i0, i0 | bit);
        }
        Ok(())
    }

    pub fn apply_y(&mut self, q: usize) -> Result<()> {
        self.check_qubit(q)?;
        let bit = 1 << q;
        for k in 0..self.amps.len() / 2 {
            let i0 = insert_zero(k, q);
            let i1 = i0 | bit;
            let (a0, a1) = (self.amps[i0], self.amps[i1]);
            self.amps[i0] = -I * a1;
            self.amps[i1] = I * a0;
        }
        Ok(())
    }

    pub fn apply_z(&mut self, q: usize) -> Result<()> {
        self.apply_diagonal(q, ONE, -ONE)
    }

    pub fn apply_h(&mut self, q: usize) -> Result<()> {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        self.apply_matrix(q, &[[h, h], [h, -h]])
    }

    pub fn apply_s(&mut self, q: usize) -> Result<()> {
        self.apply_diagonal(q, ONE, I)
    }

    pub fn apply_sdg(&mut self, q: usize) -> Result<()> {
        self.apply_diagonal(q, ONE, -I)
    }

    /// `exp(-i theta X / 2)`.
    pub fn apply_rx(&mut self, q: usize, theta: f64) -> Result<()> {
        let (s, c) = (theta / 2.0).sin_cos();
        let c = Complex64::new(c, 0.0);
        let ms = Complex64::new(0.0, -s);
        self.apply_matrix(q, &[[c, ms], [ms, c]])
    }

    /// `exp(-i theta Y / 2)`.
    pub fn apply_ry(&mut self, q: usize, theta: f64) -> Result<()> {
        let (s, c) = (theta / 2.0).sin_cos();
        let (c, s) = (Complex64::new(c, 0.0), Complex64::new(s, 0.0));
        self.apply_matrix(q, &[[c, -s], [s, c]])
    }

    /// `exp(-i theta Z / 2)`.
    pub fn apply_rz(&mut self, q: usize, theta: f64) -> Result<()> {
        let half = theta / 2.0;
        self.apply_diagonal(
            q,
            Complex64::from_polar(1.0, -half),
            Complex64::from_polar(1.0, half),
        )
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_pair(control, target)?;
        let (cb, tb) = (1 << control, 1 << target);
        let (lo, hi) = (control.min(target), control.max(target));
        for k in 0..self.amps.len() / 4 {
            let base = insert_zero(insert_zero(k, lo), hi) | cb;
            self.amps.swap(base, base | tb);
        }
        Ok(())
    }

    /// Visits each `(i, j)` with qubit `a` set in `i`, qubit `b` set in `j`,
    /// and all other bits equal: the single-excitation pairs on `(a, b)`.
    #[inline]
    fn for_each_exchange_pair(&mut self, a: usize, b: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
        let (lo, hi) = (a.min(b), a.max(b));
        let (ab, bb) = (1usize << a, 1usize << b);
        for k in 0..self.amps.len() / 4 {
            let base = insert_zero(insert_zero(k, lo), hi);
            let (i, j) = (base | ab, base | bb);
            // i != j, so the two borrows are disjoint
            let (x, y) = if i < j {
                let (left, right) = self.amps.split_at_mut(j);
                (&mut left[i], &mut right[0])
            } else {
                let (left, right) = self.amps.split_at_mut(i);
                (&mut right[0], &mut left[j])
            };
            f(x, y);
        }
    }

    /// `exp[i theta (X_a X_b + Y_a Y_b) / 2]`; `|00>` and `|11>` are untouched.
    pub fn apply_xy_pair(&mut self, a: usize, b: usize, theta: f64) -> Result<()> {
        self.check_pair(a, b)?;
        let (s, c) = theta.sin_cos();
        let is = Complex64::new(0.0, s);
        self.for_each_exchange_pair(a, b, |x, y| {
            let (u, v) = (*x, *y);
            *x = c * u + is * v;
            *y = is * u + c * v;
        });
        Ok(())
    }

    /// Real two-mode rotation implemented by the S/H/CNOT/Ry Givens circuit:
    /// `psi_a' = cos(t) psi_a + sin(t) psi_b`, `psi_b' = -sin(t) psi_a + cos(t) psi_b`,
    /// where `psi_a` is the amplitude with only `a` of the pair occupied.
    pub fn apply_givens(&mut self, a: usize, b: usize, theta: f64) -> Result<()> {
        let (s, c) = theta.sin_cos();
        self.rotate_exchange(a, b, c, s)
    }

    /// Same rotation as [`apply_givens`](Self::apply_givens) with explicit
    /// `(cos, sin)`.
    pub fn rotate_exchange(&mut self, a: usize, b: usize, c: f64, s: f64) -> Result<()> {
        self.check_pair(a, b)?;
        self.for_each_exchange_pair(a, b, |x, y| {
            let (u, v) = (*x, *y);
            *x = c * u + s * v;
            *y = -s * u + c * v;
        });
        Ok(())
    }

    /// Multiplies every amplitude `k` by `phases[k]`.
    pub fn apply_phase_table(&mut self, phases: &[Complex64]) -> Result<()> {
        if phases.len() != self.amps.len() {
            return Err(Error::input("phase table length does not match the state"));
        }
        self.amps.iter_mut().zip(phases).for_each(|(a, p)| *a *= p);
        Ok(())
    }

    /// `exp(-i gamma E(k))` on every amplitude, from a table of diagonal values.
    pub fn apply_diagonal_evolution(&mut self, energies: &[f64], gamma: f64) -> Result<()> {
        if energies.len() != self.amps.len() {
            return Err(Error::input("energy table length does not match the state"));
        }
        self.amps
            .iter_mut()
            .zip(energies)
            .for_each(|(a, &e)| *a *= Complex64::from_polar(1.0, -gamma * e));
        Ok(())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<psi| diag(cost) |psi>` for a diagonal observable given per basis state.
    pub fn expectation_diagonal(&self, cost: impl Fn(Bits) -> f64) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .filter(|(_, a)| a.norm_sqr() > 0.0)
            .map(|(k, a)| a.norm_sqr() * cost(k as Bits))
            .sum()
    }

    /// `P_M` for `M = 0..=n`: probability mass at each Hamming weight.
    pub fn weight_distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_qubits + 1];
        for (k, a) in self.amps.iter().enumerate() {
            out[k.count_ones() as usize] += a.norm_sqr();
        }
        out
    }

    /// Probability mass outside Hamming weight `m`.
    pub fn leakage(&self, m: usize) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .filter(|(k, _)| k.count_ones() as usize != m)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// I.i.d. measurement outcomes in the computational basis.
    pub fn sample(&self, shots: u64, seed: u64) -> Counts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(shots, &mut rng)
    }

    pub fn sample_with<R: Rng>(&self, shots: u64, rng: &mut R) -> Counts {
        let mut cdf = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0;
        for a in &self.amps {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        let mut counts = Counts::new(self.n_qubits);
        if acc <= 0.0 {
            return counts;
        }
        for _ in 0..shots {
            let u = rng.gen::<f64>() * acc;
            let mut idx = cdf.partition_point(|&c| c <= u);
            // skip zero-probability tail entries hit by rounding
            while idx > 0 && (idx >= cdf.len() || self.amps[idx].norm_sqr() == 0.0) {
                idx -= 1;
            }
            counts.add(idx as Bits, 1);
        }
        counts
    }
}

/// Measurement histogram keyed by occupation integer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Counts {
    pub n_sites: usize,
    pub map: BTreeMap<Bits, u64>,
}

impl Counts {
    pub fn new(n_sites: usize) -> Self {
        Counts {
            n_sites,
            map: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, bits: Bits, count: u64) {
        *self.map.entry(bits).or_insert(0) += count;
    }

    pub fn merge(&mut self, other: &Counts) {
        for (&b, &c) in &other.map {
            self.add(b, c);
        }
    }

    pub fn total(&self) -> u64 {
        self.map.values().sum()
    }

    pub fn get(&self, bits: Bits) -> u64 {
        self.map.get(&bits).copied().unwrap_or(0)
    }

    /// Normalized `(bits, frequency)` pairs.
    pub fn frequencies(&self) -> Vec<(Bits, f64)> {
        let total = self.total() as f64;
        self.map
            .iter()
            .map(|(&b, &c)| (b, c as f64 / total))
            .collect()
    }

    /// Hamming-weight marginal of the counts, normalized.
    pub fn weight_distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites + 1];
        let total = self.total() as f64;
        if total == 0.0 {
            return out;
        }
        for (&b, &c) in &self.map {
            out[basis::weight(b)] += c as f64 / total;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("counts serialize")
    }
}

impl Serialize for Counts {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.map.len()))?;
        for (&b, &c) in &self.map {
            map.serialize_entry(&basis::to_bitstring(b, self.n_sites), &c)?;
        }
        map.end()
    }
}
