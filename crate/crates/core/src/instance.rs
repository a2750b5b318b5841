//! Constrained portfolio problems and their diagonal cost.
//!
//! A bitstring `x` over `N*D` sites encodes the holdings `z_l = sum_d x_{l,d}`.
//! The cost is
//!
//! ```text
//! E(x) = lambda/K^2 * sum_{l,l'} sigma_{l,l'} s_l s_l'  +  (1-lambda)/K * sum_l mu_l s_l
//! s_l  = sum_d (x_{l,d} - 1/2)
//! ```
//!
//! which is the literal eigenvalue of the problem Hamiltonian, diagonal
//! `(x - 1/2)^2 = 1/4` terms included. Feasible bitstrings have Hamming weight
//! `M = N*D/2 - K`.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::basis::{self, binomial, fixed_weight, Bits};
use crate::error::{Error, Result};

/// Largest number of feasible bitstrings `brute_force_spectrum` will visit.
pub const MAX_ENUMERATION: u128 = 1 << 24;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioInstance {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub sigma: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
}

impl PortfolioInstance {
    pub fn new(
        n: usize,
        d: usize,
        k: usize,
        lambda: f64,
        sigma: Vec<Vec<f64>>,
        mu: Vec<f64>,
    ) -> Result<Self> {
        let inst = PortfolioInstance {
            n,
            d,
            k,
            lambda,
            sigma,
            mu,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("N", "must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::validation("D", "must be at least 1"));
        }
        let sites = self.n * self.d;
        if sites % 2 != 0 {
            return Err(Error::validation(
                "N",
                format!("N*D = {sites} must be even"),
            ));
        }
        if sites > 63 {
            return Err(Error::validation(
                "N",
                format!("N*D = {sites} exceeds the 63-site encoding limit"),
            ));
        }
        // The cost divides by K, so K = 0 has no defined Hamiltonian.
        if self.k == 0 {
            return Err(Error::validation("K", "must be at least 1"));
        }
        if self.k > sites / 2 {
            return Err(Error::validation(
                "K",
                format!("K = {} exceeds N*D/2 = {}", self.k, sites / 2),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation(
                "lambda",
                format!("{} is outside [0, 1]", self.lambda),
            ));
        }
        if self.mu.len() != self.n {
            return Err(Error::validation(
                "mu",
                format!("expected {} entries, found {}", self.n, self.mu.len()),
            ));
        }
        if self.mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("mu", "entries must be finite"));
        }
        if self.sigma.len() != self.n || self.sigma.iter().any(|r| r.len() != self.n) {
            return Err(Error::validation(
                "sigma",
                format!("expected a {0}x{0} matrix", self.n),
            ));
        }
        for (i, row) in self.sigma.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::validation("sigma", "entries must be finite"));
                }
                let w = self.sigma[j][i];
                if (v - w).abs() > SYMMETRY_TOL * v.abs().max(w.abs()).max(1.0) {
                    return Err(Error::validation(
                        "sigma",
                        format!("not symmetric: sigma[{i}][{j}] = {v} but sigma[{j}][{i}] = {w}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn n_sites(&self) -> usize {
        self.n * self.d
    }

    /// Particle number `M = N*D/2 - K` of feasible bitstrings.
    pub fn particles(&self) -> usize {
        self.n_sites() / 2 - self.k
    }

    /// Cost of an occupation integer; rejects bits beyond site `N*D`.
    pub fn cost(&self, bits: Bits) -> Result<f64> {
        let sites = self.n_sites();
        if sites < 64 && bits >> sites != 0 {
            return Err(Error::input(format!(
                "bitstring {bits:#b} has bits beyond the {sites} sites"
            )));
        }
        Ok(self.cost_unchecked(bits))
    }

    /// Cost of a site-1-first bitstring such as `"10100101"`.
    pub fn cost_of_str(&self, s: &str) -> Result<f64> {
        if s.len() != self.n_sites() {
            return Err(Error::input(format!(
                "bitstring has {} sites, instance has {}",
                s.len(),
                self.n_sites()
            )));
        }
        self.cost(basis::from_bitstring(s)?)
    }

    pub(crate) fn cost_unchecked(&self, bits: Bits) -> f64 {
        let spins = self.centered_holdings(bits);
        self.cost_of_holdings(&spins)
    }

    /// `s_l = z_l - D/2` for each asset.
    fn centered_holdings(&self, bits: Bits) -> Vec<f64> {
        let half = self.d as f64 / 2.0;
        (0..self.n)
            .map(|l| {
                let z = (0..self.d)
                    .filter(|&dd| basis::is_occupied(bits, l + self.n * dd))
                    .count();
                z as f64 - half
            })
            .collect()
    }

    fn cost_of_holdings(&self, s: &[f64]) -> f64 {
        let kf = self.k as f64;
        let mut risk = 0.0;
        for (l, row) in self.sigma.iter().enumerate() {
            let inner: f64 = row.iter().zip(s).map(|(a, b)| a * b).sum();
            risk += s[l] * inner;
        }
        let ret: f64 = self.mu.iter().zip(s).map(|(a, b)| a * b).sum();
        self.lambda / (kf * kf) * risk + (1.0 - self.lambda) / kf * ret
    }

    /// Cost of every basis state `0..2^(N*D)`.
    pub fn cost_table(&self) -> Vec<f64> {
        (0..1u64 << self.n_sites())
            .map(|b| self.cost_unchecked(b))
            .collect()
    }

    /// Rewrites the cost in Pauli-Z form, `z_i = 1 - 2 x_i`.
    pub fn ising(&self) -> IsingForm {
        let n_sites = self.n_sites();
        let kf = self.k as f64;
        let asset = |i: usize| i % self.n;
        let quad = |i: usize, j: usize| self.lambda / (kf * kf) * self.sigma[asset(i)][asset(j)];
        let lin = |i: usize| (1.0 - self.lambda) / kf * self.mu[asset(i)];

        // sum_{ij} A_ij s_i s_j + sum_i b_i s_i with s = -z/2
        let mut zz = Vec::with_capacity(n_sites * (n_sites.saturating_sub(1)) / 2);
        for i in 0..n_sites {
            for j in i + 1..n_sites {
                zz.push((i, j, quad(i, j) / 2.0));
            }
        }
        let z = (0..n_sites).map(|i| -lin(i) / 2.0).collect();
        let offset = (0..n_sites).map(|i| quad(i, i) / 4.0).sum();
        IsingForm {
            n_sites,
            zz,
            z,
            offset,
        }
    }

    /// Short content hash of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("instance serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    /// Parses and validates the instance JSON schema, naming the offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| Error::validation("<document>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::validation("<document>", "expected a JSON object"))?;
        for key in obj.keys() {
            if !matches!(key.as_str(), "N" | "D" | "K" | "lambda" | "sigma" | "mu") {
                return Err(Error::validation(key.clone(), "unknown field"));
            }
        }
        let inst = PortfolioInstance {
            n: field_uint(obj, "N")?,
            d: field_uint(obj, "D")?,
            k: field_uint(obj, "K")?,
            lambda: field_f64(obj.get("lambda"), "lambda")?,
            sigma: field_matrix(obj, "sigma")?,
            mu: field_vector(obj.get("mu"), "mu")?,
        };
        inst.validate()?;
        Ok(inst)
    }
}

fn field_uint(obj: &Map<String, Value>, name: &str) -> Result<usize> {
    obj.get(name)
        .ok_or_else(|| Error::validation(name, "missing"))?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::validation(name, "expected a non-negative integer"))
}

fn field_f64(v: Option<&Value>, name: &str) -> Result<f64> {
    v.ok_or_else(|| Error::validation(name, "missing"))?
        .as_f64()
        .ok_or_else(|| Error::validation(name, "expected a number"))
}

fn field_vector(v: Option<&Value>, name: &str) -> Result<Vec<f64>> {
    v.ok_or_else(|| Error::validation(name, "missing"))?
        .as_array()
        .ok_or_else(|| Error::validation(name, "expected an array"))?
        .iter()
        .map(|x| field_f64(Some(x), name))
        .collect()
}

fn field_matrix(obj: &Map<String, Value>, name: &str) -> Result<Vec<Vec<f64>>> {
    obj.get(name)
        .ok_or_else(|| Error::validation(name, "missing"))?
        .as_array()
        .ok_or_else(|| Error::validation(name, "expected an array of rows"))?
        .iter()
        .map(|row| field_vector(Some(row), name))
        .collect()
}

/// Diagonal cost written as `offset + sum_{i<j} J_ij z_i z_j + sum_i h_i z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingForm {
    pub n_sites: usize,
    /// `(i, j, J_ij)` for every `i < j`, lexicographic.
    pub zz: Vec<(usize, usize, f64)>,
    pub z: Vec<f64>,
    pub offset: f64,
}

impl IsingForm {
    /// All-zero couplings on every pair; used to build structural circuits.
    pub fn zeros(n_sites: usize) -> Self {
        let mut zz = Vec::new();
        for i in 0..n_sites {
            for j in i + 1..n_sites {
                zz.push((i, j, 0.0));
            }
        }
        IsingForm {
            n_sites,
            zz,
            z: vec![0.0; n_sites],
            offset: 0.0,
        }
    }

    pub fn energy(&self, bits: Bits) -> f64 {
        let spin = |i: usize| if basis::is_occupied(bits, i) { -1.0 } else { 1.0 };
        let pairs: f64 = self.zz.iter().map(|&(i, j, c)| c * spin(i) * spin(j)).sum();
        let fields: f64 = self.z.iter().enumerate().map(|(i, c)| c * spin(i)).sum();
        self.offset + pairs + fields
    }
}

/// Exact statistics of the cost over all weight-`M` bitstrings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSpectrum {
    #[serde(rename = "M")]
    pub m: usize,
    pub e_min: f64,
    pub e_max: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub uniform_mean: f64,
    pub uniform_std: f64,
    pub states: u64,
    pub ground_bitstrings: Vec<Bits>,
}

impl ConstrainedSpectrum {
    /// `(E - E_min) / W`, or 0 when the spectrum is flat.
    pub fn normalized(&self, energy: f64) -> f64 {
        if self.w > 0.0 {
            (energy - self.e_min) / self.w
        } else {
            0.0
        }
    }
}

fn check_enumerable(n_sites: usize, m: usize) -> Result<()> {
    let count = binomial(n_sites, m);
    if n_sites > 63 || count > MAX_ENUMERATION {
        return Err(Error::Capacity {
            what: format!("C({n_sites}, {m}) feasible bitstrings"),
            actual: count,
            limit: MAX_ENUMERATION,
        });
    }
    Ok(())
}

/// Exhaustive scan of the weight-`m` sector.
pub fn brute_force_spectrum(instance: &PortfolioInstance, m: usize) -> Result<ConstrainedSpectrum> {
    let n_sites = instance.n_sites();
    if m > n_sites {
        return Err(Error::input(format!("M = {m} exceeds {n_sites} sites")));
    }
    check_enumerable(n_sites, m)?;

    let mut e_min = f64::INFINITY;
    let mut e_max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut states = 0u64;
    let mut ground = Vec::new();
    for bits in fixed_weight(n_sites, m) {
        let e = instance.cost_unchecked(bits);
        let tol = 1e-12 * e.abs().max(1.0);
        if e < e_min - tol {
            e_min = e;
            ground.clear();
            ground.push(bits);
        } else if (e - e_min).abs() <= tol {
            e_min = e_min.min(e);
            ground.push(bits);
        }
        e_max = e_max.max(e);
        sum += e;
        sum_sq += e * e;
        states += 1;
    }
    let mean = sum / states as f64;
    let var = (sum_sq / states as f64 - mean * mean).max(0.0);
    let w = e_max - e_min;
    if w <= 0.0 {
        warn!("constrained spectrum is flat (W = 0)");
    }
    Ok(ConstrainedSpectrum {
        m,
        e_min,
        e_max,
        w,
        uniform_mean: mean,
        uniform_std: var.sqrt(),
        states,
        ground_bitstrings: ground,
    })
}

/// Every weight-`m` bitstring with its cost, in increasing integer order.
pub fn constrained_energies(instance: &PortfolioInstance, m: usize) -> Result<Vec<(Bits, f64)>> {
    check_enumerable(instance.n_sites(), m)?;
    Ok(fixed_weight(instance.n_sites(), m)
        .map(|b| (b, instance.cost_unchecked(b)))
        .collect())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<PortfolioInstance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PortfolioInstance::from_json_str(&text)
}

pub fn save_instance(instance: &PortfolioInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    instance.validate()?;
    let mut text = instance.to_json_pretty();
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic factor-model generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub lambda: f64,
    /// Typical per-asset volatility; also the scale of the mean returns.
    pub volatility: f64,
    /// Weight of the common market factor, in `[0, 1]`.
    pub correlation: f64,
}

impl GeneratorSpec {
    pub fn new(seed: u64, n: usize, d: usize, k: usize, lambda: f64) -> Self {
        GeneratorSpec {
            seed,
            n,
            d,
            k,
            lambda,
            volatility: 1.0,
            correlation: 0.5,
        }
    }
}

/// Seeded synthetic instance with `sigma = F F^T`.
///
/// `F = [sqrt(rho) v∘b | sqrt(1-rho) diag(v)]` combines one market factor with
/// loadings `b_l ~ U(0.5, 1)` and idiosyncratic noise; volatilities are
/// `v_l ~ volatility * U(0.5, 1.5)` and returns `mu_l ~ volatility * U(-1, 1)`.
pub fn generate_instance(spec: &GeneratorSpec) -> Result<PortfolioInstance> {
    if !(0.0..=1.0).contains(&spec.correlation) {
        return Err(Error::input(format!(
            "correlation strength {} is outside [0, 1]",
            spec.correlation
        )));
    }
    if !(spec.volatility.is_finite() && spec.volatility > 0.0) {
        return Err(Error::input("volatility scale must be positive"));
    }
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::input("N and D must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let vol: Vec<f64> = (0..n)
        .map(|_| spec.volatility * rng.gen_range(0.5..1.5))
        .collect();
    let load: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.0)).collect();
    let mu: Vec<f64> = (0..n)
        .map(|_| spec.volatility * rng.gen_range(-1.0..1.0))
        .collect();

    let rho = spec.correlation;
    let mut factor = DMatrix::<f64>::zeros(n, n + 1);
    for l in 0..n {
        factor[(l, 0)] = rho.sqrt() * vol[l] * load[l];
        factor[(l, l + 1)] = (1.0 - rho).sqrt() * vol[l];
    }
    let cov = &factor * factor.transpose();
    let sigma = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
        .collect();
    PortfolioInstance::new(n, spec.d, spec.k, spec.lambda, sigma, mu)
}

/// Builds an instance from a CSV of per-period returns (header of asset names).
///
/// `mu` is the column mean and `sigma` the sample covariance with `1/(T-1)`.
pub fn instance_from_returns(
    path: impl AsRef<Path>,
    lambda: f64,
    d: usize,
    k: usize,
) -> Result<PortfolioInstance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (names, rows) = parse_returns(&text)?;
    let (mu, sigma) = sample_moments(&rows, names.len());
    PortfolioInstance::new(names.len(), d, k, lambda, sigma, mu)
}

/// Parses returns CSV text into header names and numeric rows.
pub fn parse_returns(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            column: 0,
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Parse {
            row: 1,
            column: 0,
            reason: "missing header of asset names".into(),
        });
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse {
            row: line,
            column: 0,
            reason: e.to_string(),
        })?;
        if record.len() != names.len() {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(names.len()) + 1,
                reason: format!("expected {} cells, found {}", names.len(), record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row: line,
                        column: c + 1,
                        reason: format!("{cell:?} is not a number"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Parse {
            row: rows.len() + 2,
            column: 0,
            reason: format!("need at least 2 return rows, found {}", rows.len()),
        });
    }
    Ok((names, rows))
}

fn sample_moments(rows: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let t = rows.len() as f64;
    let mu: Vec<f64> = (0..n)
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / t)
        .collect();
    let mut sigma = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = rows
                .iter()
                .map(|r| (r[i] - mu[i]) * (r[j] - mu[j]))
                .sum::<f64>()
                / (t - 1.0);
            sigma[i][j] = s;
            sigma[j][i] = s;
        }
    }
    (mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny() -> PortfolioInstance {
        PortfolioInstance::new(1, 2, 1, 1.0, vec![vec![1.0]], vec![0.0]).unwrap()
    }

    /// Literal double sum over (l,d),(l',d'), written independently of `cost`.
    fn cost_double_loop(inst: &PortfolioInstance, bits: Bits) -> f64 {
        let x = |l: usize, d: usize| ((bits >> (l + inst.n * d)) & 1) as f64 - 0.5;
        let kf = inst.k as f64;
        let mut risk = 0.0;
        for l in 0..inst.n {
            for lp in 0..inst.n {
                for d in 0..inst.d {
                    for dp in 0..inst.d {
                        risk += inst.sigma[l][lp] * x(l, d) * x(lp, dp);
                    }
                }
            }
        }
        let mut ret = 0.0;
        for l in 0..inst.n {
            for d in 0..inst.d {
                ret += inst.mu[l] * x(l, d);
            }
        }
        inst.lambda / (kf * kf) * risk + (1.0 - inst.lambda) / kf * ret
    }

    #[test]
    fn zero_risk_weight_and_returns_vanish() {
        let mut inst = generate_instance(&GeneratorSpec::new(3, 4, 2, 2, 0.0)).unwrap();
        inst.mu = vec![0.0; 4];
        for b in 0..256 {
            assert_eq!(inst.cost(b).unwrap(), 0.0);
        }
    }

    #[test]
    fn half_filled_single_asset_cancels() {
        assert_eq!(tiny().cost_of_str("10").unwrap(), 0.0);
    }

    #[test]
    fn seeded_cost_matches_double_loop() {
        let inst = generate_instance(&GeneratorSpec::new(42, 4, 2, 1, 0.7)).unwrap();
        let bits = basis::from_bitstring("10100101").unwrap();
        let a = inst.cost(bits).unwrap();
        let b = cost_double_loop(&inst, bits);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        for b in 0..256u64 {
            assert!((inst.cost(b).unwrap() - cost_double_loop(&inst, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn cost_rejects_wrong_length() {
        let inst = tiny();
        assert!(matches!(inst.cost_of_str("101"), Err(Error::Input(_))));
        assert!(matches!(inst.cost(0b100), Err(Error::Input(_))));
    }

    #[test]
    fn ising_form_reproduces_cost() {
        let inst = generate_instance(&GeneratorSpec::new(9, 3, 2, 2, 0.4)).unwrap();
        let ising = inst.ising();
        for b in 0..64u64 {
            assert!((ising.energy(b) - inst.cost(b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_instance_has_zero_width() {
        let mut inst = generate_instance(&GeneratorSpec::new(1, 4, 2, 2, 0.0)).unwrap();
        inst.mu = vec![0.0; 4];
        let spec = brute_force_spectrum(&inst, inst.particles()).unwrap();
        assert_eq!(spec.w, 0.0);
        assert_eq!(spec.ground_bitstrings.len() as u64, spec.states);
    }

    #[test]
    fn spectrum_size_and_streaming_mean() {
        let inst = generate_instance(&GeneratorSpec::new(42, 8, 2, 4, 0.9)).unwrap();
        let spec = brute_force_spectrum(&inst, 4).unwrap();
        assert_eq!(spec.states, 1820);
        // second, independent pass over all 2^16 integers
        let (mut sum, mut count) = (0.0, 0usize);
        for b in 0..(1u64 << 16) {
            if b.count_ones() == 4 {
                sum += cost_double_loop(&inst, b);
                count += 1;
            }
        }
        assert_eq!(count, 1820);
        assert!((spec.uniform_mean - sum / count as f64).abs() < 1e-12);
        assert!(spec.e_min <= spec.uniform_mean && spec.uniform_mean <= spec.e_max);
        for &g in &spec.ground_bitstrings {
            assert_eq!(g.count_ones(), 4);
            assert!((inst.cost(g).unwrap() - spec.e_min).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_capacity_is_explicit() {
        let inst = generate_instance(&GeneratorSpec::new(1, 16, 2, 1, 0.5)).unwrap();
        match brute_force_spectrum(&inst, 15) {
            Err(Error::Capacity { limit, actual, .. }) => {
                assert_eq!(limit, MAX_ENUMERATION);
                assert_eq!(actual, binomial(32, 15));
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_json_is_accepted() {
        let inst = PortfolioInstance::from_json_str(
            r#"{"N":1,"D":2,"K":1,"lambda":0.5,"sigma":[[1.0]],"mu":[0.0]}"#,
        )
        .unwrap();
        assert_eq!(inst.particles(), 0);
        assert_eq!(inst.sigma, vec![vec![1.0]]);
    }

    #[test]
    fn validation_names_the_field() {
        let asym = r#"{"N":2,"D":1,"K":1,"lambda":0.5,"sigma":[[1,2],[3,1]],"mu":[0,0]}"#;
        match PortfolioInstance::from_json_str(asym) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "sigma"),
            other => panic!("{other:?}"),
        }
        let lam = r#"{"N":1,"D":2,"K":1,"lambda":1.5,"sigma":[[1.0]],"mu":[0.0]}"#;
        match PortfolioInstance::from_json_str(lam) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("{other:?}"),
        }
        let missing = r#"{"N":1,"D":2,"lambda":0.5,"sigma":[[1.0]],"mu":[0.0]}"#;
        match PortfolioInstance::from_json_str(missing) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "K"),
            other => panic!("{other:?}"),
        }
        let odd = r#"{"N":3,"D":1,"K":1,"lambda":0.5,"sigma":[[1,0,0],[0,1,0],[0,0,1]],"mu":[0,0,0]}"#;
        assert!(PortfolioInstance::from_json_str(odd).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        let inst = generate_instance(&GeneratorSpec::new(5, 4, 2, 2, 0.3)).unwrap();
        save_instance(&inst, &path).unwrap();
        let back = load_instance(&path).unwrap();
        assert_eq!(back, inst);
        save_instance(&back, &path).unwrap();
        assert_eq!(load_instance(&path).unwrap(), back);
    }

    #[test]
    fn generator_is_deterministic_and_psd() {
        let spec = GeneratorSpec::new(7, 8, 2, 4, 0.9);
        let a = generate_instance(&spec).unwrap();
        let b = generate_instance(&spec).unwrap();
        assert_eq!(a, b);
        let m = DMatrix::from_fn(8, 8, |i, j| a.sigma[i][j]);
        let eig = m.symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn zero_correlation_gives_diagonal_sigma() {
        let mut spec = GeneratorSpec::new(11, 5, 2, 1, 0.5);
        spec.correlation = 0.0;
        let inst = generate_instance(&spec).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(inst.sigma[i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn returns_hand_computed() {
        let (names, rows) = parse_returns("a,b\n1,-1\n-1,1\n").unwrap();
        let (mu, sigma) = sample_moments(&rows, names.len());
        assert_eq!(mu, vec![0.0, 0.0]);
        assert_eq!(sigma, vec![vec![2.0, -2.0], vec![-2.0, 2.0]]);

        let (_, rows) = parse_returns("a,b\n0.5,0.25\n0.5,0.25\n").unwrap();
        let (_, sigma) = sample_moments(&rows, 2);
        assert!(sigma.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn returns_parse_errors_carry_location() {
        match parse_returns("a,b\n1,2\n3\n") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        match parse_returns("a,b\n1,2\n3,x\n") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_returns("a,b\n1,2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn returns_covariance_matches_matrix_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let (t, n) = (100, 5);
        let mut text = String::from("a,b,c,d,e\n");
        for _ in 0..t {
            let row: Vec<String> = (0..n)
                .map(|_| format!("{}", rng.gen_range(-0.05..0.05)))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        let (_, rows) = parse_returns(&text).unwrap();
        let (_, sigma) = sample_moments(&rows, n);
        // centered data matrix, X^T X / (T - 1)
        let x = DMatrix::from_fn(t, n, |i, j| rows[i][j]);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(t, n, |i, j| x[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (t as f64 - 1.0);
        for i in 0..n {
            for j in 0..n {
                assert!((sigma[i][j] - cov[(i, j)]).abs() < 1e-12);
            }
        }
    }

    fn arb_instance() -> impl Strategy<Value = PortfolioInstance> {
        (any::<u64>(), 1usize..5, 1usize..4, 0.0f64..=1.0).prop_filter_map(
            "even sites",
            |(seed, n, d, lambda)| {
                if (n * d) % 2 != 0 || n * d < 2 {
                    return None;
                }
                generate_instance(&GeneratorSpec::new(seed, n, d, 1, lambda)).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn cost_symmetric_under_level_exchange(inst in arb_instance(), bits in any::<u64>(), l in 0usize..4, d1 in 0usize..3, d2 in 0usize..3) {
            let sites = inst.n_sites();
            let bits = bits & ((1u64 << sites) - 1);
            let l = l % inst.n;
            let (a, b) = (l + inst.n * (d1 % inst.d), l + inst.n * (d2 % inst.d));
            let swapped = {
                let (xa, xb) = ((bits >> a) & 1, (bits >> b) & 1);
                (bits & !(1 << a) & !(1 << b)) | (xb << a) | (xa << b)
            };
            let c1 = inst.cost(bits).unwrap();
            let c2 = inst.cost(swapped).unwrap();
            prop_assert!((c1 - c2).abs() <= 1e-12 * c1.abs().max(1.0));
        }

        #[test]
        fn ground_energy_bounds_random_feasible(seed in any::<u64>()) {
            let inst = generate_instance(&GeneratorSpec::new(seed, 4, 2, 1, 0.6)).unwrap();
            let m = inst.particles();
            let spec = brute_force_spectrum(&inst, m).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let mut bits = 0u64;
                while bits.count_ones() < m as u32 {
                    bits |= 1 << rng.gen_range(0..8);
                }
                prop_assert!(spec.e_min <= inst.cost(bits).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn zero_risk_weight_depends_only_on_holdings() {
        let inst = generate_instance(&GeneratorSpec::new(21, 3, 2, 2, 0.0)).unwrap();
        // affine in z: cost(x) - cost(0) = (1/K) sum_l mu_l z_l
        let base = inst.cost(0).unwrap();
        for b in 0..(1u64 << 6) {
            let z: Vec<f64> = (0..3)
                .map(|l| (0..2).filter(|&d| (b >> (l + 3 * d)) & 1 == 1).count() as f64)
                .collect();
            let pred: f64 = base + z.iter().zip(&inst.mu).map(|(z, m)| z * m).sum::<f64>() / 2.0;
            assert!((inst.cost(b).unwrap() - pred).abs() < 1e-12);
        }
    }
}
