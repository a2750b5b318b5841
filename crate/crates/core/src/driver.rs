//! Tight-binding driver Hamiltonians `H = sum_ab h_ab c†_a c_b`.
//!
//! Sites are 0-based here (qubit `i` is sequential site `i + 1`). An edge
//! `(a, b, amplitude)` contributes `-amplitude (c†_a c_b + c†_b c_a)`, so the
//! single-particle matrix has `h[a][b] = -amplitude`.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::Bits;
use crate::error::{Error, Result};
use crate::linalg;
use crate::statevector::{apply_one_body, slater_state, StateVector};

/// Single-particle energies closer than this are treated as equal.
pub const DEGENERACY_TOL: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-9;
const COMMUTATOR_TOL: f64 = 1e-12;
/// Largest lattice for which the many-body commutator is formed explicitly.
const COMMUTATOR_MAX_SITES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    #[serde(rename = "cyc")]
    Cyclic,
    #[serde(rename = "lad")]
    Ladder,
    Custom,
}

impl DriverKind {
    pub fn label(self) -> &'static str {
        match self {
            DriverKind::Cyclic => "cyc",
            DriverKind::Ladder => "lad",
            DriverKind::Custom => "custom",
        }
    }
}

impl std::fmt::Display for DriverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for DriverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyc" | "cyclic" => Ok(DriverKind::Cyclic),
            "lad" | "ladder" => Ok(DriverKind::Ladder),
            "custom" => Ok(DriverKind::Custom),
            other => Err(Error::input(format!("unknown driver kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoppingModel {
    pub n_sites: usize,
    pub kind: DriverKind,
    pub edges: Vec<Edge>,
    /// Chain hopping for cyclic, leg hopping for ladder.
    pub t: f64,
    /// Rung hopping; zero unless ladder.
    pub t_perp: f64,
    /// `(-1)^(M-1)` on the cyclic closing bond, `+1` otherwise.
    pub boundary_sign: f64,
    /// Lattice shape `(N, D)` when known.
    pub shape: Option<(usize, usize)>,
}

impl HoppingModel {
    /// Arbitrary edge list; used for hand-built or file-loaded graphs.
    pub fn custom(n_sites: usize, edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if e.a >= n_sites || e.b >= n_sites {
                return Err(Error::input(format!(
                    "edge ({}, {}) outside {n_sites} sites",
                    e.a + 1,
                    e.b + 1
                )));
            }
            if e.a == e.b {
                return Err(Error::input(format!("edge on a single site {}", e.a + 1)));
            }
            if !e.amplitude.is_finite() {
                return Err(Error::input("edge amplitude is not finite"));
            }
        }
        Ok(HoppingModel {
            n_sites,
            kind: DriverKind::Custom,
            edges,
            t: 1.0,
            t_perp: 0.0,
            boundary_sign: 1.0,
            shape: None,
        })
    }

    /// Single-particle matrix; parallel edges accumulate.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n_sites, self.n_sites);
        for e in &self.edges {
            h[(e.a, e.b)] -= e.amplitude;
            h[(e.b, e.a)] -= e.amplitude;
        }
        h
    }

    /// Same graph with every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> HoppingModel {
        let mut out = self.clone();
        out.t *= factor;
        out.t_perp *= factor;
        out.edges.iter_mut().for_each(|e| e.amplitude *= factor);
        out
    }

    /// Eigenvalues of the single-particle matrix, ascending.
    pub fn spectrum(&self) -> Vec<f64> {
        linalg::sorted_eigenvalues(&self.matrix())
    }

    pub fn is_connected(&self) -> bool {
        if self.n_sites == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n_sites];
        for e in self.edges.iter().filter(|e| e.amplitude != 0.0) {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut seen = vec![false; self.n_sites];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Copy without the given edge index.
    pub fn without_edge(&self, index: usize) -> HoppingModel {
        let mut out = self.clone();
        out.edges.remove(index);
        out.kind = DriverKind::Custom;
        out
    }
}

#[derive(Deserialize)]
struct EdgeFile {
    n_sites: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// Reads `{"n_sites": n, "edges": [[a, b, amplitude], ...]}` with 1-based sites.
pub fn load_edge_file(path: impl AsRef<Path>) -> Result<HoppingModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: EdgeFile =
        serde_json::from_str(&text).map_err(|e| Error::validation("edges", e.to_string()))?;
    let mut edges = Vec::with_capacity(file.edges.len());
    for (a, b, amplitude) in file.edges {
        if a == 0 || b == 0 {
            return Err(Error::validation("edges", "sites are numbered from 1"));
        }
        edges.push(Edge {
            a: a - 1,
            b: b - 1,
            amplitude,
        });
    }
    HoppingModel::custom(file.n_sites, edges)
}

fn boundary_sign(m: usize) -> f64 {
    if m % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Open chain over sequential sites closed by a `(-1)^(M-1)` bond.
pub fn build_cyclic(n: usize, d: usize, m: usize, t: f64) -> Result<HoppingModel> {
    let n_sites = n * d;
    if n_sites < 2 {
        return Err(Error::input("cyclic driver needs at least 2 sites"));
    }
    if m == 0 || m >= n_sites {
        return Err(Error::input(format!(
            "cyclic driver needs 1 <= M <= {}, got {m}",
            n_sites - 1
        )));
    }
    if !(t > 0.0) {
        return Err(Error::input(format!("hopping t must be positive, got {t}")));
    }
    let sign = boundary_sign(m);
    let mut edges: Vec<Edge> = (0..n_sites - 1)
        .map(|i| Edge {
            a: i,
            b: i + 1,
            amplitude: t,
        })
        .collect();
    edges.push(Edge {
        a: n_sites - 1,
        b: 0,
        amplitude: t * sign,
    });
    Ok(HoppingModel {
        n_sites,
        kind: DriverKind::Cyclic,
        edges,
        t,
        t_perp: 0.0,
        boundary_sign: sign,
        shape: Some((n, d)),
    })
}

/// `D` periodic legs of length `N` joined by rungs between neighbouring legs.
pub fn build_ladder(n: usize, d: usize, t_par: f64, t_perp: f64) -> Result<HoppingModel> {
    if n < 2 || d < 1 {
        return Err(Error::input(format!("ladder needs N >= 2 and D >= 1, got N={n}, D={d}")));
    }
    let site = |l: usize, dd: usize| l + n * dd;
    let mut edges = Vec::with_capacity(n * d + n * (d - 1));
    for dd in 0..d {
        for l in 0..n {
            edges.push(Edge {
                a: site(l, dd),
                b: site((l + 1) % n, dd),
                amplitude: t_par,
            });
        }
    }
    for dd in 0..d - 1 {
        for l in 0..n {
            edges.push(Edge {
                a: site(l, dd),
                b: site(l, dd + 1),
                amplitude: t_perp,
            });
        }
    }
    Ok(HoppingModel {
        n_sites: n * d,
        kind: DriverKind::Ladder,
        edges,
        t: t_par,
        t_perp,
        boundary_sign: 1.0,
        shape: Some((n, d)),
    })
}

pub fn dispersion_cyclic(q: f64, t: f64, n_sites: usize) -> f64 {
    -2.0 * t * (2.0 * PI * q / n_sites as f64).cos()
}

pub fn dispersion_ladder(k: usize, m: usize, t_par: f64, t_perp: f64, n: usize, d: usize) -> f64 {
    -2.0 * t_par * (2.0 * PI * k as f64 / n as f64).cos()
        - 2.0 * t_perp * (PI * m as f64 / (d as f64 + 1.0)).cos()
}

/// Momenta `q = k + delta`, `k = 1..ND`, for the sector parity of `m`.
pub fn cyclic_momenta(n_sites: usize, m: usize) -> Vec<f64> {
    let delta = if m % 2 == 0 { -0.5 } else { 0.0 };
    (1..=n_sites).map(|k| k as f64 + delta).collect()
}

/// Occupied momenta of the cyclic ground state.
pub fn cyclic_occupation(n_sites: usize, m: usize) -> Vec<f64> {
    let nd = n_sites as f64;
    let mut q = Vec::with_capacity(m);
    if m % 2 == 0 {
        for k in 1..=m / 2 {
            q.push(k as f64 - 0.5);
            q.push(nd - k as f64 + 0.5);
        }
    } else {
        q.push(nd);
        for k in 1..=(m - 1) / 2 {
            q.push(k as f64);
            q.push(nd - k as f64);
        }
    }
    q
}

/// Real orbital of momentum `q` over sequential sites `1..ND`.
pub fn cyclic_orbital(q: f64, n_sites: usize) -> Vec<f64> {
    let nd = n_sites as f64;
    let half = nd / 2.0;
    let a = if q == half || q == nd {
        (1.0 / nd).sqrt()
    } else {
        (2.0 / nd).sqrt()
    };
    (1..=n_sites)
        .map(|i| {
            let arg = 2.0 * PI * q * i as f64 / nd;
            if q > 0.0 && q < half {
                a * arg.sin()
            } else {
                a * arg.cos()
            }
        })
        .collect()
}

/// Real orbital `(k, m)` of the ladder over sequential sites.
pub fn ladder_orbital(k: usize, m: usize, n: usize, d: usize) -> Vec<f64> {
    let (nf, df) = (n as f64, d as f64);
    let a = if 2 * k == n || k == n {
        (2.0 / ((df + 1.0) * nf)).sqrt()
    } else {
        (4.0 / ((df + 1.0) * nf)).sqrt()
    };
    let mut out = vec![0.0; n * d];
    for dd in 1..=d {
        let rung = (PI * (m * dd) as f64 / (df + 1.0)).sin();
        for l in 1..=n {
            let arg = 2.0 * PI * (k * l) as f64 / nf;
            let leg = if 2 * k < n { arg.sin() } else { arg.cos() };
            out[l - 1 + n * (dd - 1)] = a * leg * rung;
        }
    }
    out
}

/// Occupied single-particle orbitals of a Slater-determinant ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalBasis {
    pub m: usize,
    /// `M x n`, row `r` is orbital `r` over sites.
    pub orbitals: DMatrix<f64>,
    pub energies: Vec<f64>,
    pub e0: f64,
    pub degenerate: bool,
    /// Mode labels such as `q=0.5` or `(k,m)=(8,2)`.
    pub labels: Vec<String>,
}

impl OrbitalBasis {
    pub fn n_sites(&self) -> usize {
        self.orbitals.ncols()
    }

    pub fn orthonormality_error(&self) -> f64 {
        linalg::row_orthonormality_error(&self.orbitals)
    }

    /// Largest `||h r - eps_r r||_inf` over rows.
    pub fn eigen_residual(&self, h: &DMatrix<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, &e) in self.energies.iter().enumerate() {
            let row = self.orbitals.row(r).transpose();
            let res = h * &row - &row * e;
            worst = worst.max(res.amax());
        }
        worst
    }

    pub fn slater_state(&self) -> Result<StateVector> {
        slater_state(&self.orbitals)
    }
}

fn sector_degenerate(spectrum: &[f64], m: usize) -> bool {
    m > 0 && m < spectrum.len() && (spectrum[m] - spectrum[m - 1]).abs() <= DEGENERACY_TOL
}

fn basis_from_rows(m: usize, rows: Vec<Vec<f64>>, energies: Vec<f64>, degenerate: bool, labels: Vec<String>) -> OrbitalBasis {
    let n = rows.first().map_or(0, Vec::len);
    let orbitals = DMatrix::from_fn(m, n, |r, c| rows[r][c]);
    let e0 = energies.iter().sum();
    OrbitalBasis {
        m,
        orbitals,
        energies,
        e0,
        degenerate,
        labels,
    }
}

/// Ground-state orbitals of the `M`-particle sector.
pub fn ground_orbitals(model: &HoppingModel, m: usize) -> Result<OrbitalBasis> {
    let n_sites = model.n_sites;
    if m == 0 || m > n_sites {
        return Err(Error::input(format!("need 1 <= M <= {n_sites}, got {m}")));
    }
    let spectrum = model.spectrum();
    let degenerate = sector_degenerate(&spectrum, m);
    match (model.kind, model.shape) {
        (DriverKind::Cyclic, Some(_)) => {
            if (model.boundary_sign - boundary_sign(m)).abs() > 0.0 {
                return Err(Error::input(format!(
                    "cyclic model was built for the other particle parity than M = {m}"
                )));
            }
            let qs = cyclic_occupation(n_sites, m);
            let rows = qs.iter().map(|&q| cyclic_orbital(q, n_sites)).collect();
            let energies = qs.iter().map(|&q| dispersion_cyclic(q, model.t, n_sites)).collect();
            let labels = qs.iter().map(|q| format!("q={q}")).collect();
            Ok(basis_from_rows(m, rows, energies, degenerate, labels))
        }
        (DriverKind::Ladder, Some((n, d))) => {
            let modes = ladder_occupation(n, d, m, model.t, model.t_perp);
            let rows = modes.iter().map(|&(k, mm)| ladder_orbital(k, mm, n, d)).collect();
            let energies = modes
                .iter()
                .map(|&(k, mm)| dispersion_ladder(k, mm, model.t, model.t_perp, n, d))
                .collect();
            let labels = modes.iter().map(|(k, mm)| format!("(k,m)=({k},{mm})")).collect();
            Ok(basis_from_rows(m, rows, energies, degenerate, labels))
        }
        _ => {
            let (eps, v) = linalg::sorted_eigen(&model.matrix());
            let rows = (0..m).map(|c| v.column(c).iter().copied().collect()).collect();
            let labels = (0..m).map(|c| format!("mode {c}")).collect();
            Ok(basis_from_rows(m, rows, eps[..m].to_vec(), degenerate, labels))
        }
    }
}

/// Lowest `M` ladder modes `(k, m)`. The `(8, 2, 4)` lattice uses the
/// symmetric choice `{(N,2), (1,1), (N-1,1), (N,1)}`; otherwise ties within
/// [`DEGENERACY_TOL`] are broken by ascending `(m, k)`.
pub fn ladder_occupation(n: usize, d: usize, m: usize, t_par: f64, t_perp: f64) -> Vec<(usize, usize)> {
    if (n, d, m) == (8, 2, 4) {
        return vec![(n, 2), (1, 1), (n - 1, 1), (n, 1)];
    }
    let mut modes: Vec<(f64, usize, usize)> = (1..=d)
        .flat_map(|mm| (1..=n).map(move |k| (k, mm)))
        .map(|(k, mm)| (dispersion_ladder(k, mm, t_par, t_perp, n, d), mm, k))
        .collect();
    modes.sort_by(|a, b| a.0.total_cmp(&b.0));
    // cluster near-equal energies, then order each cluster by (m, k)
    let mut ordered = Vec::with_capacity(modes.len());
    let mut start = 0;
    while start < modes.len() {
        let mut end = start + 1;
        while end < modes.len() && modes[end].0 - modes[end - 1].0 <= DEGENERACY_TOL {
            end += 1;
        }
        let mut cluster = modes[start..end].to_vec();
        cluster.sort_by_key(|&(_, mm, k)| (mm, k));
        ordered.extend(cluster);
        start = end;
    }
    ordered.into_iter().take(m).map(|(_, mm, k)| (k, mm)).collect()
}

/// `sum of M largest - sum of M smallest` single-particle energies.
pub fn hopping_scale(model: &HoppingModel, m: usize) -> f64 {
    let eps = model.spectrum();
    let m = m.min(eps.len());
    let low: f64 = eps[..m].iter().sum();
    let high: f64 = eps[eps.len() - m..].iter().sum();
    high - low
}

/// Outcome of the three driver design conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    #[serde(rename = "condition_I")]
    pub condition_i: bool,
    #[serde(rename = "condition_II")]
    pub condition_ii: bool,
    #[serde(rename = "condition_III")]
    pub condition_iii: bool,
    pub degenerate: bool,
    #[serde(rename = "E0")]
    pub e0: f64,
    #[serde(skip)]
    pub commutator_max: Option<f64>,
    #[serde(skip)]
    pub eigen_residual: f64,
    #[serde(skip)]
    pub leakage: f64,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.condition_i && self.condition_ii && self.condition_iii
    }

    /// Names of the conditions that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            (self.condition_i, "condition_I"),
            (self.condition_ii, "condition_II"),
            (self.condition_iii, "condition_III"),
        ]
        .into_iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, name)| name)
        .collect()
    }
}

/// Largest entry of `[H, C]` built from full many-body matrices.
pub fn number_commutator_max(model: &HoppingModel) -> Result<f64> {
    let n = model.n_sites;
    let h = model.matrix();
    let dim = 1usize << n;
    let mut worst: f64 = 0.0;
    for x in 0..dim {
        let column = apply_one_body(&StateVector::basis_state(n, x as Bits)?, &h)?;
        let cx = x.count_ones() as f64;
        for (y, a) in column.amplitudes().iter().enumerate() {
            // [H, C]_{yx} = H_yx (C_x - C_y)
            let entry = a * (cx - y.count_ones() as f64);
            worst = worst.max(entry.norm());
        }
    }
    Ok(worst)
}

/// Checks number conservation, connectivity and the eigenstate property.
pub fn verify_conditions(model: &HoppingModel, m: usize) -> Result<ConditionReport> {
    let structural = model.edges.iter().all(|e| e.a != e.b && e.amplitude.is_finite());
    let commutator_max = if model.n_sites <= COMMUTATOR_MAX_SITES {
        Some(number_commutator_max(model)?)
    } else {
        None
    };
    let condition_i = structural && commutator_max.map_or(true, |c| c <= COMMUTATOR_TOL);
    let condition_ii = model.is_connected();

    let basis = ground_orbitals(model, m)?;
    let h = model.matrix();
    let phi = basis.slater_state()?;
    let h_phi = apply_one_body(&phi, &h)?;
    let eigen_residual = h_phi
        .amplitudes()
        .iter()
        .zip(phi.amplitudes())
        .map(|(a, b)| (a - b * basis.e0).norm())
        .fold(0.0, f64::max);
    let leakage = phi.leakage(m);
    let orth = basis.orthonormality_error();
    let condition_iii = eigen_residual <= EIGEN_TOL && leakage == 0.0 && orth <= ORTHONORMAL_TOL;

    Ok(ConditionReport {
        condition_i,
        condition_ii,
        condition_iii,
        degenerate: basis.degenerate,
        e0: basis.e0,
        commutator_max,
        eigen_residual,
        leakage,
    })
}
