//! Gate-level FQAOA ansatz: Givens state preparation, the diagonal phase
//! unitary, and the cyclic XY mixer.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::driver::{self, DriverKind, HoppingModel, OrbitalBasis};
use crate::error::{Error, Result};
use crate::instance::{IsingForm, PortfolioInstance};
use crate::statevector::{QuadraticPropagator, StateVector};

const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    X(usize),
    H(usize),
    S(usize),
    Sdg(usize),
    Rx(usize, f64),
    Ry(usize, f64),
    Rz(usize, f64),
    Cnot { control: usize, target: usize },
    /// Real rotation of modes `(a, b)`; expands to 8 one-qubit gates and 2 CNOTs.
    Givens { a: usize, b: usize, theta: f64 },
    /// `exp[i theta (X_a X_b + Y_a Y_b) / 2]`; expands to 6 one-qubit gates and 2 CNOTs.
    XyPair { a: usize, b: usize, theta: f64 },
}

impl Gate {
    pub fn name(&self) -> &'static str {
        match self {
            Gate::X(_) => "X",
            Gate::H(_) => "H",
            Gate::S(_) => "S",
            Gate::Sdg(_) => "Sdg",
            Gate::Rx(..) => "Rx",
            Gate::Ry(..) => "Ry",
            Gate::Rz(..) => "Rz",
            Gate::Cnot { .. } => "CNOT",
            Gate::Givens { .. } => "GIVENS",
            Gate::XyPair { .. } => "XYPAIR",
        }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::X(q) | Gate::H(q) | Gate::S(q) | Gate::Sdg(q) => vec![q],
            Gate::Rx(q, _) | Gate::Ry(q, _) | Gate::Rz(q, _) => vec![q],
            Gate::Cnot { control, target } => vec![control, target],
            Gate::Givens { a, b, .. } | Gate::XyPair { a, b, .. } => vec![a, b],
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match *self {
            Gate::Rx(_, t) | Gate::Ry(_, t) | Gate::Rz(_, t) => Some(t),
            Gate::Givens { theta, .. } | Gate::XyPair { theta, .. } => Some(theta),
            _ => None,
        }
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, Gate::Givens { .. } | Gate::XyPair { .. })
    }

    /// Primitive gates in application order; primitives expand to themselves.
    pub fn expand(&self) -> Vec<Gate> {
        match *self {
            Gate::Givens { a, b, theta } => vec![
                Gate::S(a),
                Gate::S(b),
                Gate::H(b),
                Gate::Cnot { control: b, target: a },
                Gate::Ry(a, theta),
                Gate::Ry(b, theta),
                Gate::Cnot { control: b, target: a },
                Gate::H(b),
                Gate::Sdg(a),
                Gate::Sdg(b),
            ],
            Gate::XyPair { a, b, theta } => vec![
                Gate::Rx(a, -FRAC_PI_2),
                Gate::Rx(b, FRAC_PI_2),
                Gate::Cnot { control: a, target: b },
                Gate::Rx(a, -theta),
                Gate::Rz(b, theta),
                Gate::Cnot { control: a, target: b },
                Gate::Rx(a, FRAC_PI_2),
                Gate::Rx(b, -FRAC_PI_2),
            ],
            g => vec![g],
        }
    }

    /// Applies the gate; composites use their fused two-mode kernels.
    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        match *self {
            Gate::X(q) => state.apply_x(q),
            Gate::H(q) => state.apply_h(q),
            Gate::S(q) => state.apply_s(q),
            Gate::Sdg(q) => state.apply_sdg(q),
            Gate::Rx(q, t) => state.apply_rx(q, t),
            Gate::Ry(q, t) => state.apply_ry(q, t),
            Gate::Rz(q, t) => state.apply_rz(q, t),
            Gate::Cnot { control, target } => state.apply_cnot(control, target),
            Gate::Givens { a, b, theta } => state.apply_givens(a, b, theta),
            Gate::XyPair { a, b, theta } => state.apply_xy_pair(a, b, theta),
        }
    }

    fn max_qubit(&self) -> usize {
        self.qubits().into_iter().max().unwrap_or(0)
    }
}

impl Serialize for Gate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let angle = self.angle();
        let mut s = serializer.serialize_struct("Gate", if angle.is_some() { 3 } else { 2 })?;
        s.serialize_field("gate", self.name())?;
        s.serialize_field("qubits", &self.qubits())?;
        if let Some(a) = angle {
            s.serialize_field("angle", &a)?;
        }
        s.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SegmentLabel {
    #[serde(rename = "init")]
    Init,
    #[serde(rename = "phase")]
    Phase,
    #[serde(rename = "mixer_I")]
    MixerI,
    #[serde(rename = "mixer_II")]
    MixerII,
    #[serde(rename = "mixer_BC")]
    MixerBc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub label: SegmentLabel,
    pub gates: Vec<Gate>,
}

/// One- and two-qubit primitive gate numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GateCount {
    pub single_qubit: u64,
    pub two_qubit: u64,
}

impl GateCount {
    pub fn new(single_qubit: u64, two_qubit: u64) -> Self {
        GateCount {
            single_qubit,
            two_qubit,
        }
    }
}

impl std::ops::Add for GateCount {
    type Output = GateCount;
    fn add(self, o: GateCount) -> GateCount {
        GateCount::new(self.single_qubit + o.single_qubit, self.two_qubit + o.two_qubit)
    }
}

impl std::ops::AddAssign for GateCount {
    fn add_assign(&mut self, o: GateCount) {
        *self = *self + o;
    }
}

impl std::ops::Mul<u64> for GateCount {
    type Output = GateCount;
    fn mul(self, k: u64) -> GateCount {
        GateCount::new(self.single_qubit * k, self.two_qubit * k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub segments: Vec<Segment>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Circuit {
            n_qubits,
            segments: Vec::new(),
        }
    }

    pub fn push_segment(&mut self, label: SegmentLabel, gates: Vec<Gate>) -> Result<()> {
        if let Some(g) = gates.iter().find(|g| g.max_qubit() >= self.n_qubits) {
            return Err(Error::input(format!(
                "{} on qubits {:?} outside {} qubits",
                g.name(),
                g.qubits(),
                self.n_qubits
            )));
        }
        self.segments.push(Segment { label, gates });
        Ok(())
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.segments.iter().flat_map(|s| s.gates.iter())
    }

    /// Every gate as primitives, in order.
    pub fn expanded(&self) -> Vec<Gate> {
        self.gates().flat_map(Gate::expand).collect()
    }

    pub fn census(&self) -> GateCount {
        self.segments.iter().map(segment_census).fold(GateCount::default(), |a, b| a + b)
    }

    pub fn census_by_segment(&self) -> BTreeMap<SegmentLabel, GateCount> {
        let mut out = BTreeMap::new();
        for s in &self.segments {
            *out.entry(s.label).or_default() += segment_census(s);
        }
        out
    }

    /// Same circuit without zero-angle rotations.
    pub fn pruned(&self) -> Circuit {
        let keep = |g: &Gate| g.angle().map_or(true, |a| a != 0.0);
        Circuit {
            n_qubits: self.n_qubits,
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    label: s.label,
                    gates: s.gates.iter().copied().filter(keep).collect(),
                })
                .collect(),
        }
    }

    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        self.gates().try_for_each(|g| g.apply(state))
    }

    /// Gate-by-gate through the primitive expansion.
    pub fn apply_expanded(&self, state: &mut StateVector) -> Result<()> {
        self.expanded().iter().try_for_each(|g| g.apply(state))
    }

    /// `[{"gate", "qubits", "angle"}, ...]` over all segments.
    pub fn to_json(&self) -> String {
        let gates: Vec<&Gate> = self.gates().collect();
        serde_json::to_string_pretty(&gates).expect("gates serialize")
    }
}

fn segment_census(s: &Segment) -> GateCount {
    let mut c = GateCount::default();
    for g in s.gates.iter().flat_map(Gate::expand) {
        if g.qubits().len() == 1 {
            c.single_qubit += 1;
        } else {
            c.two_qubit += 1;
        }
    }
    c
}

/// X gates on qubits `0..M` followed by `M(n-M)` Givens rotations that carry
/// `c†_0 ... c†_{M-1}|vac>` to the Slater determinant of `basis.orbitals`
/// (up to a global sign).
pub fn build_init_circuit(basis: &OrbitalBasis) -> Result<Circuit> {
    let err = basis.orthonormality_error();
    if !(err <= ORTHONORMAL_TOL) {
        return Err(Error::validation(
            "orbitals",
            format!("rows are not orthonormal (max deviation {err:.3e})"),
        ));
    }
    let (m, n) = basis.orbitals.shape();
    let mut q = basis.orbitals.clone();

    // Row rotations: row r ends up supported on columns <= n - m + r.
    for c in (n - m + 1..n).rev() {
        let limit = c + m - n;
        for r in 0..limit {
            let (x, y) = (q[(r, c)], q[(r + 1, c)]);
            let h = x.hypot(y);
            if h == 0.0 {
                continue;
            }
            let (cs, sn) = (y / h, x / h);
            for k in 0..n {
                let (u, v) = (q[(r, k)], q[(r + 1, k)]);
                q[(r, k)] = cs * u - sn * v;
                q[(r + 1, k)] = sn * u + cs * v;
            }
        }
    }

    // Column rotations fold each row onto its diagonal entry.
    let mut thetas = Vec::with_capacity(m * (n - m));
    for r in 0..m {
        for c in (r + 1..=n - m + r).rev() {
            let (x, y) = (q[(r, c - 1)], q[(r, c)]);
            let h = x.hypot(y);
            let (cg, sg) = if h == 0.0 { (1.0, 0.0) } else { (x / h, y / h) };
            for k in 0..m {
                let (u, v) = (q[(k, c - 1)], q[(k, c)]);
                q[(k, c - 1)] = cg * u + sg * v;
                q[(k, c)] = -sg * u + cg * v;
            }
            thetas.push((c - 1, (-sg).atan2(cg)));
        }
    }

    let mut gates: Vec<Gate> = (0..m).map(Gate::X).collect();
    gates.extend(thetas.iter().rev().map(|&(a, theta)| Gate::Givens {
        a,
        b: a + 1,
        theta: if theta == 0.0 { 0.0 } else { theta },
    }));
    let mut circuit = Circuit::new(n);
    circuit.push_segment(SegmentLabel::Init, gates)?;
    Ok(circuit)
}

/// `exp(-i gamma (H_p - offset))` as CNOT-Rz-CNOT blocks per pair, then one Rz per site.
pub fn phase_circuit_from_ising(ising: &IsingForm, gamma: f64) -> Result<Circuit> {
    let mut gates = Vec::with_capacity(3 * ising.zz.len() + ising.z.len());
    for &(i, j, c) in &ising.zz {
        gates.push(Gate::Cnot { control: i, target: j });
        gates.push(Gate::Rz(j, 2.0 * gamma * c));
        gates.push(Gate::Cnot { control: i, target: j });
    }
    for (i, &c) in ising.z.iter().enumerate() {
        gates.push(Gate::Rz(i, 2.0 * gamma * c));
    }
    let mut circuit = Circuit::new(ising.n_sites);
    circuit.push_segment(SegmentLabel::Phase, gates)?;
    Ok(circuit)
}

pub fn build_phase_circuit(instance: &PortfolioInstance, gamma: f64) -> Result<Circuit> {
    phase_circuit_from_ising(&instance.ising(), gamma)
}

/// Bonds of the three cyclic mixer segments as 0-based qubit pairs.
pub fn cyclic_bonds(n_sites: usize) -> [(SegmentLabel, Vec<(usize, usize)>); 3] {
    let odd = (0..n_sites - 1).step_by(2).map(|i| (i, i + 1)).collect();
    let even = (1..n_sites - 1).step_by(2).map(|i| (i, i + 1)).collect();
    [
        (SegmentLabel::MixerI, odd),
        (SegmentLabel::MixerII, even),
        (SegmentLabel::MixerBc, vec![(0, n_sites - 1)]),
    ]
}

/// `U_BC U_II U_I` of XY pairs with `theta = beta t`.
///
/// On the closing pair the XY gate acts in the weight-M sector as the
/// fermionic hop with the model's `(-1)^(M-1)` sign, so its angle is the
/// boundary amplitude times that sign.
pub fn build_mixer_cyclic(model: &HoppingModel, beta: f64) -> Result<Circuit> {
    if model.kind != DriverKind::Cyclic {
        return Err(Error::input(format!(
            "gate-level mixer needs a cyclic driver, got {}",
            model.kind
        )));
    }
    let n = model.n_sites;
    let boundary = model
        .edges
        .last()
        .map(|e| e.amplitude * model.boundary_sign)
        .unwrap_or(0.0);
    let mut circuit = Circuit::new(n);
    for (label, bonds) in cyclic_bonds(n) {
        let gates = bonds
            .into_iter()
            .map(|(a, b)| {
                let amp = if label == SegmentLabel::MixerBc { boundary } else { model.t };
                Gate::XyPair { a, b, theta: beta * amp }
            })
            .collect();
        circuit.push_segment(label, gates)?;
    }
    Ok(circuit)
}

/// Closed-form Table I counts.
pub fn init_count(n: usize, d: usize, k: usize) -> GateCount {
    let (nd, k) = ((n * d) as u64, k as u64);
    GateCount::new((4 * nd + 8 * k + 1) * (nd - 2 * k) / 2, (nd * nd - 4 * k * k) / 2)
}

pub fn phase_count(n: usize, d: usize) -> GateCount {
    let nd = (n * d) as u64;
    GateCount::new(nd * (nd + 1) / 2, nd * (nd - 1))
}

pub fn mixer_count(n: usize, d: usize, kind: DriverKind) -> GateCount {
    let (n, d) = (n as u64, d as u64);
    match kind {
        DriverKind::Cyclic => GateCount::new(6 * n * d, 2 * n * d),
        DriverKind::Ladder | DriverKind::Custom => {
            GateCount::new(2 * n * n * d + 10 * n * d - 6 * n, 2 * n * n * d + 2 * n * d - 2 * n)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRow {
    pub unitary: &'static str,
    pub formula: GateCount,
    pub census: Option<GateCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateCountReport {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub driver: DriverKind,
    pub rows: Vec<CountRow>,
    pub total_formula: GateCount,
    pub total_census: Option<GateCount>,
    #[serde(rename = "match")]
    pub matches: bool,
}

/// Table I totals for `p` layers; cyclic circuits are also built and counted.
pub fn count_formulas(n: usize, d: usize, k: usize, p: usize, kind: DriverKind) -> Result<GateCountReport> {
    let nd = n * d;
    if nd == 0 || nd % 2 != 0 || 2 * k > nd {
        return Err(Error::input(format!("need even N*D >= 2 and K <= N*D/2, got N={n}, D={d}, K={k}")));
    }
    let rows_formula = [
        ("U_init", init_count(n, d, k)),
        ("U_p", phase_count(n, d)),
        ("U_m", mixer_count(n, d, kind)),
    ];
    let total_formula = rows_formula[0].1 + (rows_formula[1].1 + rows_formula[2].1) * p as u64;

    let census = if kind == DriverKind::Cyclic && 2 * k < nd {
        Some(cyclic_census(n, d, k)?)
    } else {
        None
    };
    let rows: Vec<CountRow> = rows_formula
        .iter()
        .enumerate()
        .map(|(i, &(unitary, formula))| CountRow {
            unitary,
            formula,
            census: census.map(|c| c[i]),
        })
        .collect();
    let total_census = census.map(|c| c[0] + (c[1] + c[2]) * p as u64);
    let matches = match total_census {
        Some(t) => t == total_formula && rows.iter().all(|r| r.census == Some(r.formula)),
        None => true,
    };
    Ok(GateCountReport {
        n,
        d,
        k,
        p,
        driver: kind,
        rows,
        total_formula,
        total_census,
        matches,
    })
}

/// Censuses of the built `U_init`, `U_p`, `U_m` for the cyclic driver.
fn cyclic_census(n: usize, d: usize, k: usize) -> Result<[GateCount; 3]> {
    let nd = n * d;
    let m = nd / 2 - k;
    let model = driver::build_cyclic(n, d, m, 1.0)?;
    let basis = driver::ground_orbitals(&model, m)?;
    Ok([
        build_init_circuit(&basis)?.census(),
        phase_circuit_from_ising(&IsingForm::zeros(nd), 0.0)?.census(),
        build_mixer_cyclic(&model, 0.0)?.census(),
    ])
}

/// One stage of an executable ansatz.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Init(Circuit),
    Phase { gamma: f64, circuit: Circuit },
    Mixer { beta: f64, circuit: Circuit },
    /// Exact `exp(-i beta H_d)`; `slots` are the Table I counts charged to it.
    ExactMixer { beta: f64, slots: GateCount },
}

impl Step {
    pub fn census(&self) -> GateCount {
        match self {
            Step::Init(c) | Step::Phase { circuit: c, .. } | Step::Mixer { circuit: c, .. } => c.census(),
            Step::ExactMixer { slots, .. } => *slots,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzPlan {
    pub n_qubits: usize,
    pub kind: DriverKind,
    pub steps: Vec<Step>,
}

impl AnsatzPlan {
    pub fn depth(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Phase { .. })).count()
    }

    /// Gate totals; the exact mixer contributes its Table I counts.
    pub fn gate_counts(&self) -> GateCount {
        self.steps.iter().map(Step::census).fold(GateCount::default(), |a, b| a + b)
    }
}

/// Everything about an ansatz that does not depend on the angles.
#[derive(Debug, Clone)]
pub struct Ansatz {
    pub kind: DriverKind,
    pub shape: (usize, usize, usize),
    pub m: usize,
    pub t: f64,
    pub ising: IsingForm,
    /// Driver with hopping `t`.
    pub model: HoppingModel,
    pub orbitals: OrbitalBasis,
    pub init: Circuit,
    init_state: StateVector,
    /// `E(k) - offset`, the exponent implemented by the phase circuit.
    phase_energies: Vec<f64>,
    propagator: Option<QuadraticPropagator>,
}

impl Ansatz {
    /// Builds the driver at unit hopping for the orbitals, then rescales it to `t`.
    pub fn new(instance: &PortfolioInstance, kind: DriverKind, t: f64) -> Result<Self> {
        instance.validate()?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::input(format!("hopping t must be finite and >= 0, got {t}")));
        }
        let (n, d, k) = (instance.n, instance.d, instance.k);
        let m = instance.particles();
        let unit = unit_driver(kind, n, d, m)?;
        let orbitals = driver::ground_orbitals(&unit, m)?;
        let init = build_init_circuit(&orbitals)?;
        let mut init_state = StateVector::vacuum(n * d)?;
        init.apply(&mut init_state)?;
        let ising = instance.ising();
        let phase_energies = instance.cost_table().into_iter().map(|e| e - ising.offset).collect();
        let model = unit.scaled(t);
        let propagator = match kind {
            DriverKind::Cyclic => None,
            _ => Some(QuadraticPropagator::new(&model.matrix())?),
        };
        Ok(Ansatz {
            kind,
            shape: (n, d, k),
            m,
            t,
            ising,
            model,
            orbitals,
            init,
            init_state,
            phase_energies,
            propagator,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.model.n_sites
    }

    /// `|phi_0>` as prepared by the init circuit.
    pub fn initial_state(&self) -> &StateVector {
        &self.init_state
    }

    pub fn plan(&self, gamma: &[f64], beta: &[f64]) -> Result<AnsatzPlan> {
        if gamma.len() != beta.len() {
            return Err(Error::input(format!(
                "gamma has {} entries, beta has {}",
                gamma.len(),
                beta.len()
            )));
        }
        let (n, d, _) = self.shape;
        let mut steps = vec![Step::Init(self.init.clone())];
        for (&g, &b) in gamma.iter().zip(beta) {
            steps.push(Step::Phase {
                gamma: g,
                circuit: phase_circuit_from_ising(&self.ising, g)?,
            });
            steps.push(match self.kind {
                DriverKind::Cyclic => Step::Mixer {
                    beta: b,
                    circuit: build_mixer_cyclic(&self.model, b)?,
                },
                _ => Step::ExactMixer {
                    beta: b,
                    slots: mixer_count(n, d, self.kind),
                },
            });
        }
        Ok(AnsatzPlan {
            n_qubits: self.n_qubits(),
            kind: self.kind,
            steps,
        })
    }

    /// Noiseless action of one step, using fused kernels.
    pub fn apply_step(&self, state: &mut StateVector, step: &Step) -> Result<()> {
        match step {
            Step::Init(_) => {
                *state = self.init_state.clone();
                Ok(())
            }
            Step::Phase { gamma, .. } => self.apply_phase(state, *gamma),
            Step::Mixer { circuit, .. } => circuit.apply(state),
            Step::ExactMixer { beta, .. } => self.apply_exact_mixer(state, *beta),
        }
    }

    pub fn apply_phase(&self, state: &mut StateVector, gamma: f64) -> Result<()> {
        state.apply_diagonal_evolution(&self.phase_energies, gamma)
    }

    pub fn apply_exact_mixer(&self, state: &mut StateVector, beta: f64) -> Result<()> {
        match &self.propagator {
            Some(p) => p.apply(state, beta),
            None => QuadraticPropagator::new(&self.model.matrix())?.apply(state, beta),
        }
    }

    pub fn run(&self, plan: &AnsatzPlan) -> Result<StateVector> {
        let mut state = self.init_state.clone();
        for step in &plan.steps {
            self.apply_step(&mut state, step)?;
        }
        Ok(state)
    }

    /// `|psi_p(gamma, beta)>` without materializing gate lists.
    pub fn state(&self, gamma: &[f64], beta: &[f64]) -> Result<StateVector> {
        if gamma.len() != beta.len() {
            return Err(Error::input(format!(
                "gamma has {} entries, beta has {}",
                gamma.len(),
                beta.len()
            )));
        }
        let mut state = self.init_state.clone();
        for (&g, &b) in gamma.iter().zip(beta) {
            self.apply_phase(&mut state, g)?;
            match self.kind {
                DriverKind::Cyclic => build_mixer_cyclic(&self.model, b)?.apply(&mut state)?,
                _ => self.apply_exact_mixer(&mut state, b)?,
            }
        }
        Ok(state)
    }
}

pub fn unit_driver(kind: DriverKind, n: usize, d: usize, m: usize) -> Result<HoppingModel> {
    match kind {
        DriverKind::Cyclic => driver::build_cyclic(n, d, m, 1.0),
        DriverKind::Ladder => driver::build_ladder(n, d, 1.0, 1.0),
        DriverKind::Custom => Err(Error::input("custom drivers cannot build an ansatz")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::fixed_weight;
    use crate::statevector::{apply_quadratic_exponential, slater_state};
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, seed: u64) -> StateVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps = (0..1 << n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut s = StateVector::from_amplitudes(n, amps).unwrap();
        s.normalize();
        s
    }

    fn random_orbitals(m: usize, n: usize, seed: u64) -> OrbitalBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = a.qr().q();
        let orbitals = q.columns(0, m).transpose();
        OrbitalBasis {
            m,
            orbitals,
            energies: vec![0.0; m],
            e0: 0.0,
            degenerate: false,
            labels: vec![String::new(); m],
        }
    }

    /// Smallest `max |a - s b|` over `s = ±1`.
    fn signed_distance(a: &StateVector, b: &StateVector) -> f64 {
        let d = |s: f64| {
            a.amplitudes()
                .iter()
                .zip(b.amplitudes())
                .map(|(x, y)| (x - y * s).norm())
                .fold(0.0, f64::max)
        };
        d(1.0).min(d(-1.0))
    }

    #[test]
    fn composites_match_their_expansion() {
        let s = random_state(4, 1);
        for g in [
            Gate::Givens { a: 1, b: 2, theta: 0.83 },
            Gate::Givens { a: 0, b: 1, theta: -2.1 },
            Gate::XyPair { a: 0, b: 3, theta: 1.3 },
            Gate::XyPair { a: 2, b: 1, theta: -0.4 },
        ] {
            let mut fused = s.clone();
            g.apply(&mut fused).unwrap();
            let mut expanded = s.clone();
            for p in g.expand() {
                p.apply(&mut expanded).unwrap();
            }
            assert!(fused.max_distance(&expanded) < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn expansion_sizes() {
        let c = |g: Gate| {
            let e = g.expand();
            (
                e.iter().filter(|p| p.qubits().len() == 1).count(),
                e.iter().filter(|p| p.qubits().len() == 2).count(),
            )
        };
        assert_eq!(c(Gate::Givens { a: 0, b: 1, theta: 0.1 }), (8, 2));
        assert_eq!(c(Gate::XyPair { a: 0, b: 1, theta: 0.1 }), (6, 2));
    }

    #[test]
    fn init_circuit_matches_determinants() {
        for (m, n, seed) in [(2, 4, 1), (1, 5, 2), (3, 6, 3), (4, 4, 4), (3, 7, 5)] {
            let basis = random_orbitals(m, n, seed);
            let circuit = build_init_circuit(&basis).unwrap();
            assert_eq!(circuit.gates().filter(|g| matches!(g, Gate::Givens { .. })).count(), m * (n - m));
            let mut s = StateVector::vacuum(n).unwrap();
            circuit.apply(&mut s).unwrap();
            let oracle = slater_state(&basis.orbitals).unwrap();
            assert!(signed_distance(&s, &oracle) < 1e-8, "m={m} n={n}");
            // determinants directly over all subsets
            for bits in fixed_weight(n, m) {
                let cols: Vec<usize> = (0..n).filter(|i| bits >> i & 1 == 1).collect();
                let sub = basis.orbitals.select_columns(&cols);
                let det = sub.determinant();
                assert!((oracle.amplitude(bits).re - det).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_circuit_for_unit_orbital_is_single_x() {
        let mut orbitals = DMatrix::zeros(1, 5);
        orbitals[(0, 0)] = 1.0;
        let basis = OrbitalBasis {
            m: 1,
            orbitals,
            energies: vec![0.0],
            e0: 0.0,
            degenerate: false,
            labels: vec![String::new()],
        };
        let circuit = build_init_circuit(&basis).unwrap();
        assert_eq!(circuit.pruned().gates().copied().collect::<Vec<_>>(), vec![Gate::X(0)]);
        let mut s = StateVector::vacuum(5).unwrap();
        circuit.apply_expanded(&mut s).unwrap();
        assert!((s.amplitude(1).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_rejects_non_orthonormal() {
        let basis = OrbitalBasis {
            m: 1,
            orbitals: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            energies: vec![0.0],
            e0: 0.0,
            degenerate: false,
            labels: vec![String::new()],
        };
        assert!(matches!(build_init_circuit(&basis), Err(Error::Validation { .. })));
    }

    #[test]
    fn init_counts_8_2_4() {
        let model = driver::build_cyclic(8, 2, 4, 1.0).unwrap();
        let basis = driver::ground_orbitals(&model, 4).unwrap();
        assert_eq!(build_init_circuit(&basis).unwrap().census(), GateCount::new(388, 96));
    }

    #[test]
    fn phase_circuit_imposes_cost_phases() {
        let inst = crate::instance::generate_instance(&crate::instance::GeneratorSpec::new(3, 3, 2, 1, 0.6)).unwrap();
        let gamma = 0.37;
        let circuit = build_phase_circuit(&inst, gamma).unwrap();
        assert_eq!(circuit.census(), GateCount::new(21, 30));
        let n = inst.n_sites();
        let ref_cost = inst.cost(0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let b: u64 = rng.gen_range(0..1 << n);
            let mut s = StateVector::basis_state(n, b).unwrap();
            circuit.apply(&mut s).unwrap();
            let mut z = StateVector::vacuum(n).unwrap();
            circuit.apply(&mut z).unwrap();
            let rel = s.amplitude(b) / z.amplitude(0);
            let expect = Complex64::from_polar(1.0, -gamma * (inst.cost(b).unwrap() - ref_cost));
            assert!((rel - expect).norm() < 1e-9);
        }
        let mut s = random_state(n, 4);
        let before = s.clone();
        phase_circuit_from_ising(&inst.ising(), 0.0).unwrap().apply(&mut s).unwrap();
        assert!(s.max_distance(&before) < 1e-15);
    }

    #[test]
    fn phase_counts_8_2() {
        let c = phase_circuit_from_ising(&IsingForm::zeros(16), 0.1).unwrap().census();
        assert_eq!(c, GateCount::new(136, 240));
    }

    #[test]
    fn mixer_counts_and_order() {
        let model = driver::build_cyclic(8, 2, 4, 1.0).unwrap();
        let c = build_mixer_cyclic(&model, 0.3).unwrap();
        assert_eq!(c.census(), GateCount::new(96, 32));
        let labels: Vec<_> = c.segments.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![SegmentLabel::MixerI, SegmentLabel::MixerII, SegmentLabel::MixerBc]);
        assert_eq!(c.segments[0].gates.len(), 8);
        assert_eq!(c.segments[1].gates.len(), 7);
        assert!(build_mixer_cyclic(&driver::build_ladder(4, 2, 1.0, 1.0).unwrap(), 0.1).is_err());
    }

    #[test]
    fn mixer_segments_equal_partial_exponentials() {
        let (n_sites, m) = (6, 2);
        let model = driver::build_cyclic(3, 2, m, 0.9).unwrap();
        let beta = 0.71;
        let circuit = build_mixer_cyclic(&model, beta).unwrap();
        let h = model.matrix();
        for seg in &circuit.segments {
            let bonds: Vec<(usize, usize)> = seg.gates.iter().map(|g| (g.qubits()[0], g.qubits()[1])).collect();
            let mut part = DMatrix::zeros(n_sites, n_sites);
            for (a, b) in bonds {
                part[(a, b)] = h[(a, b)];
                part[(b, a)] = h[(b, a)];
            }
            for bits in fixed_weight(n_sites, m) {
                let mut x = StateVector::basis_state(n_sites, bits).unwrap();
                let mut y = x.clone();
                for g in &seg.gates {
                    for p in g.expand() {
                        p.apply(&mut x).unwrap();
                    }
                }
                apply_quadratic_exponential(&mut y, &part, beta).unwrap();
                assert!(x.max_distance(&y) < 1e-9, "{:?}", seg.label);
            }
        }
    }

    #[test]
    fn count_formulas_match_paper_totals() {
        for p in 1..=3u64 {
            let cyc = count_formulas(8, 2, 4, p as usize, DriverKind::Cyclic).unwrap();
            assert_eq!(cyc.total_formula, GateCount::new(388 + 232 * p, 96 + 272 * p));
            assert!(cyc.matches);
            let lad = count_formulas(8, 2, 4, p as usize, DriverKind::Ladder).unwrap();
            assert_eq!(lad.total_formula, GateCount::new(388 + 504 * p, 96 + 512 * p));
        }
        let zero = count_formulas(8, 2, 4, 0, DriverKind::Ladder).unwrap();
        assert_eq!(zero.total_formula, GateCount::new(388, 96));
        assert_eq!(mixer_count(8, 2, DriverKind::Ladder), GateCount::new(368, 272));
    }

    #[test]
    fn init_formula_identity_over_grid() {
        for n in 1..=10 {
            for d in 1..=10 {
                let nd = n * d;
                if nd % 2 != 0 || nd > 40 {
                    continue;
                }
                for k in 0..=nd / 2 {
                    let m = (nd / 2 - k) as u64;
                    let single = 8 * m * (nd as u64 - m) + m;
                    assert_eq!(init_count(n, d, k).single_qubit, single);
                    assert_eq!(init_count(n, d, k).two_qubit, 2 * m * (nd as u64 - m));
                }
            }
        }
    }

    #[test]
    fn gate_json_schema() {
        let v: serde_json::Value = serde_json::to_value(Gate::Ry(2, 0.5)).unwrap();
        assert_eq!(v, serde_json::json!({"gate": "Ry", "qubits": [2], "angle": 0.5}));
        let v: serde_json::Value = serde_json::to_value(Gate::Cnot { control: 1, target: 0 }).unwrap();
        assert_eq!(v, serde_json::json!({"gate": "CNOT", "qubits": [1, 0]}));
    }

    #[test]
    fn out_of_range_gate_rejected() {
        let mut c = Circuit::new(2);
        assert!(c.push_segment(SegmentLabel::Init, vec![Gate::X(2)]).is_err());
    }
}
