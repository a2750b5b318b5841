//! Stochastic Pauli-insertion trajectories.
//!
//! Every primitive gate is a noise slot: after a one-qubit gate a uniformly
//! random X, Y or Z fires with probability `p1`, after a two-qubit gate one of
//! the 15 non-identity two-qubit Paulis fires with probability `p2`. The exact
//! mixer has no gates; it is charged its Table I counts as slots, and a fired
//! slot lands at a uniform fraction `tau` of the evolution on a random driver
//! edge (two-qubit) or a random qubit (one-qubit).
//!
//! Trajectory `i` draws from a ChaCha8 stream `i` under the master seed, so
//! results do not depend on how trajectories are distributed over threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::StateVector;
use crate::circuits::{Ansatz, AnsatzPlan, Circuit, Gate, GateCount, Step};
use crate::error::{Error, Result};

/// Offset separating measurement streams from event streams.
const SHOT_SEED_SALT: u64 = 0x5DEE_CE66_D1CE_4E5B;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn apply(self, state: &mut StateVector, q: usize) -> Result<()> {
        match self {
            Pauli::I => Ok(()),
            Pauli::X => state.apply_x(q),
            Pauli::Y => state.apply_y(q),
            Pauli::Z => state.apply_z(q),
        }
    }

    /// Index 1..16 of a non-identity two-qubit Pauli as `(first, second)`.
    pub fn pair(index: usize) -> (Pauli, Pauli) {
        (Pauli::ALL[index / 4], Pauli::ALL[index % 4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub p1: f64,
    pub p2: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(p1: f64, p2: f64, seed: u64) -> Result<Self> {
        for (name, p) in [("noise_p1", p1), ("noise_p2", p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(name, format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(NoiseModel { p1, p2, seed })
    }

    pub fn noiseless(seed: u64) -> Self {
        NoiseModel { p1: 0.0, p2: 0.0, seed }
    }

    pub fn is_noiseless(&self) -> bool {
        self.p1 == 0.0 && self.p2 == 0.0
    }

    /// Event stream of trajectory `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Measurement stream of trajectory `index`.
    pub fn shot_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ SHOT_SEED_SALT);
        rng.set_stream(index);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    /// Primitive index the Pauli follows (circuit steps).
    position: usize,
    /// Fraction of the exact evolution elapsed (exact mixer).
    tau: f64,
    ops: [(usize, Pauli); 2],
}

impl Event {
    fn apply(&self, state: &mut StateVector) -> Result<()> {
        for (q, p) in self.ops {
            p.apply(state, q)?;
        }
        Ok(())
    }
}

fn draw_one(rng: &mut ChaCha8Rng, q: usize) -> [(usize, Pauli); 2] {
    let p = Pauli::ALL[rng.gen_range(1..4)];
    [(q, p), (q, Pauli::I)]
}

fn draw_two(rng: &mut ChaCha8Rng, a: usize, b: usize) -> [(usize, Pauli); 2] {
    let (pa, pb) = Pauli::pair(rng.gen_range(1..16));
    [(a, pa), (b, pb)]
}

fn sample_gate_events(prims: &[Gate], noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let mut out = Vec::new();
    for (position, g) in prims.iter().enumerate() {
        let qs = g.qubits();
        let p = if qs.len() == 1 { noise.p1 } else { noise.p2 };
        if p > 0.0 && rng.gen::<f64>() < p {
            let ops = if qs.len() == 1 {
                draw_one(rng, qs[0])
            } else {
                draw_two(rng, qs[0], qs[1])
            };
            out.push(Event { position, tau: 0.0, ops });
        }
    }
    out
}

fn sample_exact_events(
    slots: GateCount,
    n_qubits: usize,
    edges: &[(usize, usize)],
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Vec<Event> {
    let mut out = Vec::new();
    for _ in 0..slots.single_qubit {
        if noise.p1 > 0.0 && rng.gen::<f64>() < noise.p1 {
            let tau = rng.gen::<f64>();
            let q = rng.gen_range(0..n_qubits);
            out.push(Event { position: 0, tau, ops: draw_one(rng, q) });
        }
    }
    for _ in 0..slots.two_qubit {
        if noise.p2 > 0.0 && rng.gen::<f64>() < noise.p2 && !edges.is_empty() {
            let tau = rng.gen::<f64>();
            let (a, b) = edges[rng.gen_range(0..edges.len())];
            out.push(Event { position: 0, tau, ops: draw_two(rng, a, b) });
        }
    }
    out.sort_by(|x, y| x.tau.total_cmp(&y.tau));
    out
}

/// Circuit executed primitive by primitive with sampled Pauli insertions.
pub fn run_noisy_circuit(circuit: &Circuit, initial: &StateVector, noise: &NoiseModel, index: u64) -> Result<StateVector> {
    let prims = circuit.expanded();
    let events = sample_gate_events(&prims, noise, &mut noise.rng(index));
    let mut state = initial.clone();
    apply_primitives(&prims, 0, &events, &mut state)?;
    Ok(state)
}

/// Applies `prims` (global offset `base`) with the events at their positions.
fn apply_primitives(prims: &[Gate], base: usize, events: &[Event], state: &mut StateVector) -> Result<()> {
    let mut ev = events.iter().peekable();
    while ev.peek().is_some_and(|e| e.position < base) {
        ev.next();
    }
    for (i, g) in prims.iter().enumerate() {
        g.apply(state)?;
        while let Some(e) = ev.next_if(|e| e.position == base + i) {
            e.apply(state)?;
        }
    }
    Ok(())
}

/// Per-step data for fast noisy execution of one plan.
struct StepLayout {
    prims: Vec<Gate>,
    /// `(composite, first primitive, primitive count)` for circuit steps.
    spans: Vec<(Gate, usize, usize)>,
}

impl StepLayout {
    fn new(circuit: &Circuit) -> Self {
        let mut prims = Vec::new();
        let mut spans = Vec::new();
        for g in circuit.gates() {
            let e = g.expand();
            spans.push((*g, prims.len(), e.len()));
            prims.extend(e);
        }
        StepLayout { prims, spans }
    }
}

/// Runs noisy trajectories of a fixed plan, reusing noiseless prefixes.
pub struct TrajectoryRunner<'a> {
    ansatz: &'a Ansatz,
    plan: &'a AnsatzPlan,
    noise: NoiseModel,
    layouts: Vec<Option<StepLayout>>,
    /// `boundary[s]` is the noiseless state entering step `s`; the last entry is the output.
    boundary: Vec<StateVector>,
    edges: Vec<(usize, usize)>,
}

impl<'a> TrajectoryRunner<'a> {
    pub fn new(ansatz: &'a Ansatz, plan: &'a AnsatzPlan, noise: NoiseModel) -> Result<Self> {
        if plan.n_qubits != ansatz.n_qubits() {
            return Err(Error::input("plan and ansatz disagree on the qubit count"));
        }
        let layouts = plan
            .steps
            .iter()
            .map(|s| match s {
                Step::Init(c) | Step::Phase { circuit: c, .. } | Step::Mixer { circuit: c, .. } => {
                    Some(StepLayout::new(c))
                }
                Step::ExactMixer { .. } => None,
            })
            .collect();
        let mut boundary = Vec::with_capacity(plan.steps.len() + 1);
        let mut state = StateVector::vacuum(plan.n_qubits)?;
        boundary.push(state.clone());
        for step in &plan.steps {
            ansatz.apply_step(&mut state, step)?;
            boundary.push(state.clone());
        }
        let edges = ansatz.model.edges.iter().map(|e| (e.a, e.b)).collect();
        Ok(TrajectoryRunner {
            ansatz,
            plan,
            noise,
            layouts,
            boundary,
            edges,
        })
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn noiseless_output(&self) -> &StateVector {
        self.boundary.last().expect("boundary holds the vacuum")
    }

    fn sample_events(&self, index: u64) -> Vec<Vec<Event>> {
        let mut rng = self.noise.rng(index);
        self.plan
            .steps
            .iter()
            .zip(&self.layouts)
            .map(|(step, layout)| match (step, layout) {
                (Step::ExactMixer { slots, .. }, _) => {
                    sample_exact_events(*slots, self.plan.n_qubits, &self.edges, &self.noise, &mut rng)
                }
                (_, Some(l)) => sample_gate_events(&l.prims, &self.noise, &mut rng),
                (_, None) => Vec::new(),
            })
            .collect()
    }

    /// Output state of trajectory `index`.
    pub fn run(&self, index: u64) -> Result<StateVector> {
        let events = self.sample_events(index);
        let Some(first) = events.iter().position(|e| !e.is_empty()) else {
            return Ok(self.noiseless_output().clone());
        };
        let mut state = self.boundary[first].clone();
        for s in first..self.plan.steps.len() {
            let step = &self.plan.steps[s];
            if events[s].is_empty() {
                self.ansatz.apply_step(&mut state, step)?;
                continue;
            }
            match (step, &self.layouts[s]) {
                (Step::Phase { .. }, Some(l)) => apply_diagonal_with_events(l, &events[s], &mut state)?,
                (Step::ExactMixer { beta, .. }, _) => self.apply_exact_with_events(*beta, &events[s], &mut state)?,
                (_, Some(l)) => apply_composites_with_events(l, &events[s], &mut state)?,
                (_, None) => unreachable!("circuit steps always have a layout"),
            }
        }
        Ok(state)
    }

    /// Same events as [`run`](Self::run), every gate applied as primitives.
    pub fn run_reference(&self, index: u64) -> Result<StateVector> {
        let events = self.sample_events(index);
        let mut state = StateVector::vacuum(self.plan.n_qubits)?;
        for (s, step) in self.plan.steps.iter().enumerate() {
            match (step, &self.layouts[s]) {
                (Step::ExactMixer { beta, .. }, _) => self.apply_exact_with_events(*beta, &events[s], &mut state)?,
                (_, Some(l)) => apply_primitives(&l.prims, 0, &events[s], &mut state)?,
                (_, None) => unreachable!("circuit steps always have a layout"),
            }
        }
        Ok(state)
    }

    fn apply_exact_with_events(&self, beta: f64, events: &[Event], state: &mut StateVector) -> Result<()> {
        let mut elapsed = 0.0;
        for e in events {
            self.ansatz.apply_exact_mixer(state, beta * (e.tau - elapsed))?;
            e.apply(state)?;
            elapsed = e.tau;
        }
        self.ansatz.apply_exact_mixer(state, beta * (1.0 - elapsed))
    }

    /// `f(index, state)` over trajectories `0..count`, in index order.
    pub fn map<T, F>(&self, count: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64, &StateVector) -> T + Sync,
    {
        (0..count)
            .into_par_iter()
            .map(|i| self.run(i).map(|s| f(i, &s)))
            .collect()
    }
}

/// Output of trajectory `index` of `plan` under `noise`.
pub fn run_noisy_trajectory(ansatz: &Ansatz, plan: &AnsatzPlan, noise: &NoiseModel, index: u64) -> Result<StateVector> {
    TrajectoryRunner::new(ansatz, plan, *noise)?.run(index)
}

fn apply_composites_with_events(layout: &StepLayout, events: &[Event], state: &mut StateVector) -> Result<()> {
    let mut k = 0;
    for &(gate, start, len) in &layout.spans {
        while k < events.len() && events[k].position < start {
            k += 1;
        }
        let hit = k < events.len() && events[k].position < start + len;
        if hit {
            apply_primitives(&layout.prims[start..start + len], start, &events[k..], state)?;
        } else {
            gate.apply(state)?;
        }
    }
    Ok(())
}

/// Diagonal phase step with events. Event-free `Rz` gates and
/// `CNOT-Rz-CNOT` blocks are accumulated into one phase table that is
/// flushed before any gate carrying an event.
fn apply_diagonal_with_events(layout: &StepLayout, events: &[Event], state: &mut StateVector) -> Result<()> {
    let prims = &layout.prims;
    let dim = state.amplitudes().len();
    let mut acc = vec![0.0f64; dim];
    let mut dirty = false;
    let mut k = 0;
    let mut i = 0;

    let flush = |acc: &mut [f64], dirty: &mut bool, state: &mut StateVector| {
        if *dirty {
            for (a, t) in state.amplitudes_mut().iter_mut().zip(acc.iter_mut()) {
                *a *= Complex64::from_polar(1.0, -*t);
                *t = 0.0;
            }
            *dirty = false;
        }
    };

    while i < prims.len() {
        while k < events.len() && events[k].position < i {
            k += 1;
        }
        let block = match (prims.get(i), prims.get(i + 1), prims.get(i + 2)) {
            (Some(Gate::Cnot { control: c1, target: t1 }), Some(Gate::Rz(q, _)), Some(Gate::Cnot { control: c2, target: t2 }))
                if c1 == c2 && t1 == t2 && q == t1 =>
            {
                3
            }
            _ => 1,
        };
        let hit = k < events.len() && events[k].position < i + block;
        match (hit, block, prims[i]) {
            (false, 3, _) => {
                let (Gate::Cnot { control, target }, Gate::Rz(_, phi)) = (prims[i], prims[i + 1]) else {
                    unreachable!()
                };
                let (cb, tb) = (1usize << control, 1usize << target);
                let half = phi / 2.0;
                for (idx, t) in acc.iter_mut().enumerate() {
                    let odd = ((idx & cb != 0) as u8) ^ ((idx & tb != 0) as u8);
                    *t += if odd == 1 { -half } else { half };
                }
                dirty = true;
            }
            (false, 1, Gate::Rz(q, phi)) => {
                let bit = 1usize << q;
                let half = phi / 2.0;
                for (idx, t) in acc.iter_mut().enumerate() {
                    *t += if idx & bit != 0 { -half } else { half };
                }
                dirty = true;
            }
            _ => {
                flush(&mut acc, &mut dirty, state);
                apply_primitives(&prims[i..i + block], i, &events[k..], state)?;
            }
        }
        i += block;
    }
    flush(&mut acc, &mut dirty, state);
    Ok(())
}
