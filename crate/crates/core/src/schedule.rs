//! Angle schedules, the energy objective and BFGS refinement.

use log::{debug, info};
use serde::Serialize;

use crate::circuits::{unit_driver, Ansatz};
use crate::driver::{self, DriverKind};
use crate::error::{Error, Result};
use crate::instance::{brute_force_spectrum, ConstrainedSpectrum, PortfolioInstance};
use crate::statevector::StateVector;

/// Default dimensionless product `W * delta_t`.
pub const DEFAULT_WDT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnsatzParams {
    pub p: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta_t: f64,
}

impl AnsatzParams {
    pub fn new(gamma: Vec<f64>, beta: Vec<f64>, delta_t: f64) -> Result<Self> {
        if gamma.len() != beta.len() {
            return Err(Error::input(format!(
                "gamma has {} entries, beta has {}",
                gamma.len(),
                beta.len()
            )));
        }
        if gamma.is_empty() {
            return Err(Error::input("depth p must be at least 1"));
        }
        Ok(AnsatzParams {
            p: gamma.len(),
            gamma,
            beta,
            delta_t,
        })
    }

    /// Same angles followed by a `(0, 0)` layer, which leaves the state unchanged.
    pub fn extended(&self) -> AnsatzParams {
        let mut out = self.clone();
        out.gamma.push(0.0);
        out.beta.push(0.0);
        out.p += 1;
        out
    }

    fn to_vec(&self, scale: f64) -> Vec<f64> {
        self.gamma.iter().chain(&self.beta).map(|v| v * scale).collect()
    }

    fn from_vec(x: &[f64], scale: f64, delta_t: f64) -> AnsatzParams {
        let p = x.len() / 2;
        AnsatzParams {
            p,
            gamma: x[..p].iter().map(|v| v / scale).collect(),
            beta: x[p..].iter().map(|v| v / scale).collect(),
            delta_t,
        }
    }
}

/// Time-discretized annealing angles `gamma_j = (2j-1) dt / 2p`, `beta_j = dt - gamma_j`.
pub fn qaa_schedule(p: usize, delta_t: f64) -> Result<AnsatzParams> {
    if p == 0 {
        return Err(Error::input("depth p must be at least 1"));
    }
    if !(delta_t > 0.0 && delta_t.is_finite()) {
        return Err(Error::input(format!("delta_t must be positive, got {delta_t}")));
    }
    let frac = |j: usize| (2 * j - 1) as f64 / (2 * p) as f64;
    let gamma = (1..=p).map(|j| frac(j) * delta_t).collect();
    let beta = (1..=p).map(|j| (1.0 - frac(j)) * delta_t).collect();
    AnsatzParams::new(gamma, beta, delta_t)
}

/// An instance paired with a driver, normalized by `t = W / W_hop`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub instance: PortfolioInstance,
    pub kind: DriverKind,
    pub spectrum: ConstrainedSpectrum,
    pub w_hop: f64,
    pub ansatz: Ansatz,
    cost: Vec<f64>,
}

impl Problem {
    pub fn new(instance: &PortfolioInstance, kind: DriverKind) -> Result<Self> {
        let m = instance.particles();
        let spectrum = brute_force_spectrum(instance, m)?;
        let unit = unit_driver(kind, instance.n, instance.d, m)?;
        let w_hop = driver::hopping_scale(&unit, m);
        let t = if w_hop > 0.0 { spectrum.w / w_hop } else { 0.0 };
        info!("{kind}: W = {:.6}, W_hop = {w_hop:.6}, t = {t:.6}", spectrum.w);
        let ansatz = Ansatz::new(instance, kind, t)?;
        Ok(Problem {
            instance: instance.clone(),
            kind,
            spectrum,
            w_hop,
            ansatz,
            cost: instance.cost_table(),
        })
    }

    pub fn t(&self) -> f64 {
        self.ansatz.t
    }

    pub fn w(&self) -> f64 {
        self.spectrum.w
    }

    /// `delta_t` for a given `W * delta_t`; falls back to `wdt` itself when `W = 0`.
    pub fn delta_t_for(&self, wdt: f64) -> f64 {
        if self.spectrum.w > 0.0 {
            wdt / self.spectrum.w
        } else {
            wdt
        }
    }

    pub fn cost_table(&self) -> &[f64] {
        &self.cost
    }

    pub fn state(&self, params: &AnsatzParams) -> Result<StateVector> {
        self.ansatz.state(&params.gamma, &params.beta)
    }

    pub fn expectation(&self, state: &StateVector) -> f64 {
        state
            .amplitudes()
            .iter()
            .zip(&self.cost)
            .map(|(a, e)| a.norm_sqr() * e)
            .sum()
    }

    pub fn energy(&self, params: &AnsatzParams) -> Result<f64> {
        self.energy_of(&params.gamma, &params.beta)
    }

    pub fn energy_of(&self, gamma: &[f64], beta: &[f64]) -> Result<f64> {
        let e = self.expectation(&self.ansatz.state(gamma, beta)?);
        if !e.is_finite() {
            return Err(Error::Numerical(format!("energy is {e} at gamma={gamma:?}, beta={beta:?}")));
        }
        Ok(e)
    }

    /// `(E - E_min) / W`.
    pub fn normalized(&self, energy: f64) -> f64 {
        self.spectrum.normalized(energy)
    }

    /// Coordinates are `(gamma W, beta W)` and the objective `E / W`, so the
    /// optimizer sees O(1) numbers for any instance scale.
    fn scale(&self) -> f64 {
        if self.spectrum.w > 0.0 {
            self.spectrum.w
        } else {
            1.0
        }
    }
}

/// Energy of `params` for a freshly built problem.
pub fn energy(instance: &PortfolioInstance, kind: DriverKind, params: &AnsatzParams) -> Result<f64> {
    Problem::new(instance, kind)?.energy(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Gradient infinity-norm and per-iteration improvement threshold, in `E / W` units.
    pub tol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
    pub trace: bool,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iter: 500,
            tol: 1e-8,
            fd_step: 1e-5,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub gradient_norm: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationResult {
    pub initial: AnsatzParams,
    pub optimal: AnsatzParams,
    pub initial_energy: f64,
    pub optimal_energy: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<IterationRecord>>,
}

/// Central differences with step `h * max(1, |x_i|)`.
pub fn finite_difference_gradient(f: &mut impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        g.push((up - down) / (2.0 * step));
    }
    Ok(g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// BFGS with Armijo backtracking from `params0`.
pub fn optimize(problem: &Problem, params0: &AnsatzParams, opts: &OptimizeOptions) -> Result<OptimizationResult> {
    if params0.gamma.len() != params0.beta.len() || params0.p != params0.gamma.len() {
        return Err(Error::input("gamma and beta lengths must both equal p"));
    }
    let scale = problem.scale();
    let delta_t = params0.delta_t;
    let mut evaluations = 0usize;
    let mut objective = |x: &[f64]| -> Result<f64> {
        evaluations += 1;
        let p = AnsatzParams::from_vec(x, scale, delta_t);
        Ok(problem.energy(&p)? / scale)
    };

    let n = 2 * params0.p;
    let mut x = params0.to_vec(scale);
    let mut f = objective(&x)?;
    let initial_energy = f * scale;
    let mut g = finite_difference_gradient(&mut objective, &x, opts.fd_step)?;
    let mut h = identity(n);
    let mut h_scaled = false;
    let mut trace = opts.trace.then(Vec::new);
    let mut record = |it: usize, x: &[f64], f: f64, g: &[f64]| {
        if let Some(t) = trace.as_mut() {
            let p = AnsatzParams::from_vec(x, scale, delta_t);
            t.push(IterationRecord {
                iteration: it,
                energy: f * scale,
                gradient_norm: inf_norm(g),
                gamma: p.gamma,
                beta: p.beta,
            });
        }
    };
    record(0, &x, f, &g);

    let mut converged = inf_norm(&g) < opts.tol;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let ft = objective(&trial)?;
            if ft <= f + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            debug!("line search stalled at iteration {iterations}");
            converged = true;
            break;
        };
        let g_new = finite_difference_gradient(&mut objective, &x_new, opts.fd_step)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let improvement = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        record(iterations, &x, f, &g);

        if inf_norm(&g) < opts.tol || improvement < opts.tol {
            converged = true;
            break;
        }
        let sy = dot(&s, &y);
        if sy > 1e-14 {
            if !h_scaled {
                let gamma = sy / dot(&y, &y);
                h = identity(n).into_iter().map(|row| row.into_iter().map(|v| v * gamma).collect()).collect();
                h_scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
    }

    Ok(OptimizationResult {
        initial: params0.clone(),
        optimal: AnsatzParams::from_vec(&x, scale, delta_t),
        initial_energy,
        optimal_energy: f * scale,
        iterations,
        evaluations,
        converged,
        trace,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Optimized results for `p = 1..=max_p`. Each depth starts from both the
/// annealing schedule and the previous optimum padded with a zero layer, and
/// keeps the lower of the two.
pub fn depth_sweep(problem: &Problem, max_p: usize, delta_t: f64, opts: &OptimizeOptions) -> Result<Vec<OptimizationResult>> {
    let mut out: Vec<OptimizationResult> = Vec::with_capacity(max_p);
    for p in 1..=max_p {
        let fresh = optimize(problem, &qaa_schedule(p, delta_t)?, opts)?;
        let best = match out.last() {
            Some(prev) => {
                let nested = optimize(problem, &prev.optimal.extended(), opts)?;
                if nested.optimal_energy < fresh.optimal_energy {
                    nested
                } else {
                    fresh
                }
            }
            None => fresh,
        };
        info!("p = {p}: E = {:.8}", best.optimal_energy);
        out.push(best);
    }
    Ok(out)
}
