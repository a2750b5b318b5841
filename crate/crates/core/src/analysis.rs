//! Energy histograms, Hamming-weight marginals, post-selection and run comparison.

use log::warn;
use serde::Serialize;

use crate::basis::{self, binomial, Bits};
use crate::circuits::GateCount;
use crate::driver::DriverKind;
use crate::error::{Error, Result};
use crate::instance::{brute_force_spectrum, ConstrainedSpectrum, PortfolioInstance};
use crate::schedule::OptimizationResult;
use crate::statevector::{Counts, StateVector};

pub const N_BINS: usize = 10;

/// One-sided 95% critical value of the standard normal.
pub const Z_95: f64 = 1.6448536269514722;

/// Sparse probability distribution over occupation integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub n_sites: usize,
    pub entries: Vec<(Bits, f64)>,
}

impl Distribution {
    pub fn from_state(state: &StateVector) -> Self {
        let entries = state
            .amplitudes()
            .iter()
            .enumerate()
            .filter_map(|(b, a)| {
                let p = a.norm_sqr();
                (p > 0.0).then_some((b as Bits, p))
            })
            .collect();
        Distribution {
            n_sites: state.n_qubits(),
            entries,
        }
    }

    pub fn from_counts(counts: &Counts) -> Self {
        Distribution {
            n_sites: counts.n_sites,
            entries: counts.frequencies(),
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn weight_distribution(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_sites + 1];
        for &(b, p) in &self.entries {
            out[basis::weight(b)] += p;
        }
        out
    }

    /// Restriction to weight `m`, renormalized, and the mass that was kept.
    pub fn post_select(&self, m: usize) -> (Distribution, f64) {
        let kept: Vec<_> = self.entries.iter().copied().filter(|&(b, _)| basis::weight(b) == m).collect();
        let mass: f64 = kept.iter().map(|e| e.1).sum();
        let total = self.total();
        let entries = if mass > 0.0 {
            kept.into_iter().map(|(b, p)| (b, p / mass)).collect()
        } else {
            Vec::new()
        };
        let fraction = if total > 0.0 { mass / total } else { 0.0 };
        (
            Distribution {
                n_sites: self.n_sites,
                entries,
            },
            fraction,
        )
    }
}

/// Keeps only weight-`m` outcomes; returns the retained share of shots.
pub fn post_select(counts: &Counts, m: usize) -> (Counts, f64) {
    let mut kept = Counts::new(counts.n_sites);
    for (&b, &c) in &counts.map {
        if basis::weight(b) == m {
            kept.add(b, c);
        }
    }
    let total = counts.total();
    let fraction = if total == 0 {
        0.0
    } else {
        kept.total() as f64 / total as f64
    };
    (kept, fraction)
}

/// Bin of `(E - E_min) / W`: `[k/10, (k+1)/10)`, with the top edge in the last bin.
pub fn bin_index(normalized: f64) -> usize {
    if normalized <= 0.0 {
        return 0;
    }
    ((normalized * N_BINS as f64).floor() as usize).min(N_BINS - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Bin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    /// Set when `W = 0` and everything sits in one bin.
    pub degenerate: bool,
}

impl Histogram {
    fn from_masses(masses: &[f64], degenerate: bool) -> Self {
        let total: f64 = masses.iter().sum();
        let scale = if total > 0.0 { 1.0 / total } else { 0.0 };
        let n = masses.len() as f64;
        let bins = masses
            .iter()
            .enumerate()
            .map(|(k, m)| Bin {
                bin_lo: k as f64 / n,
                bin_hi: (k + 1) as f64 / n,
                probability: m * scale,
            })
            .collect();
        Histogram { bins, degenerate }
    }

    pub fn lowest(&self) -> f64 {
        self.bins.first().map_or(0.0, |b| b.probability)
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().map(|b| b.probability).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.probability).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in &self.bins {
            w.serialize(b).map_err(csv_error)?;
        }
        csv_string(w)
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Input(format!("csv serialization: {e}"))
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

/// 10-bin histogram of `(E - E_min) / W`; `cost` is indexed by occupation integer.
pub fn energy_histogram(dist: &Distribution, spectrum: &ConstrainedSpectrum, cost: &[f64]) -> Result<Histogram> {
    if let Some(&(b, _)) = dist.entries.iter().find(|&&(b, _)| basis::weight(b) != spectrum.m) {
        return Err(Error::input(format!(
            "bitstring {} violates the constraint M = {}; post-select first",
            basis::to_bitstring(b, dist.n_sites),
            spectrum.m
        )));
    }
    if spectrum.w <= 0.0 {
        warn!("W = 0: energy histogram collapses to a single bin");
        return Ok(Histogram::from_masses(&[dist.total()], true));
    }
    let mut masses = [0.0; N_BINS];
    for &(b, p) in &dist.entries {
        masses[bin_index(spectrum.normalized(cost[b as usize]))] += p;
    }
    Ok(Histogram::from_masses(&masses, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyStats {
    pub mean: f64,
    pub std: f64,
}

/// Mean and standard deviation of `(E - E_min) / W` under `dist`.
pub fn delta_e_over_w(dist: &Distribution, spectrum: &ConstrainedSpectrum, cost: &[f64]) -> EnergyStats {
    let total = dist.total();
    if total <= 0.0 {
        return EnergyStats { mean: 0.0, std: 0.0 };
    }
    let (s1, s2) = dist.entries.iter().fold((0.0, 0.0), |(a, b), &(bits, p)| {
        let x = spectrum.normalized(cost[bits as usize]);
        (a + p * x, b + p * x * x)
    });
    moments(s1 / total, s2 / total)
}

fn moments(mean: f64, second: f64) -> EnergyStats {
    EnergyStats {
        mean,
        std: (second - mean * mean).max(0.0).sqrt(),
    }
}

/// Reference numbers for uniformly random sampling.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baseline {
    /// Uniform over the constrained sector.
    pub delta_e_over_w: EnergyStats,
    pub histogram: Histogram,
    /// Unconstrained uniform bitstrings: `C(n, M) / 2^n`.
    #[serde(rename = "P_M")]
    pub p_m: Vec<f64>,
}

pub fn random_baseline(instance: &PortfolioInstance, m: usize) -> Result<Baseline> {
    let spectrum = brute_force_spectrum(instance, m)?;
    let n = instance.n_sites();
    let delta_e_over_w = if spectrum.w > 0.0 {
        EnergyStats {
            mean: (spectrum.uniform_mean - spectrum.e_min) / spectrum.w,
            std: spectrum.uniform_std / spectrum.w,
        }
    } else {
        warn!("W = 0: baseline energy spread is degenerate");
        EnergyStats { mean: 0.0, std: 0.0 }
    };
    let states = binomial(n, m) as f64;
    let entries = basis::fixed_weight(n, m).map(|b| (b, 1.0 / states)).collect();
    let uniform = Distribution { n_sites: n, entries };
    let histogram = energy_histogram(&uniform, &spectrum, &instance.cost_table())?;
    let full = 2f64.powi(n as i32);
    let p_m = (0..=n).map(|k| binomial(n, k) as f64 / full).collect();
    Ok(Baseline {
        delta_e_over_w,
        histogram,
        p_m,
    })
}

/// Per-trajectory (or per-run) sufficient statistics, kept unnormalized so
/// trajectories with different shot counts pool correctly.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mass: f64,
    pub weights: Vec<f64>,
    /// Weight-`M` mass per energy bin.
    pub bins: Vec<f64>,
    pub energy: f64,
    pub sector_x1: f64,
    pub sector_x2: f64,
}

impl Observation {
    pub fn new(dist: &Distribution, spectrum: &ConstrainedSpectrum, cost: &[f64]) -> Self {
        let n_bins = if spectrum.w > 0.0 { N_BINS } else { 1 };
        let mut obs = Observation {
            mass: 0.0,
            weights: vec![0.0; dist.n_sites + 1],
            bins: vec![0.0; n_bins],
            energy: 0.0,
            sector_x1: 0.0,
            sector_x2: 0.0,
        };
        for &(b, p) in &dist.entries {
            let e = cost[b as usize];
            let w = basis::weight(b);
            obs.mass += p;
            obs.weights[w] += p;
            obs.energy += p * e;
            if w == spectrum.m {
                let x = spectrum.normalized(e);
                obs.bins[if n_bins == 1 { 0 } else { bin_index(x) }] += p;
                obs.sector_x1 += p * x;
                obs.sector_x2 += p * x * x;
            }
        }
        obs
    }

    pub fn from_state(state: &StateVector, spectrum: &ConstrainedSpectrum, cost: &[f64]) -> Self {
        Self::new(&Distribution::from_state(state), spectrum, cost)
    }

    /// Raw counts, so `mass` is the shot count.
    pub fn from_counts(counts: &Counts, spectrum: &ConstrainedSpectrum, cost: &[f64]) -> Self {
        let entries = counts.map.iter().map(|(&b, &c)| (b, c as f64)).collect();
        Self::new(
            &Distribution {
                n_sites: counts.n_sites,
                entries,
            },
            spectrum,
            cost,
        )
    }

    pub fn retained(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// Ratio of means with a delta-method standard error across trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

pub fn ratio_estimate(ys: &[f64], xs: &[f64]) -> Estimate {
    let n = ys.len();
    let (sy, sx): (f64, f64) = (ys.iter().sum(), xs.iter().sum());
    if n == 0 || sx <= 0.0 {
        return Estimate {
            value: 0.0,
            std_error: 0.0,
        };
    }
    let r = sy / sx;
    if n < 2 {
        return Estimate {
            value: r,
            std_error: 0.0,
        };
    }
    let xbar = sx / n as f64;
    let ss: f64 = ys.iter().zip(xs).map(|(y, x)| (y - r * x).powi(2)).sum();
    Estimate {
        value: r,
        std_error: (ss / (n as f64 * (n - 1) as f64)).sqrt() / xbar,
    }
}

/// Trajectory-level uncertainties for the noisy-run headline numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryStatistics {
    pub trajectories: usize,
    #[serde(rename = "P_M")]
    pub p_m: Estimate,
    /// Lowest-bin mass after post-selection.
    pub lowest_bin: Estimate,
    pub retained_fraction: Estimate,
}

/// Pooled view of one or more observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub energy: f64,
    #[serde(rename = "P_M")]
    pub p_m: Vec<f64>,
    pub histogram: Histogram,
    pub delta_e_over_w: EnergyStats,
    pub retained_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistics: Option<TrajectoryStatistics>,
}

pub fn summarize(observations: &[Observation], m: usize) -> Result<Summary> {
    let first = observations.first().ok_or_else(|| Error::input("no observations to summarize"))?;
    let mass: f64 = observations.iter().map(|o| o.mass).sum();
    if mass <= 0.0 {
        return Err(Error::input("observations carry no probability mass"));
    }
    let mut weights = vec![0.0; first.weights.len()];
    let mut bins = vec![0.0; first.bins.len()];
    let (mut energy, mut x1, mut x2) = (0.0, 0.0, 0.0);
    for o in observations {
        weights.iter_mut().zip(&o.weights).for_each(|(a, b)| *a += b);
        bins.iter_mut().zip(&o.bins).for_each(|(a, b)| *a += b);
        energy += o.energy;
        x1 += o.sector_x1;
        x2 += o.sector_x2;
    }
    let retained: f64 = bins.iter().sum();
    if retained <= 0.0 {
        warn!("post-selection kept nothing");
    }
    let delta = if retained > 0.0 {
        moments(x1 / retained, x2 / retained)
    } else {
        EnergyStats { mean: 0.0, std: 0.0 }
    };
    let statistics = (observations.len() > 1).then(|| {
        let masses: Vec<f64> = observations.iter().map(|o| o.mass).collect();
        let kept: Vec<f64> = observations.iter().map(Observation::retained).collect();
        let in_m: Vec<f64> = observations.iter().map(|o| o.weights.get(m).copied().unwrap_or(0.0)).collect();
        let low: Vec<f64> = observations.iter().map(|o| o.bins[0]).collect();
        TrajectoryStatistics {
            trajectories: observations.len(),
            p_m: ratio_estimate(&in_m, &masses),
            lowest_bin: ratio_estimate(&low, &kept),
            retained_fraction: ratio_estimate(&kept, &masses),
        }
    });
    Ok(Summary {
        energy: energy / mass,
        p_m: weights.iter().map(|w| w / mass).collect(),
        histogram: Histogram::from_masses(&bins, bins.len() == 1),
        delta_e_over_w: delta,
        retained_fraction: retained / mass,
        statistics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetadata {
    pub instance_hash: String,
    pub driver: DriverKind,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub p: usize,
    pub mode: String,
    #[serde(rename = "W")]
    pub w: f64,
    pub e_min: f64,
    pub w_hop: f64,
    pub t: f64,
    pub delta_t: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub seed: u64,
    pub noise_p1: f64,
    pub noise_p2: f64,
    pub trajectories: u64,
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub metadata: RunMetadata,
    /// `<E>` over all measured outcomes.
    pub energy: f64,
    pub fixed_energy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimized_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationResult>,
    pub energy_histogram: Vec<Bin>,
    #[serde(rename = "P_M")]
    pub p_m: Vec<f64>,
    pub delta_e_over_w: EnergyStats,
    pub post_selected: bool,
    pub retained_fraction: f64,
    pub gate_counts: GateCount,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistics: Option<TrajectoryStatistics>,
    pub random_baseline: Baseline,
}

impl RunReport {
    pub fn lowest_bin(&self) -> f64 {
        self.energy_histogram.first().map_or(0.0, |b| b.probability)
    }

    pub fn p_at_m(&self) -> f64 {
        self.p_m.get(self.metadata.m).copied().unwrap_or(0.0)
    }

    pub fn histogram_csv(&self) -> Result<String> {
        Histogram {
            bins: self.energy_histogram.clone(),
            degenerate: self.energy_histogram.len() == 1,
        }
        .to_csv()
    }

    pub fn p_m_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            #[serde(rename = "M")]
            m: usize,
            probability: f64,
            random: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for (m, (&probability, &random)) in self.p_m.iter().zip(&self.random_baseline.p_m).enumerate() {
            w.serialize(Row { m, probability, random }).map_err(csv_error)?;
        }
        csv_string(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub driver: DriverKind,
    pub p: usize,
    pub delta_e_over_w: f64,
    pub delta_e_over_w_std: f64,
    pub lowest_bin: f64,
    #[serde(rename = "P_M")]
    pub p_m: f64,
    pub retained_fraction: f64,
    pub gates_1q: u64,
    pub gates_2q: u64,
    /// Differences against the first row.
    pub d_delta_e_over_w: f64,
    pub d_lowest_bin: f64,
    #[serde(rename = "d_P_M")]
    pub d_p_m: f64,
    /// One-sided ordering verdicts, filled in for a noisy cyc/lad pair.
    #[serde(rename = "cyc_ge_lad_P_M")]
    pub cyc_ge_lad_p_m: Option<bool>,
    pub cyc_ge_lad_lowest_bin: Option<bool>,
}

/// One-sided test of `cyc > lad` for a noisy-run metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderingTest {
    pub cyc: Estimate,
    pub lad: Estimate,
    pub z: f64,
    pub cyc_ge_lad: bool,
}

impl OrderingTest {
    pub fn new(cyc: Estimate, lad: Estimate) -> Self {
        let se = cyc.std_error.hypot(lad.std_error);
        let diff = cyc.value - lad.value;
        let z = if se > 0.0 {
            diff / se
        } else if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        OrderingTest {
            cyc,
            lad,
            z,
            cyc_ge_lad: z > Z_95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub instance_hash: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub rows: Vec<ComparisonRow>,
    #[serde(rename = "P_M_order", skip_serializing_if = "Option::is_none")]
    pub p_m_order: Option<OrderingTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lowest_bin_order: Option<OrderingTest>,
}

impl Comparison {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_error)?;
        }
        csv_string(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

/// Side-by-side table; ordering tests are filled in for a noisy cyc/lad pair.
pub fn compare_runs(reports: &[RunReport]) -> Result<Comparison> {
    let first = reports.first().ok_or_else(|| Error::input("nothing to compare"))?;
    for r in reports {
        if r.metadata.instance_hash != first.metadata.instance_hash || r.metadata.m != first.metadata.m {
            return Err(Error::input(format!(
                "reports disagree on instance/M: {}/{} vs {}/{}",
                first.metadata.instance_hash, first.metadata.m, r.metadata.instance_hash, r.metadata.m
            )));
        }
    }
    let find = |kind| reports.iter().find(|r| r.metadata.driver == kind).and_then(|r| r.statistics);
    let (p_m_order, lowest_bin_order) = match (find(DriverKind::Cyclic), find(DriverKind::Ladder)) {
        (Some(c), Some(l)) => (
            Some(OrderingTest::new(c.p_m, l.p_m)),
            Some(OrderingTest::new(c.lowest_bin, l.lowest_bin)),
        ),
        _ => (None, None),
    };
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            driver: r.metadata.driver,
            p: r.metadata.p,
            delta_e_over_w: r.delta_e_over_w.mean,
            delta_e_over_w_std: r.delta_e_over_w.std,
            lowest_bin: r.lowest_bin(),
            p_m: r.p_at_m(),
            retained_fraction: r.retained_fraction,
            gates_1q: r.gate_counts.single_qubit,
            gates_2q: r.gate_counts.two_qubit,
            d_delta_e_over_w: r.delta_e_over_w.mean - first.delta_e_over_w.mean,
            d_lowest_bin: r.lowest_bin() - first.lowest_bin(),
            d_p_m: r.p_at_m() - first.p_at_m(),
            cyc_ge_lad_p_m: p_m_order.map(|t| t.cyc_ge_lad),
            cyc_ge_lad_lowest_bin: lowest_bin_order.map(|t| t.cyc_ge_lad),
        })
        .collect();
    Ok(Comparison {
        instance_hash: first.metadata.instance_hash.clone(),
        m: first.metadata.m,
        rows,
        p_m_order,
        lowest_bin_order,
    })
}
