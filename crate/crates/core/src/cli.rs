//! Command-line front end: `run`, `gatecount`, `verify` and `instance`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::analysis::{self, compare_runs, random_baseline, Observation, RunMetadata, RunReport};
use crate::circuits::{build_init_circuit, count_formulas, unit_driver, GateCountReport};
use crate::driver::{self, ConditionReport, DriverKind, HoppingModel};
use crate::error::{Error, Result};
use crate::instance::{
    brute_force_spectrum, generate_instance, instance_from_returns, load_instance, save_instance, GeneratorSpec,
    PortfolioInstance,
};
use crate::schedule::{depth_sweep, optimize, qaa_schedule, OptimizeOptions, Problem, DEFAULT_WDT};
use crate::statevector::{apply_one_body, NoiseModel, StateVector, TrajectoryRunner};

#[derive(Debug, Parser)]
#[command(name = "fqaoa", version, about = "Fermionic QAOA for constrained portfolio selection")]
pub struct Cli {
    /// Worker threads for noisy trajectories (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the ansatz and write report, histogram and P_M files.
    Run(RunArgs),
    /// Print closed-form (and for cyc, census) gate counts.
    Gatecount(GatecountArgs),
    /// Check driver Conditions I-III and the prepared initial state.
    Verify(VerifyArgs),
    /// Create or inspect instance files.
    #[command(subcommand)]
    Instance(InstanceCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fixed,
    Optimize,
}

impl Mode {
    fn label(self) -> &'static str {
        match self {
            Mode::Fixed => "fixed",
            Mode::Optimize => "optimize",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0.9)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Instance JSON file.
    #[arg(long, conflicts_with_all = ["gen_seed", "returns"])]
    pub instance: Option<PathBuf>,
    /// Generate the instance from this seed.
    #[arg(long, conflicts_with = "returns")]
    pub gen_seed: Option<u64>,
    /// Build the instance from a returns CSV.
    #[arg(long)]
    pub returns: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Driver kind; repeat to compare.
    #[arg(long, value_parser = parse_driver, default_value = "cyc")]
    pub driver: Vec<DriverKind>,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    /// Schedule unit as the product W * delta_t.
    #[arg(long, default_value_t = DEFAULT_WDT, conflicts_with = "dt")]
    pub wdt: f64,
    /// Absolute schedule unit delta_t.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Fixed)]
    pub mode: Mode,
    /// Measurement shots; 0 analyses the exact distribution.
    #[arg(long, default_value_t = 0)]
    pub shots: u64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_p1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_p2: f64,
    #[arg(long, default_value_t = 1000)]
    pub trajectories: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "fqaoa-out")]
    pub out: PathBuf,
    /// Keep the optimizer trajectory in the report.
    #[arg(long)]
    pub trace: bool,
    /// With --mode optimize, also sweep p' = 1..=p from nested starts.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GatecountArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, value_parser = parse_driver, default_value = "cyc")]
    pub driver: DriverKind,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, value_parser = parse_driver, default_value = "cyc")]
    pub driver: DriverKind,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Custom hopping graph (JSON edge list); overrides --driver.
    #[arg(long)]
    pub edges: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum InstanceCommand {
    /// Synthetic factor-model instance.
    Gen {
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        generator: GeneratorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Instance from a CSV of per-period asset returns.
    FromReturns {
        #[arg(long)]
        returns: PathBuf,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 0.9)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the hash and constrained-spectrum summary.
    Show {
        #[arg(long)]
        instance: PathBuf,
    },
}

fn parse_driver(s: &str) -> std::result::Result<DriverKind, String> {
    match s.parse::<DriverKind>() {
        Ok(DriverKind::Custom) | Err(_) => Err(format!("expected `cyc` or `lad`, got `{s}`")),
        Ok(k) => Ok(k),
    }
}

/// Fully resolved settings of one `run` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub p: usize,
    pub wdt: f64,
    pub dt: Option<f64>,
    pub mode: Mode,
    pub shots: u64,
    pub noise_p1: f64,
    pub noise_p2: f64,
    pub trajectories: u64,
    pub seed: u64,
    pub trace: bool,
}

impl RunConfig {
    pub fn new(p: usize) -> Self {
        RunConfig {
            p,
            wdt: DEFAULT_WDT,
            dt: None,
            mode: Mode::Fixed,
            shots: 0,
            noise_p1: 0.0,
            noise_p2: 0.0,
            trajectories: 1000,
            seed: 0,
            trace: false,
        }
    }

    pub fn is_noisy(&self) -> bool {
        self.noise_p1 > 0.0 || self.noise_p2 > 0.0
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::validation("p", "depth must be at least 1"));
        }
        if !(self.wdt.is_finite() && self.wdt > 0.0) {
            return Err(Error::validation("wdt", "must be positive"));
        }
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::validation("dt", "must be positive"));
            }
        }
        if self.is_noisy() && self.trajectories == 0 {
            return Err(Error::validation("trajectories", "noisy runs need at least one trajectory"));
        }
        NoiseModel::new(self.noise_p1, self.noise_p2, self.seed)?;
        Ok(())
    }
}

/// Shots given to trajectory `index` when `shots` are split over `count`.
pub fn shots_for(index: u64, shots: u64, count: u64) -> u64 {
    shots / count + u64::from(index < shots % count)
}

/// Simulates one driver end to end and assembles its report.
pub fn run_driver(instance: &PortfolioInstance, kind: DriverKind, cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let problem = Problem::new(instance, kind)?;
    let delta_t = cfg.dt.unwrap_or_else(|| problem.delta_t_for(cfg.wdt));
    let fixed = qaa_schedule(cfg.p, delta_t)?;
    let fixed_energy = problem.energy(&fixed)?;

    let (params, optimization) = match cfg.mode {
        Mode::Fixed => (fixed, None),
        Mode::Optimize => {
            let opts = OptimizeOptions {
                trace: cfg.trace,
                ..Default::default()
            };
            let res = optimize(&problem, &fixed, &opts)?;
            info!(
                "{kind}: fixed E = {fixed_energy:.8}, optimized E = {:.8} after {} iterations",
                res.optimal_energy, res.iterations
            );
            (res.optimal.clone(), Some(res))
        }
    };

    let ansatz = &problem.ansatz;
    let plan = ansatz.plan(&params.gamma, &params.beta)?;
    let spectrum = &problem.spectrum;
    let cost = problem.cost_table();
    let m = spectrum.m;

    let observations = if cfg.is_noisy() {
        let noise = NoiseModel::new(cfg.noise_p1, cfg.noise_p2, cfg.seed)?;
        let runner = TrajectoryRunner::new(ansatz, &plan, noise)?;
        let count = cfg.trajectories;
        runner.map(count, |i, state| {
            if cfg.shots == 0 {
                Observation::from_state(state, spectrum, cost)
            } else {
                let counts = state.sample_with(shots_for(i, cfg.shots, count), &mut noise.shot_rng(i));
                Observation::from_counts(&counts, spectrum, cost)
            }
        })?
    } else {
        let state = ansatz.run(&plan)?;
        let obs = if cfg.shots == 0 {
            Observation::from_state(&state, spectrum, cost)
        } else {
            let counts = state.sample_with(cfg.shots, &mut NoiseModel::noiseless(cfg.seed).shot_rng(0));
            Observation::from_counts(&counts, spectrum, cost)
        };
        vec![obs]
    };
    let summary = analysis::summarize(&observations, m)?;

    let metadata = RunMetadata {
        instance_hash: instance.content_hash(),
        driver: kind,
        n: instance.n,
        d: instance.d,
        k: instance.k,
        m,
        p: cfg.p,
        mode: cfg.mode.label().to_string(),
        w: spectrum.w,
        e_min: spectrum.e_min,
        w_hop: problem.w_hop,
        t: problem.t(),
        delta_t,
        gamma: params.gamma.clone(),
        beta: params.beta.clone(),
        seed: cfg.seed,
        noise_p1: cfg.noise_p1,
        noise_p2: cfg.noise_p2,
        trajectories: if cfg.is_noisy() { cfg.trajectories } else { 0 },
        shots: cfg.shots,
    };
    Ok(RunReport {
        metadata,
        energy: summary.energy,
        fixed_energy,
        optimized_energy: optimization.as_ref().map(|r| r.optimal_energy),
        optimization,
        energy_histogram: summary.histogram.bins,
        p_m: summary.p_m,
        delta_e_over_w: summary.delta_e_over_w,
        post_selected: cfg.is_noisy(),
        retained_fraction: summary.retained_fraction,
        gate_counts: plan.gate_counts(),
        statistics: summary.statistics,
        random_baseline: random_baseline(instance, m)?,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve_instance(args: &RunArgs) -> Result<PortfolioInstance> {
    let g = &args.generator;
    match (&args.instance, args.gen_seed, &args.returns) {
        (Some(path), _, _) => load_instance(path),
        (None, Some(seed), _) => generate_instance(&GeneratorSpec::new(seed, g.n, g.d, g.k, g.lambda)),
        (None, None, Some(path)) => instance_from_returns(path, g.lambda, g.d, g.k),
        (None, None, None) => Err(Error::validation(
            "instance",
            "one of --instance, --gen-seed or --returns is required",
        )),
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<Vec<RunReport>> {
    let instance = resolve_instance(args)?;
    let cfg = RunConfig {
        p: args.p,
        wdt: args.wdt,
        dt: args.dt,
        mode: args.mode,
        shots: args.shots,
        noise_p1: args.noise_p1,
        noise_p2: args.noise_p2,
        trajectories: args.trajectories,
        seed: args.seed,
        trace: args.trace,
    };
    cfg.validate()?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    save_instance(&instance, args.out.join("instance.json"))?;

    let mut kinds = args.driver.clone();
    kinds.dedup();
    let mut reports = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let report = run_driver(&instance, kind, &cfg)?;
        let tag = kind.label();
        write(&args.out.join(format!("report_{tag}.json")), &report.to_json())?;
        write(&args.out.join(format!("histogram_{tag}.csv")), &report.histogram_csv()?)?;
        write(&args.out.join(format!("pm_{tag}.csv")), &report.p_m_csv()?)?;
        if args.sweep && args.mode == Mode::Optimize {
            let problem = Problem::new(&instance, kind)?;
            let dt = cfg.dt.unwrap_or_else(|| problem.delta_t_for(cfg.wdt));
            let opts = OptimizeOptions {
                trace: cfg.trace,
                ..Default::default()
            };
            let sweep = depth_sweep(&problem, cfg.p, dt, &opts)?;
            write(
                &args.out.join(format!("sweep_{tag}.json")),
                &serde_json::to_string_pretty(&sweep)?,
            )?;
        }
        reports.push(report);
    }
    if reports.len() > 1 {
        let cmp = compare_runs(&reports)?;
        write(&args.out.join("comparison.csv"), &cmp.to_csv()?)?;
        write(&args.out.join("comparison.json"), &cmp.to_json())?;
    }
    Ok(reports)
}

/// Gate-count table; errors when a census disagrees with the closed form.
pub fn cmd_gatecount(args: &GatecountArgs) -> Result<(GateCountReport, String)> {
    let report = count_formulas(args.n, args.d, args.k, args.p, args.driver)?;
    let text = if args.json {
        serde_json::to_string_pretty(&report)?
    } else {
        format_gatecount(&report)
    };
    if !report.matches {
        return Err(Error::Numerical(format!("gate census disagrees with closed form:\n{text}")));
    }
    Ok((report, text))
}

pub fn format_gatecount(r: &GateCountReport) -> String {
    let mut out = format!(
        "{} N={} D={} K={} p={}\n{:<8}{:>10}{:>10}{:>10}{:>10}\n",
        r.driver, r.n, r.d, r.k, r.p, "unitary", "1q", "2q", "census1q", "census2q"
    );
    for row in &r.rows {
        let (c1, c2) = row
            .census
            .map_or(("-".into(), "-".into()), |c| (c.single_qubit.to_string(), c.two_qubit.to_string()));
        out += &format!(
            "{:<8}{:>10}{:>10}{:>10}{:>10}\n",
            row.unitary, row.formula.single_qubit, row.formula.two_qubit, c1, c2
        );
    }
    out += &format!(
        "total: {} 1q, {} 2q\n",
        r.total_formula.single_qubit, r.total_formula.two_qubit
    );
    out
}

/// Circuit-prepared initial state checked against the Slater oracle and `H_d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitStateCheck {
    pub max_amplitude_error: f64,
    pub energy: f64,
    pub variance: f64,
    pub leakage: f64,
    pub passed: bool,
}

pub fn check_init_state(model: &HoppingModel, m: usize) -> Result<InitStateCheck> {
    let basis = driver::ground_orbitals(model, m)?;
    let circuit = build_init_circuit(&basis)?;
    let mut state = StateVector::vacuum(model.n_sites)?;
    circuit.apply(&mut state)?;
    let oracle = basis.slater_state()?;
    let max_amplitude_error = state
        .amplitudes()
        .iter()
        .zip(oracle.amplitudes())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let h = model.matrix();
    let h1 = apply_one_body(&state, &h)?;
    let energy = state.inner(&h1).re;
    let variance = (h1.norm_sqr() - energy * energy).max(0.0);
    let leakage = state.leakage(m);
    let passed = max_amplitude_error <= 1e-8 && (energy - basis.e0).abs() <= 1e-8 && variance <= 1e-8 && leakage <= 1e-10;
    Ok(InitStateCheck {
        max_amplitude_error,
        energy,
        variance,
        leakage,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub driver: DriverKind,
    pub n_sites: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub conditions: ConditionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub commutator_max: Option<f64>,
    pub eigen_residual: f64,
    pub init_state: InitStateCheck,
    pub passed: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub fn verify_model(model: &HoppingModel, m: usize) -> Result<VerifyReport> {
    let conditions = driver::verify_conditions(model, m)?;
    let init_state = check_init_state(model, m)?;
    let mut notes: Vec<String> = conditions.failures().iter().map(|f| format!("{f} failed")).collect();
    if conditions.degenerate {
        notes.push("single-particle level at the Fermi energy is degenerate; occupation fixed by tie-break".into());
    }
    if !init_state.passed {
        notes.push("circuit-prepared initial state does not match the Slater determinant".into());
    }
    Ok(VerifyReport {
        driver: model.kind,
        n_sites: model.n_sites,
        m,
        passed: conditions.passed() && init_state.passed,
        commutator_max: conditions.commutator_max,
        eigen_residual: conditions.eigen_residual,
        conditions,
        init_state,
        notes,
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyReport> {
    let (model, m) = match &args.edges {
        Some(path) => {
            let model = driver::load_edge_file(path)?;
            let half = model.n_sites / 2;
            if args.k >= half {
                return Err(Error::validation("K", format!("must be below n_sites/2 = {half}")));
            }
            (model, half - args.k)
        }
        None => {
            let nd = args.n * args.d;
            if nd % 2 != 0 || args.k == 0 || 2 * args.k >= nd {
                return Err(Error::validation("K", format!("need even N*D and 0 < K < N*D/2, got N*D = {nd}, K = {}", args.k)));
            }
            let m = nd / 2 - args.k;
            (unit_driver(args.driver, args.n, args.d, m)?, m)
        }
    };
    verify_model(&model, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceSummary {
    pub instance_hash: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub lambda: f64,
    pub feasible_states: u64,
    pub e_min: f64,
    pub e_max: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub uniform_mean: f64,
    pub uniform_std: f64,
    pub ground_bitstrings: Vec<String>,
}

pub fn summarize_instance(instance: &PortfolioInstance) -> Result<InstanceSummary> {
    let m = instance.particles();
    let s = brute_force_spectrum(instance, m)?;
    if s.w == 0.0 {
        log::warn!("W = 0: every feasible portfolio has the same cost");
    }
    Ok(InstanceSummary {
        instance_hash: instance.content_hash(),
        n: instance.n,
        d: instance.d,
        k: instance.k,
        m,
        lambda: instance.lambda,
        feasible_states: s.states,
        e_min: s.e_min,
        e_max: s.e_max,
        w: s.w,
        uniform_mean: s.uniform_mean,
        uniform_std: s.uniform_std,
        ground_bitstrings: s
            .ground_bitstrings
            .iter()
            .map(|&b| crate::basis::to_bitstring(b, instance.n_sites()))
            .collect(),
    })
}

pub fn cmd_instance(cmd: &InstanceCommand) -> Result<InstanceSummary> {
    let (instance, out) = match cmd {
        InstanceCommand::Gen { seed, generator: g, out } => (
            generate_instance(&GeneratorSpec::new(*seed, g.n, g.d, g.k, g.lambda))?,
            Some(out),
        ),
        InstanceCommand::FromReturns {
            returns,
            d,
            k,
            lambda,
            out,
        } => (instance_from_returns(returns, *lambda, *d, *k)?, Some(out)),
        InstanceCommand::Show { instance } => (load_instance(instance)?, None),
    };
    if let Some(path) = out {
        save_instance(&instance, path)?;
    }
    summarize_instance(&instance)
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => {
            let reports = cmd_run(args)?;
            for r in &reports {
                println!(
                    "{}: E = {:.8}, dE/W = {:.6} ({:.6}), P_M = {:.6}, lowest bin = {:.6}",
                    r.metadata.driver,
                    r.energy,
                    r.delta_e_over_w.mean,
                    r.delta_e_over_w.std,
                    r.p_at_m(),
                    r.lowest_bin()
                );
            }
            println!("wrote {}", args.out.display());
        }
        Command::Gatecount(args) => print!("{}", cmd_gatecount(args)?.1),
        Command::Verify(args) => {
            let report = cmd_verify(args)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed {
                return Err(Error::Numerical(format!("verification failed: {}", report.notes.join("; "))));
            }
        }
        Command::Instance(cmd) => println!("{}", serde_json::to_string_pretty(&cmd_instance(cmd)?)?),
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::validation("threads", e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let body = ErrorJson {
                error: e.kind(),
                message: e.to_string(),
                exit_code: e.exit_code(),
            };
            eprintln!("{}", serde_json::to_string(&body).expect("error serializes"));
            e.exit_code()
        }
    }
}
