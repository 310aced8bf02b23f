//! Reproducible Monte Carlo experiments.
//!
//! The network and the problem instance are drawn once per experiment from
//! `base_seed`. Each replication redraws the initial iterates and owns its
//! noise streams, so replications can run in parallel and are then averaged
//! in replication order.

pub mod config;
pub mod output;

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{CentralState, EngineError, MetricsRow, SwarmState};
use crate::oracle::{estimate_sigma, OracleError, Problem, QuadraticProblem, RidgeProblem, StochasticOracle};
use crate::rng::{agent_streams, stream, Purpose};
use crate::theory::{self, TheoryError, TheoryInputs, TheoryReport};
use crate::topology::{
    generate_connected_er, metropolis_weights, validate_network, Network, TopologyError,
    ValidationReport,
};

pub use config::{Algo, ErConfig, InitRange, NetworkConfig, ProblemConfig, QuadraticConfig, RidgeConfig, RunConfig};

/// Every iteration is recorded up to here, then every `RECORD_STRIDE`-th.
pub const DENSE_RECORD_LIMIT: usize = 10_000;
pub const RECORD_STRIDE: usize = 10;

/// Absolute allowance in [`compare_bounds`] for floating residue when a
/// bound is exactly zero (noise-free problems).
pub const BOUND_ABS_TOL: f64 = 1e-20;

/// Environment variable capping replication parallelism.
pub const THREADS_ENV: &str = "DSGT_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("network validation failed: {0}")]
    Network(String),
    #[error("{algo} failed in replication {replication}: {source}")]
    Replication {
        replication: usize,
        algo: &'static str,
        #[source]
        source: EngineError,
    },
    #[error("steady window {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::WindowTooLarge { .. } | HarnessError::Io { .. } => 2,
            HarnessError::Theory(_) => 2,
            HarnessError::Replication { .. } => 3,
            HarnessError::Network(_) => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<OracleError> for HarnessError {
    fn from(e: OracleError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

impl From<TopologyError> for HarnessError {
    fn from(e: TopologyError) -> Self {
        HarnessError::Network(e.to_string())
    }
}

/// The fixed part of an experiment, shared by all replications.
#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: Problem,
    pub network: Network,
    pub validation: ValidationReport,
    /// Noise bound used by the theory.
    pub sigma: f64,
    /// `sigma` is a Monte Carlo estimate at the optimum rather than exact.
    pub sigma_estimated: bool,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.network.n()
    }

    pub fn theory_inputs(&self, cfg: &RunConfig) -> TheoryInputs {
        let c = self.problem.constants();
        TheoryInputs {
            alpha: cfg.alpha,
            mu: c.mu,
            big_l: c.big_l,
            n: self.n(),
            sigma: self.sigma,
            rho_w: self.network.rho_w(),
            dev_norm: self.network.dev_norm_with(cfg.dev_norm),
            gamma: cfg.gamma,
        }
    }

    /// Theory report, refused when the network fails validation.
    pub fn theory(&self, cfg: &RunConfig) -> Result<TheoryReport, HarnessError> {
        if !self.validation.passed() {
            return Err(HarnessError::Network(self.validation.failures().join(", ")));
        }
        Ok(theory::report(&self.theory_inputs(cfg))?)
    }

    /// SHA-256 of the mixing matrix entries (row-major, little-endian f64).
    pub fn weights_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.network.weights().iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Reads a mixing matrix from CSV, one row per line.
pub fn read_matrix_csv(path: &std::path::Path) -> Result<Array2<f64>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(HarnessError::Config(format!(
            "{}: mixing matrix must be square and nonempty",
            path.display()
        )));
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

/// Builds the network and problem for `cfg`, deterministically from
/// `cfg.base_seed`.
pub fn build_instance(cfg: &RunConfig) -> Result<Instance, HarnessError> {
    cfg.validate()?;
    let mut rng = stream(cfg.base_seed, Purpose::Instance, 0, 0);
    let network = match &cfg.network {
        NetworkConfig::Er(er) => {
            let adj = generate_connected_er(er.n, er.q_link, rng.next_u64())?;
            metropolis_weights(&adj)
        }
        NetworkConfig::File(path) => Network::from_weights(read_matrix_csv(path)?)?,
    };
    let validation = validate_network(&network);
    if cfg.algo.runs_dsgt() && !validation.passed() {
        return Err(HarnessError::Network(validation.failures().join(", ")));
    }
    let n = network.n();
    let problem = match &cfg.problem {
        ProblemConfig::Ridge(r) => Problem::Ridge(RidgeProblem::random(
            n,
            r.p,
            r.rho_pen,
            r.noise_var,
            r.xtilde_low,
            r.xtilde_high,
            &mut rng,
        )?),
        ProblemConfig::Quadratic(q) => Problem::Quadratic(QuadraticProblem::random(
            n,
            q.p,
            q.mu_q,
            q.sigma_q,
            q.target_low,
            q.target_high,
            &mut rng,
        )?),
    };
    let (sigma, sigma_estimated) = match problem.constants().sigma {
        Some(s) => (s, false),
        None => {
            let mut srng = stream(cfg.base_seed, Purpose::Sigma, 0, 0);
            let x_star = problem.optimum().to_owned();
            (estimate_sigma(&problem, x_star.view(), cfg.sigma_samples, &mut srng)?, true)
        }
    };
    Ok(Instance {
        problem,
        network,
        validation,
        sigma,
        sigma_estimated,
    })
}

/// Whether iteration `k` appears in the recorded series.
pub fn is_recorded(k: usize) -> bool {
    k <= DENSE_RECORD_LIMIT || k % RECORD_STRIDE == 0
}

/// Number of recorded rows for a run of `iterations` steps (iteration 0 included).
pub fn recorded_len(iterations: usize) -> usize {
    (0..=iterations).filter(|&k| is_recorded(k)).count()
}

/// Raw series of one replication.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicationSeries {
    pub dsgt: Option<Vec<MetricsRow>>,
    pub centralized: Option<Vec<MetricsRow>>,
}

/// Initial iterates of replication `r`, uniform on `[low, high]^p` per agent.
pub fn initial_iterates(cfg: &RunConfig, n: usize, p: usize, r: usize) -> Array2<f64> {
    let mut rng = stream(cfg.base_seed, Purpose::Init, r as u64, 0);
    let InitRange { low, high } = cfg.init;
    Array2::from_shape_simple_fn((n, p), || {
        if low == high {
            low
        } else {
            rng.random_range(low..high)
        }
    })
}

/// Runs replication `r` of the selected algorithm(s). The centralized
/// method starts from the average of the agents' initial iterates and
/// consumes the same per-agent noise streams as DSGT.
pub fn run_replication(
    cfg: &RunConfig,
    inst: &Instance,
    r: usize,
) -> Result<ReplicationSeries, HarnessError> {
    let n = inst.n();
    let p = inst.problem.dim();
    let x0 = initial_iterates(cfg, n, p, r);
    let x_star = inst.problem.optimum();
    let capacity = recorded_len(cfg.iterations);
    let mut out = ReplicationSeries::default();
    let fail = |algo, source| HarnessError::Replication {
        replication: r,
        algo,
        source,
    };

    if cfg.algo.runs_dsgt() {
        let mut rngs = agent_streams(cfg.base_seed, r as u64, n);
        let mut state =
            SwarmState::init(x0.clone(), &inst.problem, &mut rngs).map_err(|e| fail("dsgt", e))?;
        let mut rows = Vec::with_capacity(capacity);
        rows.push(MetricsRow::of_swarm(&state, x_star));
        for k in 1..=cfg.iterations {
            state
                .step(&inst.network, cfg.alpha, &inst.problem, &mut rngs)
                .map_err(|e| fail("dsgt", e))?;
            if is_recorded(k) {
                rows.push(MetricsRow::of_swarm(&state, x_star));
            }
        }
        out.dsgt = Some(rows);
    }

    if cfg.algo.runs_centralized() {
        let mut rngs = agent_streams(cfg.base_seed, r as u64, n);
        let mut state = CentralState::new(central_start(&x0));
        let mut rows = Vec::with_capacity(capacity);
        rows.push(MetricsRow::of_central(&state, x_star));
        for k in 1..=cfg.iterations {
            state
                .step(cfg.alpha, &inst.problem, &mut rngs)
                .map_err(|e| fail("centralized", e))?;
            if is_recorded(k) {
                rows.push(MetricsRow::of_central(&state, x_star));
            }
        }
        out.centralized = Some(rows);
    }
    Ok(out)
}

/// Row-wise mean of equally long series, summed in the given order.
pub fn aggregate(series: &[&[MetricsRow]]) -> Vec<MetricsRow> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    let r = series.len() as f64;
    let mut acc: Vec<MetricsRow> = first.to_vec();
    for s in &series[1..] {
        assert_eq!(s.len(), acc.len(), "series lengths differ");
        for (a, row) in acc.iter_mut().zip(s.iter()) {
            debug_assert_eq!(a.k, row.k);
            a.opt_err += row.opt_err;
            a.consensus_err += row.consensus_err;
            a.tracking_err += row.tracking_err;
        }
    }
    for a in &mut acc {
        a.opt_err /= r;
        a.consensus_err /= r;
        a.tracking_err /= r;
    }
    acc
}

/// Mean of each metric over the trailing `window` rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyMetrics {
    pub opt_err: f64,
    pub consensus_err: f64,
    pub tracking_err: f64,
}

impl SteadyMetrics {
    /// `(1/n) mean ||x - 1 x*||^2`.
    pub fn agent_mean_sq_err(&self, n: usize) -> f64 {
        self.opt_err + self.consensus_err / n as f64
    }
}

pub fn steady_state(series: &[MetricsRow], window: usize) -> Result<SteadyMetrics, HarnessError> {
    if window == 0 || window > series.len() {
        return Err(HarnessError::WindowTooLarge {
            window,
            len: series.len(),
        });
    }
    let tail = &series[series.len() - window..];
    let w = window as f64;
    Ok(SteadyMetrics {
        opt_err: tail.iter().map(|r| r.opt_err).sum::<f64>() / w,
        consensus_err: tail.iter().map(|r| r.consensus_err).sum::<f64>() / w,
        tracking_err: tail.iter().map(|r| r.tracking_err).sum::<f64>() / w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Steady {
    pub window: usize,
    pub dsgt: Option<SteadyMetrics>,
    pub centralized: Option<SteadyMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub config: RunConfig,
    pub n: usize,
    pub p: usize,
    pub rho_w: f64,
    pub dev_norm: f64,
    pub sigma: f64,
    pub sigma_estimated: bool,
    pub weights_sha256: String,
    pub validation: ValidationReport,
    pub recorded_rows: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub instance: Instance,
    /// Replication-averaged series.
    pub dsgt: Option<Vec<MetricsRow>>,
    pub centralized: Option<Vec<MetricsRow>>,
    pub steady: Steady,
    /// Absent when the network fails validation (centralized-only runs).
    pub theory: Option<TheoryReport>,
    pub meta: RunMeta,
    /// Raw per-replication series, when requested.
    pub replications: Option<Vec<ReplicationSeries>>,
}

fn thread_cap() -> Result<Option<usize>, HarnessError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(HarnessError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn run_all(cfg: &RunConfig, inst: &Instance) -> Result<Vec<ReplicationSeries>, HarnessError> {
    let work = || -> Vec<Result<ReplicationSeries, HarnessError>> {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, inst, r))
            .collect()
    };
    let results = match thread_cap()? {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .install(work),
        None => work(),
    };
    results.into_iter().collect()
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, HarnessError> {
    run_detailed(cfg, false)
}

/// Like [`run`], optionally keeping every replication's raw series.
pub fn run_detailed(cfg: &RunConfig, keep_replications: bool) -> Result<RunOutput, HarnessError> {
    let started = Instant::now();
    let rows = recorded_len(cfg.iterations);
    if cfg.steady_window > rows {
        return Err(HarnessError::WindowTooLarge {
            window: cfg.steady_window,
            len: rows,
        });
    }
    let instance = build_instance(cfg)?;
    let theory = if instance.validation.passed() {
        Some(instance.theory(cfg)?)
    } else {
        None
    };
    let reps = run_all(cfg, &instance)?;

    let collect = |pick: fn(&ReplicationSeries) -> Option<&Vec<MetricsRow>>| {
        let parts: Option<Vec<&[MetricsRow]>> =
            reps.iter().map(|s| pick(s).map(Vec::as_slice)).collect();
        parts.map(|p| aggregate(&p))
    };
    let dsgt = collect(|s| s.dsgt.as_ref());
    let centralized = collect(|s| s.centralized.as_ref());
    let steady = Steady {
        window: cfg.steady_window,
        dsgt: dsgt.as_deref().map(|s| steady_state(s, cfg.steady_window)).transpose()?,
        centralized: centralized
            .as_deref()
            .map(|s| steady_state(s, cfg.steady_window))
            .transpose()?,
    };
    let meta = RunMeta {
        config: cfg.clone(),
        n: instance.n(),
        p: instance.problem.dim(),
        rho_w: instance.network.rho_w(),
        dev_norm: instance.network.dev_norm_with(cfg.dev_norm),
        sigma: instance.sigma,
        sigma_estimated: instance.sigma_estimated,
        weights_sha256: instance.weights_digest(),
        validation: instance.validation,
        recorded_rows: recorded_len(cfg.iterations),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        instance,
        dsgt,
        centralized,
        steady,
        theory,
        meta,
        replications: keep_replications.then_some(reps),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub empirical: f64,
    pub bound: f64,
    /// `empirical <= bound * slack + BOUND_ABS_TOL`.
    pub holds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundVerdicts {
    /// False when the step size is inadmissible or DSGT was not run.
    pub applicable: bool,
    /// Monte Carlo slack `1 + 4 / sqrt(R)`.
    pub slack: f64,
    pub opt: Option<BoundCheck>,
    pub consensus: Option<BoundCheck>,
}

impl BoundVerdicts {
    pub fn all_hold(&self) -> bool {
        self.applicable
            && self.opt.is_some_and(|c| c.holds)
            && self.consensus.is_some_and(|c| c.holds)
    }
}

/// Compares steady DSGT errors with the limiting bounds.
pub fn compare_bounds(out: &RunOutput) -> BoundVerdicts {
    let slack = 1.0 + 4.0 / (out.meta.config.replications as f64).sqrt();
    let not_applicable = BoundVerdicts {
        applicable: false,
        slack,
        opt: None,
        consensus: None,
    };
    let (Some(th), Some(steady)) = (&out.theory, out.steady.dsgt) else {
        return not_applicable;
    };
    let (Some(b_opt), Some(b_cons)) = (th.bound_opt, th.bound_consensus) else {
        return not_applicable;
    };
    if !th.admissible {
        return not_applicable;
    }
    let check = |empirical: f64, bound: f64| BoundCheck {
        empirical,
        bound,
        holds: empirical <= bound * slack + BOUND_ABS_TOL,
    };
    BoundVerdicts {
        applicable: true,
        slack,
        opt: Some(check(steady.opt_err, b_opt)),
        consensus: Some(check(steady.consensus_err, b_cons)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepEntry {
    pub n: usize,
    pub rho_w: f64,
    pub dsgt_opt_err: Option<f64>,
    pub dsgt_consensus_err: Option<f64>,
    /// `(1/n) mean ||x - 1 x*||^2` in steady state.
    pub dsgt_agent_mean_sq_err: Option<f64>,
    pub centralized_opt_err: Option<f64>,
    /// DSGT over centralized steady optimality error.
    pub opt_err_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub values: Vec<usize>,
    pub window: usize,
    pub replications: usize,
    pub entries: Vec<SweepEntry>,
    /// Steady `(1/n) mean ||x - 1 x*||^2` strictly decreases along `values`.
    pub decreasing_in_n: bool,
}

impl SweepSummary {
    fn from_runs(cfg: &RunConfig, values: &[usize], runs: &[RunOutput]) -> Self {
        let entries: Vec<SweepEntry> = values
            .iter()
            .zip(runs)
            .map(|(&n, out)| {
                let d = out.steady.dsgt;
                let c = out.steady.centralized;
                SweepEntry {
                    n,
                    rho_w: out.meta.rho_w,
                    dsgt_opt_err: d.map(|s| s.opt_err),
                    dsgt_consensus_err: d.map(|s| s.consensus_err),
                    dsgt_agent_mean_sq_err: d.map(|s| s.agent_mean_sq_err(n)),
                    centralized_opt_err: c.map(|s| s.opt_err),
                    opt_err_ratio: d.zip(c).map(|(d, c)| d.opt_err / c.opt_err),
                }
            })
            .collect();
        let errs: Option<Vec<f64>> = entries.iter().map(|e| e.dsgt_agent_mean_sq_err).collect();
        let decreasing_in_n = errs.is_some_and(|e| e.windows(2).all(|w| w[1] < w[0]));
        Self {
            values: values.to_vec(),
            window: cfg.steady_window,
            replications: cfg.replications,
            entries,
            decreasing_in_n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub runs: Vec<RunOutput>,
    pub summary: SweepSummary,
}

/// Runs `cfg` once per agent count in `values`, replacing the ER network size.
pub fn sweep_n(cfg: &RunConfig, values: &[usize]) -> Result<SweepOutput, HarnessError> {
    let NetworkConfig::Er(er) = &cfg.network else {
        return Err(HarnessError::Config("sweep-n requires an er network".into()));
    };
    if values.is_empty() {
        return Err(HarnessError::Config("no agent counts given".into()));
    }
    let runs = values
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.network = NetworkConfig::Er(ErConfig { n, ..er.clone() });
            run(&c)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let summary = SweepSummary::from_runs(cfg, values, &runs);
    Ok(SweepOutput { runs, summary })
}

/// Averaged initial iterate of the agents, the centralized starting point.
pub fn central_start(x0: &Array2<f64>) -> Array1<f64> {
    x0.mean_axis(Axis(0)).expect("at least one agent")
}
