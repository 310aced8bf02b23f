//! The DSGT recursion and the centralized baseline.
//!
//! One synchronous DSGT round is
//!
//! ```text
//! x' = W (x - alpha y)
//! G' = G(x', xi')              fresh samples at the new iterates
//! y' = W y + G' - G            G is the sample drawn when x was evaluated
//! ```
//!
//! so the network average of `y` always equals the average of the most
//! recent samples. The state keeps `G` explicitly to reuse that realization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;
use thiserror::Error;

use crate::oracle::StochasticOracle;
use crate::rng::StreamRng;
use crate::topology::Network;

/// Slack on the per-step deterministic inequalities.
pub const STEP_CHECK_TOL: f64 = 1e-10;

/// Relative slack on the tracking identity.
pub const TRACKING_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("step size must be finite and nonnegative, got {0}")]
    InvalidStepSize(f64),
    #[error("iterates became non-finite at iteration {k}")]
    Diverged { k: usize },
    #[error("{what} violated at iteration {k}: {lhs:e} > {rhs:e}")]
    InvariantViolated {
        k: usize,
        what: &'static str,
        lhs: f64,
        rhs: f64,
    },
}

/// Per-agent decision variables, gradient trackers, and the most recent
/// gradient samples. Row `i` belongs to agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub last_g: Array2<f64>,
    pub k: usize,
}

/// Quantities measured around one instrumented DSGT round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// `||x_k - 1 xbar_k||^2`
    pub consensus_before: f64,
    /// `||y_k - 1 ybar_k||^2`
    pub tracking_before: f64,
    /// `||x_{k+1} - 1 xbar_{k+1}||^2`
    pub consensus_after: f64,
    /// Right-hand side of the one-step consensus inequality.
    pub consensus_bound: f64,
    /// Mixing contraction on `x - alpha y`: `(||W w - 1 wbar||, rho_w ||w - 1 wbar||)`.
    pub mix_iterate: (f64, f64),
    /// Mixing contraction on `y`.
    pub mix_tracker: (f64, f64),
}

impl StepDiagnostics {
    fn check(&self, k: usize) -> Result<(), EngineError> {
        let within = |lhs: f64, rhs: f64| lhs <= rhs + STEP_CHECK_TOL * (1.0 + rhs);
        let checks = [
            ("mixing contraction (iterates)", self.mix_iterate),
            ("mixing contraction (trackers)", self.mix_tracker),
            ("one-step consensus inequality", (self.consensus_after, self.consensus_bound)),
        ];
        for (what, (lhs, rhs)) in checks {
            if !within(lhs, rhs) {
                return Err(EngineError::InvariantViolated { k, what, lhs, rhs });
            }
        }
        Ok(())
    }
}

/// Row mean and squared Frobenius distance of the rows from it.
fn spread(m: ArrayView2<f64>) -> (Array1<f64>, f64) {
    let mean = m.mean_axis(Axis(0)).expect("at least one row");
    let sq = m
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    (mean, sq)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn all_finite(m: &Array2<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn check_alpha(alpha: f64) -> Result<(), EngineError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(EngineError::InvalidStepSize(alpha))
    }
}

fn check_dims<O: StochasticOracle + ?Sized>(
    rows: usize,
    cols: usize,
    oracle: &O,
    rngs: &[StreamRng],
) -> Result<(), EngineError> {
    let expect = |what, expected, got| {
        if expected == got {
            Ok(())
        } else {
            Err(EngineError::DimensionMismatch {
                what,
                expected,
                got,
            })
        }
    };
    expect("agent count", oracle.agents(), rows)?;
    expect("decision dimension", oracle.dim(), cols)?;
    expect("agent streams", oracle.agents(), rngs.len())
}

impl SwarmState {
    /// Starts the recursion at `x0` with `y_0 = G(x_0, xi_0)`.
    pub fn init<O: StochasticOracle + ?Sized>(
        x0: Array2<f64>,
        oracle: &O,
        rngs: &mut [StreamRng],
    ) -> Result<Self, EngineError> {
        check_dims(x0.nrows(), x0.ncols(), oracle, rngs)?;
        if !all_finite(&x0) {
            return Err(EngineError::Diverged { k: 0 });
        }
        let mut g = Array2::zeros(x0.raw_dim());
        oracle.sample_all(x0.view(), rngs, g.view_mut());
        if !all_finite(&g) {
            return Err(EngineError::Diverged { k: 0 });
        }
        Ok(Self {
            x: x0,
            y: g.clone(),
            last_g: g,
            k: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn mean_x(&self) -> Array1<f64> {
        self.x.mean_axis(Axis(0)).expect("at least one agent")
    }

    pub fn mean_y(&self) -> Array1<f64> {
        self.y.mean_axis(Axis(0)).expect("at least one agent")
    }

    /// `|ybar - mean(last_g)|_inf / (1 + |ybar|_inf)`; zero up to rounding.
    pub fn tracking_residual(&self) -> f64 {
        let ybar = self.mean_y();
        let gbar = self.last_g.mean_axis(Axis(0)).expect("at least one agent");
        let diff = ybar
            .iter()
            .zip(gbar.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = ybar.iter().map(|v| v.abs()).fold(0.0, f64::max);
        diff / (1.0 + scale)
    }

    /// One synchronous DSGT round. In debug builds every round also checks
    /// the tracking identity, mixing contraction, and one-step consensus
    /// inequality.
    pub fn step<O: StochasticOracle + ?Sized>(
        &mut self,
        net: &Network,
        alpha: f64,
        oracle: &O,
        rngs: &mut [StreamRng],
    ) -> Result<(), EngineError> {
        if cfg!(debug_assertions) {
            let diag = self.advance(net, alpha, oracle, rngs, true)?;
            if let Some(d) = diag {
                d.check(self.k)?;
            }
            let residual = self.tracking_residual();
            if residual > TRACKING_TOL {
                return Err(EngineError::InvariantViolated {
                    k: self.k,
                    what: "tracking identity",
                    lhs: residual,
                    rhs: TRACKING_TOL,
                });
            }
            Ok(())
        } else {
            self.advance(net, alpha, oracle, rngs, false).map(|_| ())
        }
    }

    /// Runs one round and returns the measured per-step inequality terms.
    /// Violations are reported as errors.
    pub fn step_instrumented<O: StochasticOracle + ?Sized>(
        &mut self,
        net: &Network,
        alpha: f64,
        oracle: &O,
        rngs: &mut [StreamRng],
    ) -> Result<StepDiagnostics, EngineError> {
        let diag = self
            .advance(net, alpha, oracle, rngs, true)?
            .expect("diagnostics requested");
        diag.check(self.k)?;
        Ok(diag)
    }

    fn advance<O: StochasticOracle + ?Sized>(
        &mut self,
        net: &Network,
        alpha: f64,
        oracle: &O,
        rngs: &mut [StreamRng],
        diagnose: bool,
    ) -> Result<Option<StepDiagnostics>, EngineError> {
        check_alpha(alpha)?;
        check_dims(self.n(), self.p(), oracle, rngs)?;
        if net.n() != self.n() {
            return Err(EngineError::DimensionMismatch {
                what: "network size",
                expected: self.n(),
                got: net.n(),
            });
        }
        let w = net.weights();

        let descent = &self.x - &(&self.y * alpha);
        let x_next = w.dot(&descent);
        let mixed_y = w.dot(&self.y);

        let diag = if diagnose {
            let rho = net.rho_w();
            let (_, consensus_before) = spread(self.x.view());
            let (_, tracking_before) = spread(self.y.view());
            let (_, descent_spread) = spread(descent.view());
            let (_, consensus_after) = spread(x_next.view());
            let (_, mixed_y_spread) = spread(mixed_y.view());
            let rho2 = rho * rho;
            let consensus_bound = if rho < 1.0 {
                let coupling = if tracking_before == 0.0 {
                    0.0
                } else {
                    alpha * alpha * (1.0 + rho2) * rho2 / (1.0 - rho2) * tracking_before
                };
                0.5 * (1.0 + rho2) * consensus_before + coupling
            } else {
                f64::INFINITY
            };
            Some(StepDiagnostics {
                consensus_before,
                tracking_before,
                consensus_after,
                consensus_bound,
                mix_iterate: (consensus_after.sqrt(), rho * descent_spread.sqrt()),
                mix_tracker: (mixed_y_spread.sqrt(), rho * tracking_before.sqrt()),
            })
        } else {
            None
        };

        let mut g_next = Array2::zeros(x_next.raw_dim());
        oracle.sample_all(x_next.view(), rngs, g_next.view_mut());
        let y_next = mixed_y + &g_next - &self.last_g;

        let k = self.k + 1;
        if !all_finite(&x_next) || !all_finite(&y_next) {
            return Err(EngineError::Diverged { k });
        }
        self.x = x_next;
        self.y = y_next;
        self.last_g = g_next;
        self.k = k;
        Ok(diag)
    }
}

/// `||ybar - h(x)||^2` for one fresh draw of `G(x, xi)`, where `ybar` is the
/// sample average a DSGT tracker average would equal at `x`.
pub fn sampled_average_error<O: StochasticOracle + ?Sized>(
    x: ArrayView2<f64>,
    oracle: &O,
    rngs: &mut [StreamRng],
) -> f64 {
    let mut g = Array2::zeros(x.raw_dim());
    oracle.sample_all(x, rngs, g.view_mut());
    let ybar = g.mean_axis(Axis(0)).expect("at least one agent");
    let h = oracle.mean_true_gradient(x);
    sq_dist(ybar.view(), h.view())
}

/// Single-point state of the centralized stochastic gradient method.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralState {
    pub x: Array1<f64>,
    pub k: usize,
}

impl CentralState {
    pub fn new(x0: Array1<f64>) -> Self {
        Self { x: x0, k: 0 }
    }

    /// `x' = x - alpha (1/n) sum_i g_i(x, xi_i)` with one fresh sample per agent.
    pub fn step<O: StochasticOracle + ?Sized>(
        &mut self,
        alpha: f64,
        oracle: &O,
        rngs: &mut [StreamRng],
    ) -> Result<(), EngineError> {
        check_alpha(alpha)?;
        check_dims(oracle.agents(), self.x.len(), oracle, rngs)?;
        let mut acc = Array1::<f64>::zeros(self.x.len());
        let mut g = Array1::zeros(self.x.len());
        for (i, rng) in rngs.iter_mut().enumerate() {
            oracle.sample_gradient(i, self.x.view(), rng, g.view_mut());
            acc += &g;
        }
        let n = rngs.len() as f64;
        let next = &self.x - &(acc * (alpha / n));
        let k = self.k + 1;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::Diverged { k });
        }
        self.x = next;
        self.k = k;
        Ok(())
    }
}

/// The three tracked errors at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub k: usize,
    /// `||xbar - x*||^2`
    pub opt_err: f64,
    /// `||x - 1 xbar||^2`
    pub consensus_err: f64,
    /// `||y - 1 ybar||^2`
    pub tracking_err: f64,
}

impl MetricsRow {
    pub fn zero(k: usize) -> Self {
        Self {
            k,
            opt_err: 0.0,
            consensus_err: 0.0,
            tracking_err: 0.0,
        }
    }

    pub fn of_swarm(state: &SwarmState, x_star: ArrayView1<f64>) -> Self {
        let (xbar, consensus_err) = spread(state.x.view());
        let (_, tracking_err) = spread(state.y.view());
        Self {
            k: state.k,
            opt_err: sq_dist(xbar.view(), x_star),
            consensus_err,
            tracking_err,
        }
    }

    pub fn of_central(state: &CentralState, x_star: ArrayView1<f64>) -> Self {
        Self {
            k: state.k,
            opt_err: sq_dist(state.x.view(), x_star),
            consensus_err: 0.0,
            tracking_err: 0.0,
        }
    }

    /// `(1/n) ||x - 1 x*||^2`, the average squared distance of the agents
    /// from the optimum. Exact by orthogonality of the mean and deviation.
    pub fn agent_mean_sq_err(&self, n: usize) -> f64 {
        self.opt_err + self.consensus_err / n as f64
    }
}
