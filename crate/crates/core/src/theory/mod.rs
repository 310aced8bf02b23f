//! Closed-form convergence quantities for DSGT.
//!
//! Given the step size `alpha`, problem constants `(mu, L, sigma)`, agent
//! count `n`, the network's `rho_w` and `||W - I||`, and a free constant
//! `gamma > 1`, this module evaluates:
//!
//! * the admissible step-size cap [`alpha_max`] and the auxiliary [`beta`],
//! * the 3x3 error-coupling matrix [`build_a_matrix`] and its spectral radius,
//! * the limiting error bounds [`limiting_bounds`] driven by [`m_sigma`],
//! * the centralized-comparable rate [`corollary_rate`].
//!
//! A network with `rho_w = 0` (one agent, or exact averaging) has no
//! coupling matrix; [`report`] falls back to the centralized rate and bound.

mod spectral;

use serde::Serialize;
use thiserror::Error;

pub use spectral::{det_criterion, is_irreducible, perron_root_power, spectral_radius_3};

pub type Matrix3 = [[f64; 3]; 3];

/// Default trade-off constant between the step-size cap and bound tightness.
pub const DEFAULT_GAMMA: f64 = 2.0;

/// Tolerance for the `a_33 = (1 + rho_w^2)/2` identity.
const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid theory input: {0}")]
    InvalidInput(String),
    #[error("rho_w = 0: the network averages exactly and has no coupling matrix")]
    DegenerateNetwork,
    #[error("step size {alpha} is inadmissible: {reason}")]
    Inadmissible { alpha: f64, reason: String },
    #[error("diagonal entry {index} = {value} is not below lambda* = {lambda_star}")]
    DiagonalNotBelow {
        index: usize,
        value: f64,
        lambda_star: f64,
    },
    #[error("matrix is reducible")]
    Reducible,
}

fn invalid(msg: impl Into<String>) -> TheoryError {
    TheoryError::InvalidInput(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryInputs {
    pub alpha: f64,
    pub mu: f64,
    pub big_l: f64,
    pub n: usize,
    pub sigma: f64,
    pub rho_w: f64,
    /// `||W - I||` (Frobenius by default).
    pub dev_norm: f64,
    pub gamma: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let finite = [
            self.alpha,
            self.mu,
            self.big_l,
            self.sigma,
            self.rho_w,
            self.dev_norm,
            self.gamma,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("all inputs must be finite"));
        }
        if self.alpha < 0.0 {
            return Err(invalid(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.mu > 0.0 && self.mu <= self.big_l) {
            return Err(invalid(format!(
                "need 0 < mu <= L, got mu = {}, L = {}",
                self.mu, self.big_l
            )));
        }
        if self.n == 0 {
            return Err(invalid("agent count must be positive"));
        }
        if self.sigma < 0.0 || self.dev_norm < 0.0 {
            return Err(invalid("sigma and ||W - I|| must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.rho_w) {
            return Err(invalid(format!("need 0 <= rho_w < 1, got {}", self.rho_w)));
        }
        if self.gamma <= 1.0 {
            return Err(invalid(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Aggregate noise term `[3 a^2 L^2 + 2 (a L + 1)(n + 1)] sigma^2`.
pub fn m_sigma(alpha: f64, big_l: f64, n: usize, sigma: f64) -> f64 {
    let al = alpha * big_l;
    (3.0 * al * al + 2.0 * (al + 1.0) * (n as f64 + 1.0)) * sigma * sigma
}

/// `beta = (1 - rho_w^2) / (2 rho_w^2) - 4 alpha L - 2 alpha^2 L^2`.
pub fn beta(alpha: f64, big_l: f64, rho_w: f64) -> Result<f64, TheoryError> {
    if rho_w == 0.0 {
        return Err(TheoryError::DegenerateNetwork);
    }
    let r2 = rho_w * rho_w;
    let al = alpha * big_l;
    Ok((1.0 - r2) / (2.0 * r2) - 4.0 * al - 2.0 * al * al)
}

/// The three step-size caps whose minimum is [`alpha_max`].
pub fn alpha_caps(
    rho_w: f64,
    dev_norm: f64,
    big_l: f64,
    mu: f64,
    gamma: f64,
) -> Result<[f64; 3], TheoryError> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must exceed 1, got {gamma}")));
    }
    if !(rho_w > 0.0 && rho_w < 1.0) {
        return Err(invalid(format!("need 0 < rho_w < 1, got {rho_w}")));
    }
    if !(mu > 0.0 && big_l >= mu && big_l.is_finite()) {
        return Err(invalid(format!("need 0 < mu <= L, got mu = {mu}, L = {big_l}")));
    }
    if !(dev_norm >= 0.0 && dev_norm.is_finite()) {
        return Err(invalid(format!("||W - I|| must be nonnegative, got {dev_norm}")));
    }
    let r2 = rho_w * rho_w;
    let gap = 1.0 - r2;
    let first = gap / (12.0 * r2 * big_l);
    let second = gap * gap / (2.0 * gamma.sqrt() * big_l * (6.0 * rho_w * dev_norm).max(gap));
    let ratio = (mu * mu) / (big_l * big_l) * (gamma - 1.0) / (gamma * (gamma + 1.0));
    let third = gap / (3.0 * rho_w.powf(2.0 / 3.0) * big_l) * ratio.cbrt();
    Ok([first, second, third])
}

/// Largest step size for which the linear-rate guarantee holds.
pub fn alpha_max(
    rho_w: f64,
    dev_norm: f64,
    big_l: f64,
    mu: f64,
    gamma: f64,
) -> Result<f64, TheoryError> {
    Ok(alpha_caps(rho_w, dev_norm, big_l, mu, gamma)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// The error-coupling matrix acting on
/// `(E||xbar - x*||^2, E||x - 1 xbar||^2, E||y - 1 ybar||^2)`.
pub fn build_a_matrix(inp: &TheoryInputs) -> Result<Matrix3, TheoryError> {
    inp.validate()?;
    let b = beta(inp.alpha, inp.big_l, inp.rho_w)?;
    if b <= 0.0 {
        return Err(TheoryError::Inadmissible {
            alpha: inp.alpha,
            reason: format!("beta = {b} is not positive"),
        });
    }
    let limit = 2.0 / (inp.mu + inp.big_l);
    if inp.alpha >= limit {
        return Err(TheoryError::Inadmissible {
            alpha: inp.alpha,
            reason: format!("alpha must be below 2/(mu + L) = {limit}"),
        });
    }
    let TheoryInputs {
        alpha: a,
        mu,
        big_l: l,
        n,
        rho_w,
        dev_norm,
        ..
    } = *inp;
    let n = n as f64;
    let r2 = rho_w * rho_w;
    let l2 = l * l;
    let l3 = l2 * l;
    let diag = 0.5 * (1.0 + r2);
    Ok([
        [1.0 - a * mu, a * l2 / (mu * n) * (1.0 + a * mu), 0.0],
        [0.0, diag, a * a * (1.0 + r2) * r2 / (1.0 - r2)],
        [
            2.0 * a * n * l3,
            (1.0 / b + 2.0) * dev_norm * dev_norm * l2 + 3.0 * a * l3,
            diag,
        ],
    ])
}

/// Steady-state bounds on `E||xbar - x*||^2` and `E||x - 1 xbar||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitingBounds {
    pub opt: f64,
    /// The network-independent part of `opt`.
    pub opt_noise_term: f64,
    pub consensus: f64,
}

pub fn limiting_bounds(inp: &TheoryInputs) -> Result<LimitingBounds, TheoryError> {
    inp.validate()?;
    let TheoryInputs {
        alpha: a,
        mu,
        big_l: l,
        n,
        sigma,
        rho_w,
        dev_norm,
        gamma: g,
    } = *inp;
    let nf = n as f64;
    let s2 = sigma * sigma;
    if rho_w == 0.0 {
        let cap = degenerate_alpha_max(l);
        if a > cap {
            return Err(TheoryError::Inadmissible {
                alpha: a,
                reason: format!("exceeds 1/L = {cap}"),
            });
        }
        let opt = a * s2 / (mu * nf);
        return Ok(LimitingBounds {
            opt,
            opt_noise_term: opt,
            consensus: 0.0,
        });
    }
    let cap = alpha_max(rho_w, dev_norm, l, mu, g)?;
    if a > cap {
        return Err(TheoryError::Inadmissible {
            alpha: a,
            reason: format!("exceeds alpha_max = {cap}"),
        });
    }
    let ms = m_sigma(a, l, n, sigma);
    let r2 = rho_w * rho_w;
    let gap3 = (1.0 - r2).powi(3);
    let inflate = (g + 1.0) / (g - 1.0);
    let noise_term = (g + 1.0) / g * a * s2 / (mu * nf);
    let network_term =
        inflate * 4.0 * a * a * l * l * (1.0 + a * mu) * (1.0 + r2) * r2 / (mu * mu * nf * gap3) * ms;
    let consensus =
        inflate * 4.0 * a * a * (1.0 + r2) * r2 * (2.0 * a * a * l.powi(3) * s2 + mu * ms) / (mu * gap3);
    Ok(LimitingBounds {
        opt: noise_term + network_term,
        opt_noise_term: noise_term,
        consensus,
    })
}

/// Rate guarantee `1 - ((gamma - 1)/(gamma + 1)) alpha mu`, valid only when
/// `guaranteed` is set (the extra step-size condition holds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorollaryRate {
    pub rate: f64,
    pub guaranteed: bool,
}

/// Step-size cap `((gamma + 1)/gamma) (1 - rho_w^2) / (8 mu)` under which
/// [`corollary_rate`] bounds the spectral radius.
pub fn corollary_cap(mu: f64, gamma: f64, rho_w: f64) -> f64 {
    (gamma + 1.0) / gamma * (1.0 - rho_w * rho_w) / (8.0 * mu)
}

pub fn corollary_rate(alpha: f64, mu: f64, gamma: f64, rho_w: f64) -> CorollaryRate {
    let factor = if gamma.is_infinite() {
        1.0
    } else {
        (gamma - 1.0) / (gamma + 1.0)
    };
    CorollaryRate {
        rate: 1.0 - factor * alpha * mu,
        guaranteed: alpha <= corollary_cap(mu, gamma, rho_w),
    }
}

/// Step-size cap used when `rho_w = 0`.
fn degenerate_alpha_max(big_l: f64) -> f64 {
    1.0 / big_l
}

/// The three relations on the entries of the coupling matrix that together
/// give `det(I - A) > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixConditions {
    /// `a_33 = (1 + rho_w^2)/2` with `a_33` written through `beta`.
    pub tracker_diagonal: bool,
    /// `a_23 a_32 <= (1/gamma)(1 - a_22)(1 - a_33)`.
    pub coupling_margin: bool,
    /// `a_12 a_23 a_31 <= (1/(gamma + 1))(1 - a_11)[(1 - a_22)(1 - a_33) - a_23 a_32]`.
    pub cycle_margin: bool,
}

impl MatrixConditions {
    pub fn all(&self) -> bool {
        self.tracker_diagonal && self.coupling_margin && self.cycle_margin
    }
}

pub fn matrix_conditions(inp: &TheoryInputs, a: &Matrix3) -> Result<MatrixConditions, TheoryError> {
    let b = beta(inp.alpha, inp.big_l, inp.rho_w)?;
    let r2 = inp.rho_w * inp.rho_w;
    let al = inp.alpha * inp.big_l;
    let via_beta = (1.0 + 4.0 * al + 2.0 * al * al + b) * r2;
    let g = inp.gamma;
    let slack22 = 1.0 - a[1][1];
    let slack33 = 1.0 - a[2][2];
    let coupling = a[1][2] * a[2][1];
    Ok(MatrixConditions {
        tracker_diagonal: (via_beta - a[2][2]).abs() <= IDENTITY_TOL && a[2][2] < 1.0,
        coupling_margin: coupling <= slack22 * slack33 / g,
        cycle_margin: a[0][1] * a[1][2] * a[2][0]
            <= (1.0 - a[0][0]) * (slack22 * slack33 - coupling) / (g + 1.0),
    })
}

/// Admissibility verdicts attached to a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Admissibility {
    /// `alpha <= alpha_max`.
    pub step_size_cap: bool,
    /// `alpha` satisfies the corollary's extra cap.
    pub corollary_cap: bool,
    /// `alpha < 2/(mu + L)`.
    pub contraction_limit: bool,
    /// Entry relations of the coupling matrix, when it exists.
    pub matrix: Option<MatrixConditions>,
}

/// Everything the theory says about one `(alpha, problem, network)` instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub alpha: f64,
    pub alpha_max: f64,
    pub gamma: f64,
    pub mu: f64,
    pub big_l: f64,
    pub n: usize,
    pub sigma: f64,
    pub rho_w: f64,
    pub dev_norm: f64,
    pub beta: Option<f64>,
    pub a_matrix: Option<Matrix3>,
    pub rho_a: Option<f64>,
    pub corollary_rate: f64,
    #[serde(rename = "eq15_holds")]
    pub corollary_applies: bool,
    pub m_sigma: f64,
    pub bound_opt: Option<f64>,
    pub bound_opt_noise_term: Option<f64>,
    pub bound_consensus: Option<f64>,
    /// `alpha` is within the step-size cap, so the bounds apply.
    pub admissible: bool,
    pub checks: Admissibility,
    /// `rho_w = 0`: centralized-rate fallback.
    pub degenerate: bool,
}

/// Evaluates every closed-form quantity for `inp`. Inadmissible step sizes
/// are reported (with `admissible = false`), not rejected.
pub fn report(inp: &TheoryInputs) -> Result<TheoryReport, TheoryError> {
    inp.validate()?;
    let TheoryInputs {
        alpha,
        mu,
        big_l,
        n,
        sigma,
        rho_w,
        dev_norm,
        gamma,
    } = *inp;
    let corollary = corollary_rate(alpha, mu, gamma, rho_w);
    let degenerate = rho_w == 0.0;
    let contraction_limit = alpha < 2.0 / (mu + big_l);

    let (alpha_max, beta_v, a_matrix, rho_a) = if degenerate {
        (degenerate_alpha_max(big_l), None, None, Some(1.0 - alpha * mu))
    } else {
        let cap = alpha_max(rho_w, dev_norm, big_l, mu, gamma)?;
        let b = beta(alpha, big_l, rho_w)?;
        let a = build_a_matrix(inp).ok();
        (cap, Some(b), a, a.as_ref().map(spectral_radius_3))
    };
    let admissible = alpha <= alpha_max;
    let bounds = if admissible {
        Some(limiting_bounds(inp)?)
    } else {
        None
    };
    let matrix = match &a_matrix {
        Some(a) => Some(matrix_conditions(inp, a)?),
        None => None,
    };

    Ok(TheoryReport {
        alpha,
        alpha_max,
        gamma,
        mu,
        big_l,
        n,
        sigma,
        rho_w,
        dev_norm,
        beta: beta_v,
        a_matrix,
        rho_a,
        corollary_rate: corollary.rate,
        corollary_applies: corollary.guaranteed,
        m_sigma: m_sigma(alpha, big_l, n, sigma),
        bound_opt: bounds.map(|b| b.opt),
        bound_opt_noise_term: bounds.map(|b| b.opt_noise_term),
        bound_consensus: bounds.map(|b| b.consensus),
        admissible,
        checks: Admissibility {
            step_size_cap: admissible,
            corollary_cap: corollary.guaranteed,
            contraction_limit,
            matrix,
        },
        degenerate,
    })
}
