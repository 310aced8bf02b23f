//! Experiment configuration (JSON, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::theory::DEFAULT_GAMMA;
use crate::topology::DeviationNorm;

pub const DEFAULT_REPLICATIONS: usize = 20;
pub const DEFAULT_STEADY_WINDOW: usize = 500;
pub const DEFAULT_SIGMA_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub algo: Algo,
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub iterations: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_steady_window")]
    pub steady_window: usize,
    /// Initial iterates are drawn uniformly from `[low, high]^p`.
    #[serde(default)]
    pub init: InitRange,
    /// Norm used for `||W - I||` in the theory report.
    #[serde(default)]
    pub dev_norm: DeviationNorm,
    /// Samples per agent when the noise bound must be estimated.
    #[serde(default = "default_sigma_samples")]
    pub sigma_samples: usize,
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_steady_window() -> usize {
    DEFAULT_STEADY_WINDOW
}

fn default_sigma_samples() -> usize {
    DEFAULT_SIGMA_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemConfig {
    Ridge(RidgeConfig),
    Quadratic(QuadraticConfig),
}

impl ProblemConfig {
    pub fn dim(&self) -> usize {
        match self {
            ProblemConfig::Ridge(r) => r.p,
            ProblemConfig::Quadratic(q) => q.p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeConfig {
    pub p: usize,
    #[serde(default = "RidgeConfig::default_rho")]
    pub rho_pen: f64,
    #[serde(default = "RidgeConfig::default_noise_var")]
    pub noise_var: f64,
    #[serde(default = "RidgeConfig::default_low")]
    pub xtilde_low: f64,
    #[serde(default = "RidgeConfig::default_high")]
    pub xtilde_high: f64,
}

impl RidgeConfig {
    fn default_rho() -> f64 {
        0.01
    }
    fn default_noise_var() -> f64 {
        0.25
    }
    fn default_low() -> f64 {
        0.4
    }
    fn default_high() -> f64 {
        0.6
    }

    pub fn with_dim(p: usize) -> Self {
        Self {
            p,
            rho_pen: Self::default_rho(),
            noise_var: Self::default_noise_var(),
            xtilde_low: Self::default_low(),
            xtilde_high: Self::default_high(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    pub p: usize,
    pub mu_q: f64,
    pub sigma_q: f64,
    #[serde(default = "QuadraticConfig::default_low")]
    pub target_low: f64,
    #[serde(default = "QuadraticConfig::default_high")]
    pub target_high: f64,
}

impl QuadraticConfig {
    fn default_low() -> f64 {
        -1.0
    }
    fn default_high() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkConfig {
    Er(ErConfig),
    /// CSV file holding the mixing matrix, one row per line.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErConfig {
    pub n: usize,
    #[serde(default = "ErConfig::default_q")]
    pub q_link: f64,
}

impl ErConfig {
    fn default_q() -> f64 {
        0.4
    }

    pub fn with_n(n: usize) -> Self {
        Self {
            n,
            q_link: Self::default_q(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Dsgt,
    Centralized,
    #[default]
    Both,
}

impl Algo {
    pub fn runs_dsgt(self) -> bool {
        matches!(self, Algo::Dsgt | Algo::Both)
    }

    pub fn runs_centralized(self) -> bool {
        matches!(self, Algo::Centralized | Algo::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitRange {
    pub low: f64,
    pub high: f64,
}

impl Default for InitRange {
    fn default() -> Self {
        Self { low: 5.0, high: 10.0 }
    }
}

impl RunConfig {
    /// The online ridge experiment: `p = 20`, `rho = 0.01`, `alpha = 0.01`,
    /// ER(0.4) network on `n` agents, initial iterates in `[5, 10]^p`.
    pub fn ridge_experiment(n: usize) -> Self {
        Self {
            problem: ProblemConfig::Ridge(RidgeConfig::with_dim(20)),
            network: NetworkConfig::Er(ErConfig::with_n(n)),
            algo: Algo::Both,
            alpha: 0.01,
            gamma: DEFAULT_GAMMA,
            iterations: 5000,
            replications: DEFAULT_REPLICATIONS,
            base_seed: 0,
            steady_window: DEFAULT_STEADY_WINDOW,
            init: InitRange::default(),
            dev_norm: DeviationNorm::Frobenius,
            sigma_samples: DEFAULT_SIGMA_SAMPLES,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative matrix paths are resolved against the config's directory.
        if let NetworkConfig::File(p) = &mut cfg.network {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.iterations < 1 {
            return fail("iterations must be at least 1".into());
        }
        if self.replications < 1 {
            return fail("replications must be at least 1".into());
        }
        if self.steady_window < 1 || self.steady_window > self.iterations {
            return fail(format!(
                "steady_window must be in [1, iterations = {}], got {}",
                self.iterations, self.steady_window
            ));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return fail(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(self.init.low <= self.init.high) {
            return fail("init.low must not exceed init.high".into());
        }
        if self.problem.dim() == 0 {
            return fail("problem dimension p must be positive".into());
        }
        if self.sigma_samples < 2 {
            return fail("sigma_samples must be at least 2".into());
        }
        if let NetworkConfig::Er(er) = &self.network {
            if er.n == 0 {
                return fail("network.er.n must be positive".into());
            }
            if !(0.0..=1.0).contains(&er.q_link) {
                return fail(format!("network.er.q_link must be in [0, 1], got {}", er.q_link));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RIDGE: &str = r#"{
        "problem": {"ridge": {"p": 20}},
        "network": {"er": {"n": 10}},
        "alpha": 0.01,
        "iterations": 5000
    }"#;

    #[test]
    fn defaults_fill_the_ridge_experiment() {
        let cfg = RunConfig::from_json(RIDGE).unwrap();
        assert_eq!(cfg, RunConfig::ridge_experiment(10));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = RIDGE.replace("\"iterations\"", "\"iters\": 3, \"iterations\"");
        assert!(matches!(RunConfig::from_json(&text), Err(HarnessError::Config(_))));
        let text = RIDGE.replace("\"p\": 20", "\"p\": 20, \"rho\": 0.1");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn invariants_checked() {
        let text = RIDGE.replace("5000", "100");
        let err = RunConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("steady_window"), "{err}");
        let text = RIDGE.replace("0.01", "-1");
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn file_network_and_quadratic() {
        let text = r#"{
            "problem": {"quadratic": {"p": 3, "mu_q": 1.0, "sigma_q": 0.5}},
            "network": {"file": "w.csv"},
            "algo": "dsgt",
            "alpha": 0.02,
            "iterations": 10,
            "steady_window": 5,
            "replications": 2,
            "dev_norm": "spectral"
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.network, NetworkConfig::File("w.csv".into()));
        assert_eq!(cfg.algo, Algo::Dsgt);
        assert_eq!(cfg.dev_norm, DeviationNorm::Spectral);
    }
}
