//! Stochastic first-order oracles.
//!
//! Each agent `i` owns a local objective `f_i` and can draw unbiased gradient
//! samples `g_i(x, xi)` with `E||g_i - grad f_i||^2 <= sigma^2`. The
//! [`StochasticOracle`] trait exposes both the sampled and the true gradient
//! so the engine can run the recursion and the tests can measure it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::rng::StreamRng;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("at least 2 samples are required, got {0}")]
    InsufficientSamples(usize),
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error("fixed feature vector has length {got}, expected {expected}")]
    FeatureLength { expected: usize, got: usize },
}

/// Strong convexity modulus, gradient Lipschitz constant, and (when known in
/// closed form) the gradient-noise bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    pub mu: f64,
    pub big_l: f64,
    pub sigma: Option<f64>,
}

pub trait StochasticOracle: Send + Sync {
    /// Decision dimension `p`.
    fn dim(&self) -> usize;

    /// Number of agents `n`.
    fn agents(&self) -> usize;

    /// Writes one sample of `g_i(x, xi)` into `out`.
    fn sample_gradient(
        &self,
        agent: usize,
        x: ArrayView1<f64>,
        rng: &mut StreamRng,
        out: ArrayViewMut1<f64>,
    );

    /// Writes `grad f_i(x)` into `out`.
    fn true_gradient(&self, agent: usize, x: ArrayView1<f64>, out: ArrayViewMut1<f64>);

    fn constants(&self) -> ProblemConstants;

    /// The unique minimizer of `f = (1/n) sum f_i`.
    fn optimum(&self) -> ArrayView1<'_, f64>;

    /// Row `i` of `out` receives `g_i(x_i, xi_i)` drawn from `rngs[i]`.
    fn sample_all(&self, x: ArrayView2<f64>, rngs: &mut [StreamRng], mut out: ArrayViewMut2<f64>) {
        for (i, rng) in rngs.iter_mut().enumerate() {
            self.sample_gradient(i, x.row(i), rng, out.row_mut(i));
        }
    }

    /// `grad F(x)`: row `i` is `grad f_i(x_i)`.
    fn true_gradients(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for i in 0..self.agents() {
            self.true_gradient(i, x.row(i), out.row_mut(i));
        }
        out
    }

    /// `h(x) = (1/n) 1^T grad F(x)`.
    fn mean_true_gradient(&self, x: ArrayView2<f64>) -> Array1<f64> {
        self.true_gradients(x)
            .mean_axis(ndarray::Axis(0))
            .expect("at least one agent")
    }

    /// `grad f(z) = (1/n) sum_i grad f_i(z)` at a single point.
    fn global_gradient(&self, z: ArrayView1<f64>) -> Array1<f64> {
        let mut acc = Array1::zeros(self.dim());
        let mut buf = Array1::zeros(self.dim());
        for i in 0..self.agents() {
            self.true_gradient(i, z, buf.view_mut());
            acc += &buf;
        }
        acc / self.agents() as f64
    }
}

/// Test hooks that make the ridge oracle deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RidgeHooks {
    /// Force the observation noise to zero.
    pub zero_noise: bool,
    /// Use this feature vector instead of drawing one.
    pub fixed_features: Option<Array1<f64>>,
}

/// Online ridge regression: agent `i` observes `v = u^T x_tilde_i + eps`
/// with `u ~ U[-1,1]^p` and `eps ~ N(0, noise_var)`, and minimizes
/// `E[(u^T x - v)^2] + rho ||x||^2`.
#[derive(Debug, Clone)]
pub struct RidgeProblem {
    x_tilde: Array2<f64>,
    rho_pen: f64,
    noise: Normal<f64>,
    noise_var: f64,
    x_star: Array1<f64>,
    hooks: RidgeHooks,
}

impl RidgeProblem {
    /// `x_tilde` holds one row of true parameters per agent.
    pub fn new(x_tilde: Array2<f64>, rho_pen: f64, noise_var: f64) -> Result<Self, OracleError> {
        if !(rho_pen > 0.0 && rho_pen.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "ridge penalty must be positive, got {rho_pen}"
            )));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "noise variance must be nonnegative, got {noise_var}"
            )));
        }
        if x_tilde.nrows() == 0 || x_tilde.ncols() == 0 {
            return Err(OracleError::InvalidParameter(
                "x_tilde must have at least one row and column".into(),
            ));
        }
        let noise = Normal::new(0.0, noise_var.sqrt())
            .map_err(|e| OracleError::InvalidParameter(e.to_string()))?;
        let x_star = ridge_optimum(x_tilde.view(), rho_pen);
        Ok(Self {
            x_tilde,
            rho_pen,
            noise,
            noise_var,
            x_star,
            hooks: RidgeHooks::default(),
        })
    }

    /// Draws `x_tilde` uniformly from `[low, high]^p` for each of `n` agents.
    pub fn random(
        n: usize,
        p: usize,
        rho_pen: f64,
        noise_var: f64,
        low: f64,
        high: f64,
        rng: &mut StreamRng,
    ) -> Result<Self, OracleError> {
        if !(low <= high) {
            return Err(OracleError::InvalidParameter(format!(
                "empty x_tilde range [{low}, {high}]"
            )));
        }
        let x_tilde = Array2::from_shape_simple_fn((n, p), || uniform(rng, low, high));
        Self::new(x_tilde, rho_pen, noise_var)
    }

    pub fn with_hooks(mut self, hooks: RidgeHooks) -> Result<Self, OracleError> {
        if let Some(u) = &hooks.fixed_features {
            if u.len() != self.dim() {
                return Err(OracleError::FeatureLength {
                    expected: self.dim(),
                    got: u.len(),
                });
            }
        }
        self.hooks = hooks;
        Ok(self)
    }

    pub fn x_tilde(&self) -> &Array2<f64> {
        &self.x_tilde
    }

    pub fn rho_pen(&self) -> f64 {
        self.rho_pen
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Curvature of every `f_i`: the Hessian is `(2/3 + 2 rho) I`.
    pub fn curvature(&self) -> f64 {
        2.0 / 3.0 + 2.0 * self.rho_pen
    }
}

/// `x* = mean(x_tilde rows) / (1 + 3 rho)`.
pub fn ridge_optimum(x_tilde: ArrayView2<f64>, rho_pen: f64) -> Array1<f64> {
    x_tilde.mean_axis(ndarray::Axis(0)).expect("non-empty") / (1.0 + 3.0 * rho_pen)
}

fn uniform(rng: &mut StreamRng, low: f64, high: f64) -> f64 {
    if low == high {
        low
    } else {
        rng.random_range(low..high)
    }
}

impl StochasticOracle for RidgeProblem {
    fn dim(&self) -> usize {
        self.x_tilde.ncols()
    }

    fn agents(&self) -> usize {
        self.x_tilde.nrows()
    }

    fn sample_gradient(
        &self,
        agent: usize,
        x: ArrayView1<f64>,
        rng: &mut StreamRng,
        mut out: ArrayViewMut1<f64>,
    ) {
        let p = self.dim();
        let u = match &self.hooks.fixed_features {
            Some(u) => u.clone(),
            None => Array1::from_shape_simple_fn(p, || rng.random_range(-1.0..1.0)),
        };
        let eps = if self.hooks.zero_noise {
            0.0
        } else {
            self.noise.sample(rng)
        };
        let v = u.dot(&self.x_tilde.row(agent)) + eps;
        let residual = u.dot(&x) - v;
        Zip::from(&mut out)
            .and(&u)
            .and(&x)
            .for_each(|o, &ui, &xi| *o = 2.0 * residual * ui + 2.0 * self.rho_pen * xi);
    }

    fn true_gradient(&self, agent: usize, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        Zip::from(&mut out)
            .and(&x)
            .and(self.x_tilde.row(agent))
            .for_each(|o, &xi, &ti| *o = (2.0 / 3.0) * (xi - ti) + 2.0 * self.rho_pen * xi);
    }

    fn constants(&self) -> ProblemConstants {
        let c = self.curvature();
        ProblemConstants {
            mu: c,
            big_l: c,
            sigma: None,
        }
    }

    fn optimum(&self) -> ArrayView1<'_, f64> {
        self.x_star.view()
    }
}

/// `f_i(x) = (mu/2) ||x - t_i||^2` with additive isotropic Gaussian gradient
/// noise, so `mu = L` and `sigma^2 = p sigma_q^2` hold exactly.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    targets: Array2<f64>,
    mu_q: f64,
    sigma_q: f64,
    x_star: Array1<f64>,
}

impl QuadraticProblem {
    pub fn new(targets: Array2<f64>, mu_q: f64, sigma_q: f64) -> Result<Self, OracleError> {
        if !(mu_q > 0.0 && mu_q.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "curvature must be positive, got {mu_q}"
            )));
        }
        if !(sigma_q >= 0.0 && sigma_q.is_finite()) {
            return Err(OracleError::InvalidParameter(format!(
                "noise level must be nonnegative, got {sigma_q}"
            )));
        }
        if targets.nrows() == 0 || targets.ncols() == 0 {
            return Err(OracleError::InvalidParameter(
                "targets must have at least one row and column".into(),
            ));
        }
        let x_star = targets.mean_axis(ndarray::Axis(0)).expect("non-empty");
        Ok(Self {
            targets,
            mu_q,
            sigma_q,
            x_star,
        })
    }

    /// Draws targets uniformly from `[low, high]^p` for each of `n` agents.
    pub fn random(
        n: usize,
        p: usize,
        mu_q: f64,
        sigma_q: f64,
        low: f64,
        high: f64,
        rng: &mut StreamRng,
    ) -> Result<Self, OracleError> {
        if !(low <= high) {
            return Err(OracleError::InvalidParameter(format!(
                "empty target range [{low}, {high}]"
            )));
        }
        let targets = Array2::from_shape_simple_fn((n, p), || uniform(rng, low, high));
        Self::new(targets, mu_q, sigma_q)
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    pub fn mu_q(&self) -> f64 {
        self.mu_q
    }

    pub fn sigma_q(&self) -> f64 {
        self.sigma_q
    }
}

impl StochasticOracle for QuadraticProblem {
    fn dim(&self) -> usize {
        self.targets.ncols()
    }

    fn agents(&self) -> usize {
        self.targets.nrows()
    }

    fn sample_gradient(
        &self,
        agent: usize,
        x: ArrayView1<f64>,
        rng: &mut StreamRng,
        mut out: ArrayViewMut1<f64>,
    ) {
        self.true_gradient(agent, x, out.view_mut());
        if self.sigma_q > 0.0 {
            for o in out.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *o += self.sigma_q * z;
            }
        }
    }

    fn true_gradient(&self, agent: usize, x: ArrayView1<f64>, mut out: ArrayViewMut1<f64>) {
        Zip::from(&mut out)
            .and(&x)
            .and(self.targets.row(agent))
            .for_each(|o, &xi, &ti| *o = self.mu_q * (xi - ti));
    }

    fn constants(&self) -> ProblemConstants {
        ProblemConstants {
            mu: self.mu_q,
            big_l: self.mu_q,
            sigma: Some((self.dim() as f64).sqrt() * self.sigma_q),
        }
    }

    fn optimum(&self) -> ArrayView1<'_, f64> {
        self.x_star.view()
    }
}

/// The concrete problems the harness can run.
#[derive(Debug, Clone)]
pub enum Problem {
    Ridge(RidgeProblem),
    Quadratic(QuadraticProblem),
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Problem::Ridge($p) => $e,
            Problem::Quadratic($p) => $e,
        }
    };
}

impl StochasticOracle for Problem {
    fn dim(&self) -> usize {
        delegate!(self, p => p.dim())
    }

    fn agents(&self) -> usize {
        delegate!(self, p => p.agents())
    }

    fn sample_gradient(
        &self,
        agent: usize,
        x: ArrayView1<f64>,
        rng: &mut StreamRng,
        out: ArrayViewMut1<f64>,
    ) {
        delegate!(self, p => p.sample_gradient(agent, x, rng, out))
    }

    fn true_gradient(&self, agent: usize, x: ArrayView1<f64>, out: ArrayViewMut1<f64>) {
        delegate!(self, p => p.true_gradient(agent, x, out))
    }

    fn constants(&self) -> ProblemConstants {
        delegate!(self, p => p.constants())
    }

    fn optimum(&self) -> ArrayView1<'_, f64> {
        delegate!(self, p => p.optimum())
    }
}

/// Monte Carlo estimate of the noise bound at `x`: the largest, over
/// agents, of `sqrt(mean ||g_i(x, .) - grad f_i(x)||^2)`.
pub fn estimate_sigma<O: StochasticOracle + ?Sized>(
    problem: &O,
    x: ArrayView1<f64>,
    samples: usize,
    rng: &mut StreamRng,
) -> Result<f64, OracleError> {
    if samples < 2 {
        return Err(OracleError::InsufficientSamples(samples));
    }
    let p = problem.dim();
    let mut truth = Array1::zeros(p);
    let mut draw = Array1::zeros(p);
    let mut worst = 0.0f64;
    for i in 0..problem.agents() {
        problem.true_gradient(i, x, truth.view_mut());
        let mut acc = 0.0;
        for _ in 0..samples {
            problem.sample_gradient(i, x, rng, draw.view_mut());
            acc += draw
                .iter()
                .zip(truth.iter())
                .map(|(g, t)| (g - t) * (g - t))
                .sum::<f64>();
        }
        worst = worst.max((acc / samples as f64).sqrt());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn rng(i: u64) -> StreamRng {
        stream(11, Purpose::Noise, 0, i)
    }

    #[test]
    fn ridge_zero_noise_at_truth_leaves_penalty() {
        let xt = array![[0.45, 0.5, 0.55]];
        let prob = RidgeProblem::new(xt.clone(), 0.01, 0.25)
            .unwrap()
            .with_hooks(RidgeHooks {
                zero_noise: true,
                fixed_features: None,
            })
            .unwrap();
        let mut r = rng(0);
        let mut g = Array1::zeros(3);
        for _ in 0..20 {
            prob.sample_gradient(0, xt.row(0), &mut r, g.view_mut());
            for (a, b) in g.iter().zip(xt.row(0)) {
                assert_abs_diff_eq!(*a, 2.0 * 0.01 * b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn ridge_zero_noise_at_origin() {
        let xt = array![[0.4, 0.6]];
        let u = array![0.3, -0.8];
        let prob = RidgeProblem::new(xt.clone(), 0.5, 0.25)
            .unwrap()
            .with_hooks(RidgeHooks {
                zero_noise: true,
                fixed_features: Some(u.clone()),
            })
            .unwrap();
        let mut g = Array1::zeros(2);
        prob.sample_gradient(0, Array1::zeros(2).view(), &mut rng(0), g.view_mut());
        let ux = u.dot(&xt.row(0));
        let expected = &u * (-2.0 * ux);
        for (a, b) in g.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn ridge_hook_rejects_wrong_length() {
        let prob = RidgeProblem::new(array![[0.5, 0.5]], 0.1, 0.25).unwrap();
        let err = prob
            .with_hooks(RidgeHooks {
                zero_noise: false,
                fixed_features: Some(array![1.0]),
            })
            .unwrap_err();
        assert_eq!(err, OracleError::FeatureLength { expected: 2, got: 1 });
    }

    #[test]
    fn ridge_true_gradient_examples() {
        let xt = array![[0.4, 0.5, 0.6]];
        let unpenalized = RidgeProblem::new(xt.clone(), 1e-300, 0.25).unwrap();
        let mut g = Array1::zeros(3);
        unpenalized.true_gradient(0, xt.row(0), g.view_mut());
        assert!(g.iter().all(|v| v.abs() < 1e-15));

        let prob = RidgeProblem::new(xt.clone(), 0.2, 0.25).unwrap();
        prob.true_gradient(0, Array1::zeros(3).view(), g.view_mut());
        for (a, b) in g.iter().zip(xt.row(0)) {
            assert_abs_diff_eq!(*a, -(2.0 / 3.0) * b, epsilon = 1e-15);
        }
    }

    #[test]
    fn ridge_optimum_examples() {
        let c = 0.47;
        let xt = Array2::from_elem((4, 3), c);
        let rho = 0.3;
        let opt = ridge_optimum(xt.view(), rho);
        assert!(opt.iter().all(|&v| (v - c / (1.0 + 3.0 * rho)).abs() < 1e-15));

        let xt = array![[0.4, 0.6], [0.5, 0.5], [0.6, 0.55]];
        let opt = ridge_optimum(xt.view(), 0.01);
        let mean = xt.mean_axis(ndarray::Axis(0)).unwrap();
        for (a, m) in opt.iter().zip(mean.iter()) {
            assert_abs_diff_eq!(*a, m / 1.03, epsilon = 1e-15);
        }

        let single = array![[0.42, 0.58]];
        let opt = ridge_optimum(single.view(), 0.05);
        assert_abs_diff_eq!(opt[0], 0.42 / 1.15, epsilon = 1e-15);
        assert_abs_diff_eq!(opt[1], 0.58 / 1.15, epsilon = 1e-15);
    }

    #[test]
    fn ridge_rejects_nonpositive_penalty() {
        assert!(RidgeProblem::new(array![[0.5]], 0.0, 0.25).is_err());
    }

    #[test]
    fn ridge_constants() {
        let prob = RidgeProblem::new(array![[0.5]], 0.01, 0.25).unwrap();
        let c = prob.constants();
        assert_abs_diff_eq!(c.mu, 2.0 / 3.0 + 0.02, epsilon = 1e-15);
        assert_eq!(c.mu, c.big_l);
        assert_eq!(c.sigma, None);
    }

    #[test]
    fn quadratic_zero_noise_is_exact() {
        let t = array![[1.0, -2.0], [0.5, 0.0]];
        let prob = QuadraticProblem::new(t.clone(), 1.7, 0.0).unwrap();
        let mut g = Array1::zeros(2);
        prob.sample_gradient(0, t.row(0), &mut rng(0), g.view_mut());
        assert_eq!(g, array![0.0, 0.0]);
        let x = array![3.0, 1.0];
        prob.sample_gradient(1, x.view(), &mut rng(1), g.view_mut());
        assert_eq!(g, array![1.7 * 2.5, 1.7 * 1.0]);
        assert_eq!(prob.optimum(), array![0.75, -1.0]);
        assert_eq!(prob.constants().sigma, Some(0.0));
    }

    #[test]
    fn estimate_sigma_zero_noise() {
        let prob = QuadraticProblem::new(array![[1.0, 2.0]], 1.0, 0.0).unwrap();
        let s = estimate_sigma(&prob, array![0.0, 0.0].view(), 10, &mut rng(0)).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(
            estimate_sigma(&prob, array![0.0, 0.0].view(), 1, &mut rng(0)),
            Err(OracleError::InsufficientSamples(1))
        );
    }

    #[test]
    fn optimum_zeroes_global_gradient() {
        let mut r = stream(3, Purpose::Instance, 0, 0);
        let prob = RidgeProblem::random(7, 5, 0.01, 0.25, 0.4, 0.6, &mut r).unwrap();
        let g = prob.global_gradient(prob.optimum());
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g}");
        let q = QuadraticProblem::random(7, 5, 2.0, 0.3, -1.0, 1.0, &mut r).unwrap();
        let g = q.global_gradient(q.optimum());
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g}");
    }
}
