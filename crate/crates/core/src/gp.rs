//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! The GP models the residual between the true reward and the learned prior,
//! so its own prior mean is zero. [`GpState`] is a value: adding an
//! observation returns a new state and leaves the original untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Always added to the noise variance on the Gram diagonal.
pub const NOISE_FLOOR: f64 = 1e-8;
const JITTER_START: f64 = 1e-8;
const JITTER_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let k = KernelParams {
            lengthscales,
            signal_variance,
            noise_variance,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("lengthscales must be positive".into()));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidArgument("signal variance must be positive".into()));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidArgument("noise variance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn diagonal_noise(&self) -> f64 {
        self.noise_variance + NOISE_FLOOR
    }

    /// Kernel value without the dimension check.
    #[inline]
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = (x - y) / l;
            s += d * d;
        }
        self.signal_variance * (-0.5 * s).exp()
    }
}

/// `σ_f² · exp(−½ Σ_d ((a_d − b_d)/ℓ_d)²)`.
pub fn sqexp_kernel(a: &[f64], b: &[f64], k: &KernelParams) -> Result<f64> {
    for v in [a, b] {
        if v.len() != k.dim() {
            return Err(Error::DimensionMismatch {
                expected: k.dim(),
                got: v.len(),
            });
        }
    }
    Ok(k.eval(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub variance: f64,
}

impl Posterior {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Observations plus the Cholesky factor of `K + (σ_n² + floor + jitter) I`.
#[derive(Debug, Clone)]
pub struct GpState {
    kernel: KernelParams,
    /// Observed inputs, flattened row-major (`len × dim`).
    inputs: Vec<f64>,
    targets: Vec<f64>,
    /// Lower-triangular factor, row-major `n × n`.
    chol: Vec<f64>,
    /// `(K + σ²I)⁻¹ y`.
    weights: Vec<f64>,
    /// Extra diagonal jitter that made the current factorization succeed.
    jitter: f64,
}

impl GpState {
    pub fn new(kernel: KernelParams) -> Result<Self> {
        kernel.validate()?;
        Ok(GpState {
            kernel,
            inputs: Vec::new(),
            targets: Vec::new(),
            chol: Vec::new(),
            weights: Vec::new(),
            jitter: 0.0,
        })
    }

    /// Builds the state from a batch with one full factorization.
    pub fn from_observations<'a, I>(kernel: KernelParams, observations: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut s = GpState::new(kernel)?;
        for (a, y) in observations {
            s.push_raw(a, y)?;
        }
        s.refactor()?;
        Ok(s)
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.kernel.dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn observations(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.input(i), self.targets[i]))
    }

    fn push_raw(&mut self, a: &[f64], y: f64) -> Result<()> {
        if a.len() != self.kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim(),
                got: a.len(),
            });
        }
        if !y.is_finite() || a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("observation ({a:?}, {y})")));
        }
        self.inputs.extend_from_slice(a);
        self.targets.push(y);
        Ok(())
    }

    /// Returns a new state with `(a, residual)` appended.
    pub fn add_observation(&self, a: &[f64], residual: f64) -> Result<GpState> {
        let mut next = self.clone();
        next.push_raw(a, residual)?;
        if !next.extend_factor() {
            next.refactor()?;
        } else {
            next.solve_weights();
        }
        Ok(next)
    }

    /// Appends one row to the Cholesky factor. Returns false if the new pivot
    /// is not positive, in which case the caller refactors with jitter.
    fn extend_factor(&mut self) -> bool {
        let n = self.len();
        let old = n - 1;
        let a = self.input(old).to_vec();
        let mut row: Vec<f64> = (0..old).map(|j| self.kernel.eval(self.input(j), &a)).collect();
        // Forward substitution against the existing factor.
        for i in 0..old {
            let mut s = row[i];
            for k in 0..i {
                s -= self.chol[i * old + k] * row[k];
            }
            row[i] = s / self.chol[i * old + i];
        }
        let diag = self.kernel.signal_variance + self.kernel.diagonal_noise() + self.jitter
            - row.iter().map(|v| v * v).sum::<f64>();
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let mut chol = vec![0.0; n * n];
        for i in 0..old {
            chol[i * n..i * n + i + 1].copy_from_slice(&self.chol[i * old..i * old + i + 1]);
        }
        chol[old * n..old * n + old].copy_from_slice(&row);
        chol[old * n + old] = diag.sqrt();
        self.chol = chol;
        true
    }

    /// Full refactorization with jitter escalation.
    fn refactor(&mut self) -> Result<()> {
        let n = self.len();
        let base = self.kernel.diagonal_noise();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel.eval(self.input(i), self.input(j));
                gram[i * n + j] = v;
                gram[j * n + i] = v;
            }
        }
        let mut jitter = 0.0;
        let mut next_jitter = JITTER_START;
        for attempt in 0..=JITTER_ATTEMPTS {
            if let Some(l) = cholesky(&gram, n, base + jitter) {
                self.chol = l;
                self.jitter = jitter;
                self.solve_weights();
                return Ok(());
            }
            if attempt == JITTER_ATTEMPTS {
                break;
            }
            jitter = next_jitter;
            next_jitter *= 10.0;
        }
        Err(Error::Factorization { jitter })
    }

    fn solve_weights(&mut self) {
        let n = self.len();
        let mut w = self.targets.clone();
        forward_solve(&self.chol, n, &mut w);
        backward_solve_transposed(&self.chol, n, &mut w);
        self.weights = w;
    }

    /// Posterior mean only, O(n).
    pub fn mean(&self, a: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| self.kernel.eval(self.input(i), a) * self.weights[i])
            .sum()
    }

    pub fn posterior(&self, a: &[f64]) -> Result<Posterior> {
        if a.len() != self.kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim(),
                got: a.len(),
            });
        }
        Ok(self.posterior_unchecked(a))
    }

    pub(crate) fn posterior_unchecked(&self, a: &[f64]) -> Posterior {
        let n = self.len();
        let prior = self.kernel.signal_variance;
        if n == 0 {
            return Posterior {
                mean: 0.0,
                variance: prior,
            };
        }
        let mut v: Vec<f64> = (0..n).map(|i| self.kernel.eval(self.input(i), a)).collect();
        let mean = v.iter().zip(&self.weights).map(|(k, w)| k * w).sum();
        forward_solve(&self.chol, n, &mut v);
        let explained: f64 = v.iter().map(|x| x * x).sum();
        Posterior {
            mean,
            variance: (prior - explained).max(0.0),
        }
    }

    /// GP-UCB score `prior_mean + μ(a) + √β σ(a)`.
    pub fn ucb_score(&self, prior_mean: f64, a: &[f64], beta: f64) -> Result<f64> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
        }
        if a.len() != self.kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim(),
                got: a.len(),
            });
        }
        Ok(self.ucb_unchecked(prior_mean, a, beta))
    }

    #[inline]
    pub(crate) fn ucb_unchecked(&self, prior_mean: f64, a: &[f64], beta: f64) -> f64 {
        if beta == 0.0 {
            return prior_mean + self.mean(a);
        }
        let p = self.posterior_unchecked(a);
        prior_mean + p.mean + beta.sqrt() * p.std_dev()
    }
}

/// Free-function form of [`GpState::add_observation`].
pub fn add_observation(s: &GpState, a: &[f64], residual: f64) -> Result<GpState> {
    s.add_observation(a, residual)
}

pub fn posterior(s: &GpState, a: &[f64]) -> Result<Posterior> {
    s.posterior(a)
}

pub fn ucb_score(s: &GpState, prior_mean: f64, a: &[f64], beta: f64) -> Result<f64> {
    s.ucb_score(prior_mean, a, beta)
}

/// Cholesky of `gram + diag·I`; `None` when not positive definite.
fn cholesky(gram: &[f64], n: usize, diag: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = gram[i * n + j];
            if i == j {
                s += diag;
            }
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

fn backward_solve_transposed(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}
