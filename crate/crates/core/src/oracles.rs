//! Stochastic gradient oracles `grad_hat J_k(w)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problems::{Problem, Sample};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleKind {
    /// True gradient, no sampling.
    Exact,
    /// Gradient of the loss at one fresh sample.
    Ordinary,
    /// Average over `batch` fresh samples.
    Minibatch,
    /// Ordinary gradient scaled by `1/pi` with probability `pi`, zero otherwise.
    Asynchronous,
    /// Ordinary gradient plus isotropic Gaussian noise.
    Perturbed,
}

impl OracleKind {
    pub const ALL: [OracleKind; 5] = [
        OracleKind::Exact,
        OracleKind::Ordinary,
        OracleKind::Minibatch,
        OracleKind::Asynchronous,
        OracleKind::Perturbed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Exact => "exact",
            OracleKind::Ordinary => "ordinary",
            OracleKind::Minibatch => "minibatch",
            OracleKind::Asynchronous => "asynchronous",
            OracleKind::Perturbed => "perturbed",
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OracleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown oracle kind `{s}`")))
    }
}

/// Each kind reads only its own parameter; the others are still validated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub batch: usize,
    pub update_prob: f64,
    /// Total variance `sigma_v^2` of the added perturbation, spread evenly
    /// over the `M` coordinates.
    pub perturbation_var: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self::ordinary()
    }
}

impl OracleConfig {
    pub fn ordinary() -> Self {
        Self {
            kind: OracleKind::Ordinary,
            batch: 1,
            update_prob: 1.0,
            perturbation_var: 0.0,
        }
    }

    pub fn exact() -> Self {
        Self {
            kind: OracleKind::Exact,
            ..Self::ordinary()
        }
    }

    pub fn minibatch(batch: usize) -> Self {
        Self {
            kind: OracleKind::Minibatch,
            batch,
            ..Self::ordinary()
        }
    }

    pub fn asynchronous(update_prob: f64) -> Self {
        Self {
            kind: OracleKind::Asynchronous,
            update_prob,
            ..Self::ordinary()
        }
    }

    pub fn perturbed(perturbation_var: f64) -> Self {
        Self {
            kind: OracleKind::Perturbed,
            perturbation_var,
            ..Self::ordinary()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Parameter("minibatch size must be at least 1".into()));
        }
        if !(self.update_prob > 0.0 && self.update_prob <= 1.0) {
            return Err(Error::Parameter(format!(
                "update probability must lie in (0, 1], got {}",
                self.update_prob
            )));
        }
        if !(self.perturbation_var >= 0.0 && self.perturbation_var.is_finite()) {
            return Err(Error::Parameter(format!(
                "perturbation variance must be >= 0, got {}",
                self.perturbation_var
            )));
        }
        Ok(())
    }

    /// Validated single evaluation.
    pub fn evaluate(&self, problem: &Problem, k: usize, w: &[f64], rng: &mut Stream) -> Result<DVector<f64>> {
        self.validate()?;
        if k >= problem.agents() {
            return Err(Error::Parameter(format!("agent index {k} out of range")));
        }
        if w.len() != problem.dim() {
            return Err(Error::shape(format!("model of dimension {}", problem.dim()), w.len()));
        }
        let mut scratch = OracleScratch::new(problem);
        let mut out = DVector::zeros(w.len());
        self.evaluate_into(problem, k, w, rng, &mut scratch, out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked evaluation into `out`; used inside the iteration loops.
    pub(crate) fn evaluate_into(
        &self,
        problem: &Problem,
        k: usize,
        w: &[f64],
        rng: &mut Stream,
        scratch: &mut OracleScratch,
        out: &mut [f64],
    ) {
        match self.kind {
            OracleKind::Exact => problem.true_gradient_into(k, w, out),
            OracleKind::Ordinary => ordinary(problem, k, w, rng, scratch, out),
            OracleKind::Minibatch => {
                ordinary(problem, k, w, rng, scratch, out);
                if self.batch > 1 {
                    for _ in 1..self.batch {
                        problem.sample_into(k, rng, &mut scratch.sample);
                        problem.grad_loss_into(w, &scratch.sample, &mut scratch.grad);
                        for (o, g) in out.iter_mut().zip(&scratch.grad) {
                            *o += g;
                        }
                    }
                    let inv = 1.0 / self.batch as f64;
                    out.iter_mut().for_each(|o| *o *= inv);
                }
            }
            OracleKind::Asynchronous => {
                let pi = self.update_prob;
                // pi = 1 draws no coin so the stream matches the ordinary oracle
                if pi < 1.0 && rng.random::<f64>() >= pi {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
                ordinary(problem, k, w, rng, scratch, out);
                if pi < 1.0 {
                    let inv = 1.0 / pi;
                    out.iter_mut().for_each(|o| *o *= inv);
                }
            }
            OracleKind::Perturbed => {
                ordinary(problem, k, w, rng, scratch, out);
                if self.perturbation_var > 0.0 {
                    let sd = (self.perturbation_var / out.len() as f64).sqrt();
                    for o in out.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *o += sd * z;
                    }
                }
            }
        }
    }

    /// Exact `E||grad_hat - grad J_k(w)||^2` at `w`.
    pub fn noise_variance(&self, problem: &Problem, k: usize, w: &[f64]) -> f64 {
        let base = problem.gradient_noise_variance(k, w);
        match self.kind {
            OracleKind::Exact => 0.0,
            OracleKind::Ordinary => base,
            OracleKind::Minibatch => base / self.batch as f64,
            OracleKind::Asynchronous => {
                let g2 = problem.true_gradient(k, w).norm_squared();
                let pi = self.update_prob;
                (base + g2) / pi - g2
            }
            OracleKind::Perturbed => base + self.perturbation_var,
        }
    }

    /// Exact covariance of `grad_hat - grad J_k(w)` at `w`.
    pub fn noise_covariance(&self, problem: &Problem, k: usize, w: &[f64]) -> DMatrix<f64> {
        let m = problem.dim();
        let base = problem.gradient_noise_covariance(k, w);
        match self.kind {
            OracleKind::Exact => DMatrix::zeros(m, m),
            OracleKind::Ordinary => base,
            OracleKind::Minibatch => base / self.batch as f64,
            OracleKind::Asynchronous => {
                let g = problem.true_gradient(k, w);
                let ggt = &g * g.transpose();
                (base + &ggt) / self.update_prob - ggt
            }
            OracleKind::Perturbed => base + DMatrix::identity(m, m) * (self.perturbation_var / m as f64),
        }
    }

    /// `(beta_k^2, sigma_k^2)` for this oracle, from the ordinary-gradient
    /// constants and the Lipschitz constant `delta_k`.
    pub fn predicted_constants(&self, base: (f64, f64), delta: f64) -> (f64, f64) {
        let (b2, s2) = base;
        match self.kind {
            OracleKind::Exact => (0.0, 0.0),
            OracleKind::Ordinary => base,
            OracleKind::Minibatch => {
                let n = self.batch as f64;
                (b2 / n, s2 / n)
            }
            OracleKind::Asynchronous => {
                let pi = self.update_prob;
                (b2 / pi + (1.0 - pi) / pi * delta * delta, s2 / pi)
            }
            OracleKind::Perturbed => (b2, s2 + self.perturbation_var),
        }
    }
}

/// Reusable buffers so the inner loops do not allocate.
#[derive(Debug, Clone)]
pub struct OracleScratch {
    sample: Sample,
    grad: Vec<f64>,
}

impl OracleScratch {
    pub fn new(problem: &Problem) -> Self {
        Self {
            sample: problem.new_sample_buffer(),
            grad: vec![0.0; problem.dim()],
        }
    }
}

fn ordinary(problem: &Problem, k: usize, w: &[f64], rng: &mut Stream, scratch: &mut OracleScratch, out: &mut [f64]) {
    problem.sample_into(k, rng, &mut scratch.sample);
    problem.grad_loss_into(w, &scratch.sample, out);
}

/// Empirical first and second moments of `grad_hat - grad J_k(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMoments {
    pub bias: DVector<f64>,
    /// Per-coordinate standard error of `bias`.
    pub bias_std_error: DVector<f64>,
    /// Mean of `||grad_hat - grad J_k(w)||^2`.
    pub variance: f64,
    pub predicted: (f64, f64),
    /// `beta^2 ||w_ref - w||^2 + sigma^2`.
    pub bound: f64,
    pub trials: usize,
}

impl NoiseMoments {
    /// Largest `|bias_j| / se_j`; zero-variance coordinates count as zero
    /// when the bias is exactly zero and infinite otherwise.
    pub fn max_bias_z(&self) -> f64 {
        self.bias
            .iter()
            .zip(self.bias_std_error.iter())
            .map(|(b, se)| {
                if *se > 0.0 {
                    b.abs() / se
                } else if *b == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

pub const MIN_NOISE_TRIALS: usize = 1000;

/// Monte-Carlo check of unbiasedness and the variance bound at `w`, with
/// `w_ref` the reference point of the bound.
pub fn estimate_noise_moments(
    config: &OracleConfig,
    problem: &Problem,
    k: usize,
    w: &[f64],
    w_ref: &[f64],
    trials: usize,
    rng: &mut Stream,
) -> Result<NoiseMoments> {
    config.validate()?;
    if trials < MIN_NOISE_TRIALS {
        return Err(Error::Parameter(format!(
            "noise estimation needs at least {MIN_NOISE_TRIALS} trials, got {trials}"
        )));
    }
    let m = problem.dim();
    if w.len() != m || w_ref.len() != m {
        return Err(Error::shape(format!("points of dimension {m}"), format!("{} and {}", w.len(), w_ref.len())));
    }
    let truth = problem.true_gradient(k, w);
    let mut scratch = OracleScratch::new(problem);
    let mut g = vec![0.0; m];
    let mut sum: DVector<f64> = DVector::zeros(m);
    let mut sum_sq: DVector<f64> = DVector::zeros(m);
    let mut total_sq = 0.0;
    for _ in 0..trials {
        config.evaluate_into(problem, k, w, rng, &mut scratch, &mut g);
        for j in 0..m {
            let e = g[j] - truth[j];
            sum[j] += e;
            sum_sq[j] += e * e;
            total_sq += e * e;
        }
    }
    let n = trials as f64;
    let bias: DVector<f64> = &sum / n;
    let bias_std_error = DVector::from_fn(m, |j, _| {
        let var = (sum_sq[j] / n - bias[j] * bias[j]).max(0.0) * n / (n - 1.0);
        (var / n).sqrt()
    });
    let predicted = match problem.noise_constants(k) {
        Ok(base) => config.predicted_constants(base, problem.lipschitz(k)),
        Err(_) => {
            // denoising: additive noise only, exact variance is the constant
            let s2 = config.noise_variance(problem, k, w_ref);
            (0.0, s2)
        }
    };
    let dist2: f64 = w.iter().zip(w_ref).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(NoiseMoments {
        bias,
        bias_std_error,
        variance: total_sq / n,
        predicted,
        bound: predicted.0 * dist2 + predicted.1,
        trials,
    })
}
