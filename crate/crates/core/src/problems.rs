//! Per-agent risks `J_k(w) = E Q(w; x_k)`, their data generators, the
//! weighted consensus optimum and the gradient-noise constants.
//!
//! Three families are supported:
//!
//! * mean-square estimation, `gamma = h^T w_k° + v` with Gaussian `h ~ N(0, R_h,k)`
//!   and `Q = 1/2 (gamma - h^T w)^2`;
//! * denoising, `gamma = w_k° + v` with `Q = 1/2 ||gamma - w||^2`;
//! * ridge-regularized logistic regression over a finite per-agent pool,
//!   `Q = ln(1 + exp(-gamma h^T w)) + rho/2 ||w||^2`. The pool is the data
//!   distribution, so risks and gradients are exact averages.
//!
//! Gradients differentiate the stated losses (the ridge term included);
//! algorithms descend along `-mu * grad`.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::sorted_eigenvalues;
use crate::rng::{self, Purpose, Stream};
use crate::stacked::dot;

/// One observation `x = col{h, gamma}`. Quadratic and logistic samples carry
/// a scalar `gamma`; denoising samples carry an `M`-vector and no features.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub h: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Sample {
    pub fn scalar(h: Vec<f64>, gamma: f64) -> Self {
        Self { h, gamma: vec![gamma] }
    }

    fn with_capacity(dim: usize) -> Self {
        Self {
            h: Vec::with_capacity(dim),
            gamma: Vec::with_capacity(dim),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticAgent {
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    noise_var: f64,
    w_true: DVector<f64>,
}

impl QuadraticAgent {
    pub fn new(cov: DMatrix<f64>, noise_var: f64, w_true: DVector<f64>) -> Result<Self> {
        let m = w_true.len();
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::shape(
                format!("{m}x{m} feature covariance"),
                format!("{}x{}", cov.nrows(), cov.ncols()),
            ));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 {
            return Err(Error::Parameter("feature covariance must be symmetric".into()));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::Parameter(format!("noise variance must be >= 0, got {noise_var}")));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Parameter("feature covariance must be positive definite".into()))?
            .l();
        Ok(Self {
            cov,
            chol,
            noise_var,
            w_true,
        })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn w_true(&self) -> &DVector<f64> {
        &self.w_true
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    agents: Vec<QuadraticAgent>,
}

impl QuadraticProblem {
    pub fn new(agents: Vec<QuadraticAgent>) -> Result<Self> {
        let m = agents
            .first()
            .ok_or_else(|| Error::Parameter("problem needs at least one agent".into()))?
            .w_true
            .len();
        if let Some(k) = agents.iter().position(|a| a.w_true.len() != m) {
            return Err(Error::shape(format!("dimension {m}"), format!("agent {k} mismatch")));
        }
        Ok(Self { agents })
    }

    /// Identical agents.
    pub fn homogeneous(
        agents: usize,
        cov: DMatrix<f64>,
        noise_var: f64,
        w_true: DVector<f64>,
    ) -> Result<Self> {
        let a = QuadraticAgent::new(cov, noise_var, w_true)?;
        Self::new(vec![a; agents])
    }

    /// Diagonal covariance with eigenvalues evenly spaced in `[1, 2]`, a
    /// common model drawn from `N(0, I)` and per-agent offsets of standard
    /// deviation `spread` (zero gives a homogeneous problem).
    pub fn synthetic(agents: usize, dim: usize, noise_var: f64, spread: f64, seed: u64) -> Result<Self> {
        if agents == 0 || dim == 0 {
            return Err(Error::Parameter("K and M must be at least 1".into()));
        }
        let cov = DMatrix::from_diagonal(&DVector::from_fn(dim, |j, _| {
            if dim == 1 {
                1.0
            } else {
                1.0 + j as f64 / (dim - 1) as f64
            }
        }));
        let mut rng = rng::stream(seed, 0, Purpose::Problem, 0);
        let base = gaussian_vector(&mut rng, dim);
        let list = (0..agents)
            .map(|_| {
                let offset = gaussian_vector(&mut rng, dim) * spread;
                QuadraticAgent::new(cov.clone(), noise_var, &base + offset)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(list)
    }

    pub fn agent(&self, k: usize) -> &QuadraticAgent {
        &self.agents[k]
    }
}

#[derive(Debug, Clone)]
pub struct DenoisingProblem {
    w_true: Vec<DVector<f64>>,
    noise_var: Vec<f64>,
    /// Coupling strength of the Laplacian regularizer.
    pub eta: f64,
}

impl DenoisingProblem {
    pub fn new(w_true: Vec<DVector<f64>>, noise_var: Vec<f64>, eta: f64) -> Result<Self> {
        if w_true.is_empty() || w_true.len() != noise_var.len() {
            return Err(Error::Parameter(
                "denoising problem needs one model and one noise variance per agent".into(),
            ));
        }
        let m = w_true[0].len();
        if w_true.iter().any(|w| w.len() != m) {
            return Err(Error::shape(format!("dimension {m}"), "mixed model dimensions"));
        }
        if noise_var.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter("noise variances must be >= 0".into()));
        }
        if !(eta >= 0.0) {
            return Err(Error::Parameter(format!("coupling eta must be >= 0, got {eta}")));
        }
        Ok(Self {
            w_true,
            noise_var,
            eta,
        })
    }

    pub fn synthetic(agents: usize, dim: usize, noise_var: f64, spread: f64, eta: f64, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, 0, Purpose::Problem, 0);
        let base = gaussian_vector(&mut rng, dim);
        let w = (0..agents)
            .map(|_| &base + gaussian_vector(&mut rng, dim) * spread)
            .collect();
        Self::new(w, vec![noise_var; agents], eta)
    }

    /// Targets drawn uniformly from `[lo, hi]` per coordinate.
    pub fn uniform(agents: usize, dim: usize, lo: f64, hi: f64, noise_var: f64, eta: f64, seed: u64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::Parameter(format!("empty target range [{lo}, {hi}]")));
        }
        let mut rng = rng::stream(seed, 0, Purpose::Problem, 0);
        let w = (0..agents)
            .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(lo..=hi)))
            .collect();
        Self::new(w, vec![noise_var; agents], eta)
    }

    pub fn w_true(&self, k: usize) -> &DVector<f64> {
        &self.w_true[k]
    }

    pub fn noise_var(&self, k: usize) -> f64 {
        self.noise_var[k]
    }
}

#[derive(Debug, Clone)]
pub struct LogisticProblem {
    dim: usize,
    pools: Vec<Vec<Sample>>,
    second_moments: Vec<DMatrix<f64>>,
    pub rho: f64,
}

/// Smallest pool the synthetic generator produces.
pub const MIN_SYNTHETIC_POOL: usize = 100;

impl LogisticProblem {
    pub fn new(pools: Vec<Vec<Sample>>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Parameter(format!("ridge coefficient rho must be > 0, got {rho}")));
        }
        let dim = pools
            .first()
            .and_then(|p| p.first())
            .map(|s| s.h.len())
            .ok_or_else(|| Error::Parameter("logistic pools must be non-empty".into()))?;
        for (k, pool) in pools.iter().enumerate() {
            if pool.is_empty() {
                return Err(Error::Parameter(format!("agent {k} has an empty pool")));
            }
            for s in pool {
                if s.h.len() != dim || s.gamma.len() != 1 {
                    return Err(Error::shape(format!("features of dimension {dim} and one label"), "mismatched sample"));
                }
                if s.gamma[0] != 1.0 && s.gamma[0] != -1.0 {
                    return Err(Error::Parameter(format!("labels must be +1 or -1, got {}", s.gamma[0])));
                }
            }
        }
        let second_moments = pools
            .iter()
            .map(|pool| {
                let mut r = DMatrix::zeros(dim, dim);
                for s in pool {
                    let h = DVector::from_column_slice(&s.h);
                    r += &h * h.transpose();
                }
                r / pool.len() as f64
            })
            .collect();
        Ok(Self {
            dim,
            pools,
            second_moments,
            rho,
        })
    }

    /// Features `h ~ N(0, I)`, labels `+1` with probability
    /// `1 / (1 + exp(-h^T w_k°))` around per-agent models offset by `spread`.
    pub fn synthetic(agents: usize, dim: usize, pool_size: usize, rho: f64, spread: f64, seed: u64) -> Result<Self> {
        if pool_size < MIN_SYNTHETIC_POOL {
            return Err(Error::Parameter(format!(
                "synthetic pools need at least {MIN_SYNTHETIC_POOL} samples, got {pool_size}"
            )));
        }
        let mut rng = rng::stream(seed, 0, Purpose::Problem, 0);
        let base = gaussian_vector(&mut rng, dim);
        let pools = (0..agents)
            .map(|_| {
                let w = &base + gaussian_vector(&mut rng, dim) * spread;
                (0..pool_size)
                    .map(|_| {
                        let h = gaussian_vector(&mut rng, dim);
                        let p = 1.0 / (1.0 + (-h.dot(&w)).exp());
                        let label = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
                        Sample::scalar(h.as_slice().to_vec(), label)
                    })
                    .collect()
            })
            .collect();
        Self::new(pools, rho)
    }

    pub fn pool(&self, k: usize) -> &[Sample] {
        &self.pools[k]
    }

    /// Uncentered second moment `E h h^T` of agent `k`'s pool.
    pub fn second_moment(&self, k: usize) -> &DMatrix<f64> {
        &self.second_moments[k]
    }
}

/// Reads a pool from CSV rows `h_1, ..., h_M, label`. A first row that does
/// not parse as numbers is treated as a header.
pub fn load_pool_csv<R: Read>(reader: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parameter(format!("pool row {}: {e}", i + 1))),
        };
        if values.len() < 2 {
            return Err(Error::Parameter(format!(
                "pool row {} needs at least one feature and a label",
                i + 1
            )));
        }
        let (h, label) = values.split_at(values.len() - 1);
        out.push(Sample::scalar(h.to_vec(), label[0]));
    }
    Ok(out)
}

/// Optimum of the weighted aggregate `sum_k p_k J_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub w_opt: DVector<f64>,
    pub risk_opt: f64,
    /// `b^2 = (1/K) sum_k ||grad J_k(w°)||^2`.
    pub heterogeneity: f64,
}

#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Denoising(DenoisingProblem),
    Logistic(LogisticProblem),
}

impl From<QuadraticProblem> for Problem {
    fn from(p: QuadraticProblem) -> Self {
        Problem::Quadratic(p)
    }
}

impl From<DenoisingProblem> for Problem {
    fn from(p: DenoisingProblem) -> Self {
        Problem::Denoising(p)
    }
}

impl From<LogisticProblem> for Problem {
    fn from(p: LogisticProblem) -> Self {
        Problem::Logistic(p)
    }
}

const LOGISTIC_GRAD_TOL: f64 = 1e-10;
const LOGISTIC_MAX_ITERS: usize = 1_000_000;

impl Problem {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::Denoising(_) => "denoising",
            Problem::Logistic(_) => "logistic",
        }
    }

    pub fn agents(&self) -> usize {
        match self {
            Problem::Quadratic(p) => p.agents.len(),
            Problem::Denoising(p) => p.w_true.len(),
            Problem::Logistic(p) => p.pools.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(p) => p.agents[0].w_true.len(),
            Problem::Denoising(p) => p.w_true[0].len(),
            Problem::Logistic(p) => p.dim,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        match self {
            Problem::Quadratic(p) => p.agents.windows(2).all(|w| {
                w[0].cov == w[1].cov && w[0].noise_var == w[1].noise_var && w[0].w_true == w[1].w_true
            }),
            Problem::Denoising(p) => {
                p.w_true.windows(2).all(|w| w[0] == w[1]) && p.noise_var.windows(2).all(|v| v[0] == v[1])
            }
            Problem::Logistic(p) => p.pools.windows(2).all(|w| w[0] == w[1]),
        }
    }

    pub(crate) fn new_sample_buffer(&self) -> Sample {
        Sample::with_capacity(self.dim())
    }

    /// Draws agent `k`'s next observation into `out`.
    pub fn sample_into(&self, k: usize, rng: &mut Stream, out: &mut Sample) {
        out.h.clear();
        out.gamma.clear();
        match self {
            Problem::Quadratic(p) => {
                let a = &p.agents[k];
                let m = a.w_true.len();
                out.h.resize(m, 0.0);
                // h = chol * z, lower triangular
                let mut z = [0.0_f64; 16];
                let mut zv = Vec::new();
                let z: &mut [f64] = if m <= 16 {
                    &mut z[..m]
                } else {
                    zv.resize(m, 0.0);
                    &mut zv
                };
                for zi in z.iter_mut() {
                    *zi = rng.sample(StandardNormal);
                }
                for i in 0..m {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += a.chol[(i, j)] * z[j];
                    }
                    out.h[i] = acc;
                }
                let v: f64 = rng.sample::<f64, _>(StandardNormal) * a.noise_var.sqrt();
                out.gamma.push(dot(&out.h, a.w_true.as_slice()) + v);
            }
            Problem::Denoising(p) => {
                let sd = p.noise_var[k].sqrt();
                for &x in p.w_true[k].iter() {
                    let v: f64 = rng.sample(StandardNormal);
                    out.gamma.push(x + sd * v);
                }
            }
            Problem::Logistic(p) => {
                let pool = &p.pools[k];
                let s = &pool[rng.random_range(0..pool.len())];
                out.h.extend_from_slice(&s.h);
                out.gamma.push(s.gamma[0]);
            }
        }
    }

    pub fn sample(&self, k: usize, rng: &mut Stream) -> Sample {
        let mut s = self.new_sample_buffer();
        self.sample_into(k, rng, &mut s);
        s
    }

    fn check_sample(&self, w: &[f64], s: &Sample) -> Result<()> {
        let m = self.dim();
        if w.len() != m {
            return Err(Error::shape(format!("model of dimension {m}"), w.len()));
        }
        let ok = match self {
            Problem::Denoising(_) => s.gamma.len() == m,
            _ => s.h.len() == m && s.gamma.len() == 1,
        };
        if !ok {
            return Err(Error::shape(
                format!("sample for dimension {m}"),
                format!("h of length {}, gamma of length {}", s.h.len(), s.gamma.len()),
            ));
        }
        Ok(())
    }

    /// Loss `Q(w; x)`.
    pub fn loss(&self, w: &[f64], s: &Sample) -> Result<f64> {
        self.check_sample(w, s)?;
        Ok(match self {
            Problem::Quadratic(_) => {
                let e = s.gamma[0] - dot(&s.h, w);
                0.5 * e * e
            }
            Problem::Denoising(_) => 0.5 * crate::stacked::dist_sq(&s.gamma, w),
            Problem::Logistic(p) => {
                let z = s.gamma[0] * dot(&s.h, w);
                softplus(-z) + 0.5 * p.rho * dot(w, w)
            }
        })
    }

    /// Gradient of the loss with respect to `w`.
    pub fn grad_loss(&self, w: &[f64], s: &Sample) -> Result<DVector<f64>> {
        self.check_sample(w, s)?;
        let mut g = DVector::zeros(w.len());
        self.grad_loss_into(w, s, g.as_mut_slice());
        Ok(g)
    }

    #[inline]
    pub(crate) fn grad_loss_into(&self, w: &[f64], s: &Sample, out: &mut [f64]) {
        match self {
            Problem::Quadratic(_) => {
                let e = s.gamma[0] - dot(&s.h, w);
                for (o, h) in out.iter_mut().zip(&s.h) {
                    *o = -h * e;
                }
            }
            Problem::Denoising(_) => {
                for ((o, x), y) in out.iter_mut().zip(w).zip(&s.gamma) {
                    *o = x - y;
                }
            }
            Problem::Logistic(p) => {
                let z = s.gamma[0] * dot(&s.h, w);
                let c = -s.gamma[0] * sigmoid(-z);
                for ((o, h), x) in out.iter_mut().zip(&s.h).zip(w) {
                    *o = c * h + p.rho * x;
                }
            }
        }
    }

    /// Local risk `J_k(w)`.
    pub fn risk(&self, k: usize, w: &[f64]) -> f64 {
        match self {
            Problem::Quadratic(p) => {
                let a = &p.agents[k];
                let d = DVector::from_column_slice(w) - &a.w_true;
                0.5 * d.dot(&(&a.cov * &d)) + 0.5 * a.noise_var
            }
            Problem::Denoising(p) => {
                0.5 * crate::stacked::dist_sq(w, p.w_true[k].as_slice())
                    + 0.5 * w.len() as f64 * p.noise_var[k]
            }
            Problem::Logistic(p) => {
                let pool = &p.pools[k];
                let s: f64 = pool
                    .iter()
                    .map(|s| softplus(-s.gamma[0] * dot(&s.h, w)))
                    .sum();
                s / pool.len() as f64 + 0.5 * p.rho * dot(w, w)
            }
        }
    }

    /// `grad J_k(w)`.
    pub fn true_gradient(&self, k: usize, w: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(w.len());
        self.true_gradient_into(k, w, g.as_mut_slice());
        g
    }

    pub(crate) fn true_gradient_into(&self, k: usize, w: &[f64], out: &mut [f64]) {
        match self {
            Problem::Quadratic(p) => {
                let a = &p.agents[k];
                let m = w.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += a.cov[(i, j)] * (w[j] - a.w_true[j]);
                    }
                    *o = acc;
                }
            }
            Problem::Denoising(p) => {
                for ((o, x), t) in out.iter_mut().zip(w).zip(p.w_true[k].iter()) {
                    *o = x - t;
                }
            }
            Problem::Logistic(p) => {
                let pool = &p.pools[k];
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut g = vec![0.0; w.len()];
                for s in pool {
                    self.grad_loss_into(w, s, &mut g);
                    for (o, x) in out.iter_mut().zip(&g) {
                        *o += x;
                    }
                }
                let inv = 1.0 / pool.len() as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
        }
    }

    /// Minimizer of `sum_k p_k J_k` together with the heterogeneity `b^2`.
    pub fn centralized_optimum(&self, p: &[f64]) -> Result<GroundTruth> {
        let k = self.agents();
        if p.len() != k {
            return Err(Error::shape(format!("{k} weights"), p.len()));
        }
        let s: f64 = p.iter().sum();
        if p.iter().any(|x| *x < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter("weights must be non-negative and sum to one".into()));
        }
        let m = self.dim();
        let w_opt = match self {
            Problem::Quadratic(q) => {
                let mut h = DMatrix::zeros(m, m);
                let mut rhs = DVector::zeros(m);
                for (a, pk) in q.agents.iter().zip(p) {
                    h += &a.cov * *pk;
                    rhs += &a.cov * &a.w_true * *pk;
                }
                h.lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Numerical("weighted feature covariance is singular".into()))?
            }
            Problem::Denoising(d) => d
                .w_true
                .iter()
                .zip(p)
                .fold(DVector::zeros(m), |acc, (w, pk)| acc + w * *pk),
            Problem::Logistic(_) => self.logistic_optimum(p)?,
        };
        let risk_opt = (0..k).map(|i| p[i] * self.risk(i, w_opt.as_slice())).sum();
        let heterogeneity = (0..k)
            .map(|i| self.true_gradient(i, w_opt.as_slice()).norm_squared())
            .sum::<f64>()
            / k as f64;
        Ok(GroundTruth {
            w_opt,
            risk_opt,
            heterogeneity,
        })
    }

    fn logistic_optimum(&self, p: &[f64]) -> Result<DVector<f64>> {
        let Problem::Logistic(lp) = self else {
            unreachable!("called for logistic problems only")
        };
        let m = lp.dim;
        let smooth: f64 = (0..p.len()).map(|k| p[k] * self.lipschitz(k)).sum();
        let step = 1.0 / smooth;
        let mut w = DVector::zeros(m);
        for _ in 0..LOGISTIC_MAX_ITERS {
            let g = (0..p.len()).fold(DVector::zeros(m), |acc, k| {
                acc + self.true_gradient(k, w.as_slice()) * p[k]
            });
            if g.norm() <= LOGISTIC_GRAD_TOL {
                return Ok(w);
            }
            w -= g * step;
        }
        Err(Error::Numerical(format!(
            "logistic optimum not reached within {LOGISTIC_MAX_ITERS} gradient steps"
        )))
    }

    /// Table constants `(beta_k^2, sigma_k^2)` bounding
    /// `E||grad_hat - grad||^2 <= beta^2 ||w° - w||^2 + sigma^2`.
    ///
    /// For Gaussian features `E||R - hh^T||^2` is evaluated in Frobenius
    /// norm, `(Tr R)^2 + ||R||_F^2`, which dominates the spectral-norm
    /// version and keeps the bound valid.
    pub fn noise_constants(&self, k: usize) -> Result<(f64, f64)> {
        match self {
            Problem::Quadratic(p) => {
                let a = &p.agents[k];
                let tr = a.cov.trace();
                let fro = a.cov.norm_squared();
                Ok((4.0 * (tr * tr + fro), 4.0 * a.noise_var * tr))
            }
            Problem::Logistic(p) => Ok((0.0, p.second_moments[k].trace())),
            Problem::Denoising(_) => Err(Error::Contract(
                "noise constants are tabulated for quadratic and logistic losses only".into(),
            )),
        }
    }

    /// Exact covariance of the ordinary gradient noise
    /// `grad Q(w; x) - grad J_k(w)` at `w`.
    pub fn gradient_noise_covariance(&self, k: usize, w: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        match self {
            Problem::Quadratic(p) => {
                // E[(hh^T - R) d d^T (hh^T - R)] = (d^T R d) R + R d d^T R for Gaussian h
                let a = &p.agents[k];
                let d = DVector::from_column_slice(w) - &a.w_true;
                let rd = &a.cov * &d;
                &a.cov * (d.dot(&rd) + a.noise_var) + &rd * rd.transpose()
            }
            Problem::Denoising(p) => DMatrix::identity(m, m) * p.noise_var[k],
            Problem::Logistic(p) => {
                let pool = &p.pools[k];
                let mut second = DMatrix::zeros(m, m);
                let mut mean = DVector::zeros(m);
                let mut g = DVector::zeros(m);
                for s in pool {
                    self.grad_loss_into(w, s, g.as_mut_slice());
                    second += &g * g.transpose();
                    mean += &g;
                }
                let n = pool.len() as f64;
                mean /= n;
                second / n - &mean * mean.transpose()
            }
        }
    }

    /// `Tr` of [`Problem::gradient_noise_covariance`].
    pub fn gradient_noise_variance(&self, k: usize, w: &[f64]) -> f64 {
        self.gradient_noise_covariance(k, w).trace()
    }

    /// Hessian of `J_k` at `w`.
    pub fn hessian(&self, k: usize, w: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        match self {
            Problem::Quadratic(p) => p.agents[k].cov.clone(),
            Problem::Denoising(_) => DMatrix::identity(m, m),
            Problem::Logistic(p) => {
                let pool = &p.pools[k];
                let mut h = DMatrix::zeros(m, m);
                for s in pool {
                    let z = s.gamma[0] * dot(&s.h, w);
                    let c = sigmoid(z) * sigmoid(-z);
                    let hv = DVector::from_column_slice(&s.h);
                    h += &hv * hv.transpose() * c;
                }
                h / pool.len() as f64 + DMatrix::identity(m, m) * p.rho
            }
        }
    }

    /// Lipschitz constant `delta_k` of `grad J_k`.
    pub fn lipschitz(&self, k: usize) -> f64 {
        match self {
            Problem::Quadratic(p) => max_eigenvalue(&p.agents[k].cov),
            Problem::Denoising(_) => 1.0,
            Problem::Logistic(p) => 0.25 * max_eigenvalue(&p.second_moments[k]) + p.rho,
        }
    }

    /// `(nu, delta)`: strong convexity and smoothness of `sum_k p_k J_k`.
    /// Exact for quadratic risks; for logistic risks `nu = rho` and `delta`
    /// is the weighted Lipschitz bound.
    pub fn curvature(&self, p: &[f64]) -> (f64, f64) {
        match self {
            Problem::Quadratic(q) => {
                let m = self.dim();
                let h = q
                    .agents
                    .iter()
                    .zip(p)
                    .fold(DMatrix::zeros(m, m), |acc, (a, pk)| acc + &a.cov * *pk);
                let ev = sorted_eigenvalues(h);
                (ev[0], ev[ev.len() - 1])
            }
            Problem::Denoising(_) => (1.0, 1.0),
            Problem::Logistic(lp) => (lp.rho, (0..p.len()).map(|k| p[k] * self.lipschitz(k)).sum()),
        }
    }

    /// Hessian of `sum_k p_k J_k` for quadratic-type risks.
    pub fn aggregate_hessian(&self, p: &[f64]) -> Option<DMatrix<f64>> {
        let m = self.dim();
        match self {
            Problem::Quadratic(q) => Some(
                q.agents
                    .iter()
                    .zip(p)
                    .fold(DMatrix::zeros(m, m), |acc, (a, pk)| acc + &a.cov * *pk),
            ),
            Problem::Denoising(_) => Some(DMatrix::identity(m, m)),
            Problem::Logistic(_) => None,
        }
    }
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    *sorted_eigenvalues(m.clone()).last().expect("non-empty matrix")
}

fn gaussian_vector(rng: &mut Stream, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-x})` without overflow.
#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
