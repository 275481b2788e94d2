//! Leading-order theoretical predictions reported next to measurements.

use nalgebra::{DMatrix, DVector};

use crate::algorithms::{step, AlgorithmKind, AlgorithmState};
use crate::error::{Error, Result};
use crate::graph::Network;
use crate::oracles::OracleConfig;
use crate::problems::{GroundTruth, Problem};
use crate::stacked::NetworkVector;

/// Steady-state excess risk `(mu/4) sum_k p_k^2 sigma_k^2` from per-agent
/// noise variances and the Perron vector.
pub fn steady_state_er(p: &[f64], sigma2: &[f64], mu: f64) -> Result<f64> {
    if p.len() != sigma2.len() {
        return Err(Error::shape(format!("{} noise variances", p.len()), sigma2.len()));
    }
    Ok(mu / 4.0 * p.iter().zip(sigma2).map(|(p, s)| p * p * s).sum::<f64>())
}

/// [`steady_state_er`] with the oracle's exact noise variance at the
/// network optimum.
pub fn predict_steady_state_er(
    problem: &Problem,
    network: &Network,
    oracle: &OracleConfig,
    truth: &GroundTruth,
    mu: f64,
) -> Result<f64> {
    let p = network.stats.perron.as_slice();
    let w = truth.w_opt.as_slice();
    let sigma2: Vec<f64> = (0..problem.agents()).map(|k| oracle.noise_variance(problem, k, w)).collect();
    steady_state_er(p, &sigma2, mu)
}

/// Per-iteration contraction `1 - 2 nu mu` of the squared error.
pub fn predict_rate(nu: f64, mu: f64) -> f64 {
    1.0 - 2.0 * nu * mu
}

/// Network mean-square deviation `(mu/2) Tr(H^-1 sum_k p_k^2 R_k)`, where
/// `H = sum_k p_k H_k(w)` and `R_k` is the oracle noise covariance at `w`.
/// `None` when `H` is singular.
pub fn predict_msd(
    problem: &Problem,
    network: &Network,
    oracle: &OracleConfig,
    truth: &GroundTruth,
    mu: f64,
) -> Option<f64> {
    let p = network.stats.perron.as_slice();
    let w = truth.w_opt.as_slice();
    let m = problem.dim();
    let mut h = DMatrix::zeros(m, m);
    let mut r = DMatrix::zeros(m, m);
    for (k, &pk) in p.iter().enumerate() {
        h += problem.hessian(k, w) * pk;
        r += oracle.noise_covariance(problem, k, w) * (pk * pk);
    }
    let h_inv = h.try_inverse()?;
    Some(mu / 2.0 * (h_inv * r).trace())
}

/// Deterministic iteration `w <- T w + u` of a memoryless method with exact
/// gradients on a problem with affine gradients.
#[derive(Debug, Clone)]
pub struct AffineIteration {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
    agents: usize,
}

impl AffineIteration {
    /// Probes one step of `kind` at `0` and at each unit vector. `None` when
    /// the method carries state between steps or the gradients are not affine.
    pub fn probe(kind: &AlgorithmKind, problem: &Problem, network: &Network, mu: f64) -> Result<Option<Self>> {
        let memoryless = matches!(
            kind,
            AlgorithmKind::NonCooperative
                | AlgorithmKind::ConsensusInnovation
                | AlgorithmKind::DiffusionAtc
                | AlgorithmKind::DiffusionCta
                | AlgorithmKind::GraphFilterDenoise { .. }
        );
        if !memoryless || matches!(problem, Problem::Logistic(_)) {
            return Ok(None);
        }
        let (k, m) = (problem.agents(), problem.dim());
        let n = k * m;
        let mut exact = |j: usize, w: &[f64], out: &mut [f64]| {
            out.copy_from_slice(problem.true_gradient(j, w).as_slice());
        };
        let mut apply = |x: &[f64]| -> Result<DVector<f64>> {
            let w = NetworkVector::from_blocks(&x.chunks(m).collect::<Vec<_>>())?;
            let mut s = AlgorithmState::from_iterates(w);
            step(kind, &mut s, network, &network.combination, &mut exact, mu)?;
            Ok(DVector::from_column_slice(s.w.as_slice()))
        };
        let offset = apply(&vec![0.0; n])?;
        let mut matrix = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            matrix.set_column(c, &(apply(&e)? - &offset));
            e[c] = 0.0;
        }
        Ok(Some(Self { matrix, offset, agents: k }))
    }

    pub fn spectral_radius(&self) -> f64 {
        self.matrix
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Solution of `w = T w + u`.
    pub fn fixed_point(&self) -> Option<NetworkVector> {
        let n = self.offset.len();
        let lhs = DMatrix::identity(n, n) - &self.matrix;
        let w = lhs.lu().solve(&self.offset)?;
        NetworkVector::from_blocks(&w.as_slice().chunks(n / self.agents).collect::<Vec<_>>()).ok()
    }
}
