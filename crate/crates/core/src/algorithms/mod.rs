//! The unified family of decentralized recursions.
//!
//! Every step is synchronous: agents read only iteration `i-1` values, so
//! the next state does not depend on the order in which agents are
//! visited. The order is still configurable (`AlgorithmState::order`) to
//! make that property testable.

mod run;
mod steps;

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::oracles::{OracleConfig, OracleScratch};
use crate::problems::Problem;
use crate::rng::Stream;
use crate::stacked::NetworkVector;

pub use run::{run, run_single, MixingSchedule, RunOutput, RunSpec, RunSummary, RunTrace, DIVERGENCE_THRESHOLD};
pub use steps::{
    step, step_aug_dgm, step_augmented_lagrangian, step_consensus_innovation, step_diffusion_atc,
    step_diffusion_cta, step_diging, step_exact_diffusion, step_extra, step_federated, step_graph_filter,
    step_non_cooperative,
};

/// How the augmented-Lagrangian dual variable is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualUpdate {
    /// `lambda_i = lambda_{i-1} + mu eta B W_i` (uses the fresh primal).
    #[default]
    Incremental,
    /// `lambda_i = lambda_{i-1} + mu eta B W_{i-1}`.
    Simultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlgorithmKind {
    NonCooperative,
    ConsensusInnovation,
    DiffusionAtc,
    DiffusionCta,
    /// `eta = None` couples the penalty to the step, `eta = 1/mu_i`.
    AugmentedLagrangianPd { eta: Option<f64>, dual: DualUpdate },
    Extra,
    ExactDiffusion,
    Diging,
    AugDgm,
    FederatedAveraging { period: usize },
    GraphFilterDenoise { eta: f64 },
}

impl AlgorithmKind {
    pub const IDS: [&'static str; 11] = [
        "non_cooperative",
        "consensus_innovation",
        "diffusion_atc",
        "diffusion_cta",
        "augmented_lagrangian_pd",
        "extra",
        "exact_diffusion",
        "diging",
        "aug_dgm",
        "federated_averaging",
        "graph_filter_denoise",
    ];

    pub fn augmented_lagrangian() -> Self {
        AlgorithmKind::AugmentedLagrangianPd {
            eta: None,
            dual: DualUpdate::Incremental,
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            AlgorithmKind::NonCooperative => Self::IDS[0],
            AlgorithmKind::ConsensusInnovation => Self::IDS[1],
            AlgorithmKind::DiffusionAtc => Self::IDS[2],
            AlgorithmKind::DiffusionCta => Self::IDS[3],
            AlgorithmKind::AugmentedLagrangianPd { .. } => Self::IDS[4],
            AlgorithmKind::Extra => Self::IDS[5],
            AlgorithmKind::ExactDiffusion => Self::IDS[6],
            AlgorithmKind::Diging => Self::IDS[7],
            AlgorithmKind::AugDgm => Self::IDS[8],
            AlgorithmKind::FederatedAveraging { .. } => Self::IDS[9],
            AlgorithmKind::GraphFilterDenoise { .. } => Self::IDS[10],
        }
    }

    /// Parses an identifier. `eta` feeds the primal-dual and graph-filter
    /// kinds, `period` the federated kind.
    pub fn from_id(id: &str, eta: Option<f64>, period: Option<usize>) -> Result<Self> {
        let kind = match id {
            "non_cooperative" => AlgorithmKind::NonCooperative,
            "consensus_innovation" => AlgorithmKind::ConsensusInnovation,
            "diffusion_atc" => AlgorithmKind::DiffusionAtc,
            "diffusion_cta" => AlgorithmKind::DiffusionCta,
            "augmented_lagrangian_pd" => AlgorithmKind::AugmentedLagrangianPd {
                eta,
                dual: DualUpdate::Incremental,
            },
            "extra" => AlgorithmKind::Extra,
            "exact_diffusion" => AlgorithmKind::ExactDiffusion,
            "diging" => AlgorithmKind::Diging,
            "aug_dgm" => AlgorithmKind::AugDgm,
            "federated_averaging" => AlgorithmKind::FederatedAveraging {
                period: period.unwrap_or(1),
            },
            "graph_filter_denoise" => AlgorithmKind::GraphFilterDenoise {
                eta: eta.unwrap_or(0.0),
            },
            other => {
                return Err(Error::Parameter(format!(
                    "unknown algorithm `{other}`; known: {}",
                    Self::IDS.join(", ")
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AlgorithmKind::FederatedAveraging { period: 0 } => {
                Err(Error::Parameter("averaging period must be at least 1".into()))
            }
            AlgorithmKind::GraphFilterDenoise { eta } if !(eta >= 0.0 && eta.is_finite()) => {
                Err(Error::Parameter(format!("filter coupling eta must be >= 0, got {eta}")))
            }
            AlgorithmKind::AugmentedLagrangianPd { eta: Some(eta), .. } if !(eta > 0.0 && eta.is_finite()) => {
                Err(Error::Parameter(format!("penalty eta must be > 0, got {eta}")))
            }
            _ => Ok(()),
        }
    }

    /// Kinds whose derivation fixes `eta = 1/mu` and so need a constant step.
    pub fn requires_constant_step(&self) -> bool {
        matches!(self, AlgorithmKind::Extra | AlgorithmKind::ExactDiffusion)
    }

    pub fn uses_tracker(&self) -> bool {
        matches!(self, AlgorithmKind::Diging | AlgorithmKind::AugDgm)
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Diminishing,
}

/// `mu_i = mu0` or `mu_i = mu0 / (i + 1)`, `i` counting completed steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub mu0: f64,
}

impl StepSchedule {
    pub fn constant(mu0: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            mu0,
        }
    }

    pub fn diminishing(mu0: f64) -> Self {
        Self {
            kind: ScheduleKind::Diminishing,
            mu0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu0 > 0.0 && self.mu0.is_finite() {
            Ok(())
        } else {
            Err(Error::Parameter(format!("step size must be > 0, got {}", self.mu0)))
        }
    }

    #[inline]
    pub fn mu(&self, i: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.mu0,
            ScheduleKind::Diminishing => self.mu0 / (i as f64 + 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitRule {
    Zeros,
    /// i.i.d. `N(0, sigma^2)` entries.
    Gaussian(f64),
    /// The same block at every agent.
    Constant(Vec<f64>),
    Blocks(NetworkVector),
}

impl InitRule {
    pub fn realize(&self, agents: usize, dim: usize, rng: &mut Stream) -> Result<NetworkVector> {
        match self {
            InitRule::Zeros => Ok(NetworkVector::zeros(agents, dim)),
            InitRule::Gaussian(sd) if *sd == 0.0 => Ok(NetworkVector::zeros(agents, dim)),
            InitRule::Gaussian(sd) => {
                if !(*sd > 0.0 && sd.is_finite()) {
                    return Err(Error::Parameter(format!("initial spread must be >= 0, got {sd}")));
                }
                let mut w = NetworkVector::zeros(agents, dim);
                for x in w.as_mut_slice() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = sd * z;
                }
                Ok(w)
            }
            InitRule::Constant(b) => {
                if b.len() != dim {
                    return Err(Error::shape(format!("initial block of dimension {dim}"), b.len()));
                }
                Ok(NetworkVector::replicate(b, agents))
            }
            InitRule::Blocks(w) => {
                if w.agents() != agents || w.dim() != dim {
                    return Err(Error::shape(
                        format!("{agents} blocks of dimension {dim}"),
                        format!("{} blocks of dimension {}", w.agents(), w.dim()),
                    ));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Supplies `grad_hat J_k(w)`; one call is one oracle query.
pub trait GradientSource {
    fn gradient(&mut self, k: usize, w: &[f64], out: &mut [f64]);
}

impl<F: FnMut(usize, &[f64], &mut [f64])> GradientSource for F {
    fn gradient(&mut self, k: usize, w: &[f64], out: &mut [f64]) {
        self(k, w, out)
    }
}

/// Gradients forced to zero (pure consensus dynamics).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroGradients;

impl GradientSource for ZeroGradients {
    fn gradient(&mut self, _k: usize, _w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// An oracle bound to one random stream per agent.
#[derive(Debug, Clone)]
pub struct OracleGradients<'a> {
    problem: &'a Problem,
    config: OracleConfig,
    streams: Vec<Stream>,
    scratch: OracleScratch,
}

impl<'a> OracleGradients<'a> {
    pub fn new(problem: &'a Problem, config: OracleConfig, streams: Vec<Stream>) -> Result<Self> {
        config.validate()?;
        if streams.len() != problem.agents() {
            return Err(Error::shape(format!("{} streams", problem.agents()), streams.len()));
        }
        Ok(Self {
            problem,
            config,
            streams,
            scratch: OracleScratch::new(problem),
        })
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }
}

impl GradientSource for OracleGradients<'_> {
    #[inline]
    fn gradient(&mut self, k: usize, w: &[f64], out: &mut [f64]) {
        self.config
            .evaluate_into(self.problem, k, w, &mut self.streams[k], &mut self.scratch, out);
    }
}

/// Iterates plus whatever the algorithm carries between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmState {
    pub iter: usize,
    pub w: NetworkVector,
    /// Edge-indexed dual variable (primal-dual method).
    pub dual: Option<NetworkVector>,
    /// Gradient tracker `g_{k,i}`.
    pub tracker: Option<NetworkVector>,
    /// Latest gradient evaluation, for tracking differences.
    pub prev_grad: Option<NetworkVector>,
    /// `phi_{i-1}` (EXTRA) or `psi_{i-1}` (Exact diffusion). `None` for EXTRA
    /// before its first step, meaning no momentum.
    pub prev_inter: Option<NetworkVector>,
    /// Agent visiting order; any permutation gives the same result.
    pub order: Vec<usize>,
    grad: NetworkVector,
    buf: NetworkVector,
    buf2: NetworkVector,
}

impl AlgorithmState {
    /// Bare state without auxiliaries.
    pub fn from_iterates(w: NetworkVector) -> Self {
        let (k, m) = (w.agents(), w.dim());
        Self {
            iter: 0,
            dual: None,
            tracker: None,
            prev_grad: None,
            prev_inter: None,
            order: (0..k).collect(),
            grad: NetworkVector::zeros(k, m),
            buf: NetworkVector::zeros(k, m),
            buf2: NetworkVector::zeros(k, m),
            w,
        }
    }

    pub fn agents(&self) -> usize {
        self.w.agents()
    }

    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn set_order(&mut self, order: Vec<usize>) -> Result<()> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.agents()).collect::<Vec<_>>() {
            return Err(Error::Parameter("agent order must be a permutation".into()));
        }
        self.order = order;
        Ok(())
    }
}

/// Initial state with the auxiliaries `kind` needs. Trackers start at the
/// first oracle evaluation so their mean equals the mean gradient from
/// `i = 0`.
pub fn init_state<G: GradientSource>(
    kind: &AlgorithmKind,
    network: &Network,
    dim: usize,
    init: &InitRule,
    rng: &mut Stream,
    grads: &mut G,
) -> Result<AlgorithmState> {
    kind.validate()?;
    let k = network.agents();
    if k == 0 || dim == 0 {
        return Err(Error::Parameter("K and M must be at least 1".into()));
    }
    let w = init.realize(k, dim, rng)?;
    let mut s = AlgorithmState::from_iterates(w);
    match kind {
        AlgorithmKind::AugmentedLagrangianPd { .. } => {
            s.dual = Some(NetworkVector::zeros(network.penalty_incidence.edge_count(), dim));
        }
        AlgorithmKind::ExactDiffusion => s.prev_inter = Some(s.w.clone()),
        AlgorithmKind::Diging | AlgorithmKind::AugDgm => {
            let mut g = NetworkVector::zeros(k, dim);
            for j in 0..k {
                grads.gradient(j, s.w.block(j), g.block_mut(j));
            }
            s.tracker = Some(g.clone());
            s.prev_grad = Some(g);
        }
        _ => {}
    }
    Ok(s)
}
