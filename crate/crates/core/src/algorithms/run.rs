//! Monte-Carlo execution with per-iteration metrics.

use rayon::prelude::*;

use super::steps::{graph_filter_radius, penalty_norm};
use super::{init_state, step, AlgorithmKind, InitRule, OracleGradients, ScheduleKind, StepSchedule};
use crate::error::{Error, Result};
use crate::graph::{realize_link_failures, CombinationMatrix, Network};
use crate::metrics::{self, MetricEvaluator, Record};
use crate::oracles::OracleConfig;
use crate::problems::{GroundTruth, Problem};
use crate::rng::{self, Purpose};
use crate::stacked::NetworkVector;

/// Iterates beyond this magnitude mark a run as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Runs are processed in groups of this size; results are merged in run
/// order, so the outcome does not depend on the thread count.
const CHUNK: usize = 16;

/// Source of the per-iteration combination matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingSchedule {
    Static,
    /// Independent edge failures around the network's matrix.
    LinkFailure { keep_prob: f64 },
    /// Exact averaging every `period` steps, identity otherwise.
    Periodic { period: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub kind: AlgorithmKind,
    pub schedule: StepSchedule,
    pub iterations: usize,
    pub runs: usize,
    pub seed: u64,
    pub init: InitRule,
    pub mixing: MixingSchedule,
    pub burn_in: f64,
    /// Tail window; `None` uses [`metrics::default_window`].
    pub window: Option<usize>,
    /// Keep every `n`-th per-run record (`None` keeps only the mean).
    pub record_every: Option<usize>,
    pub divergence_threshold: f64,
}

impl RunSpec {
    pub fn new(kind: AlgorithmKind, schedule: StepSchedule, iterations: usize, runs: usize, seed: u64) -> Self {
        Self {
            kind,
            schedule,
            iterations,
            runs,
            seed,
            init: InitRule::Zeros,
            mixing: MixingSchedule::Static,
            burn_in: metrics::DEFAULT_BURN_IN,
            window: None,
            record_every: None,
            divergence_threshold: DIVERGENCE_THRESHOLD,
        }
    }

    pub fn window(&self) -> usize {
        self.window.unwrap_or_else(|| metrics::default_window(self.iterations))
    }

    /// Rejects incompatible combinations before anything runs.
    pub fn validate(&self, problem: &Problem, network: &Network) -> Result<()> {
        self.kind.validate()?;
        self.schedule.validate()?;
        if self.runs == 0 {
            return Err(Error::Parameter("at least one Monte-Carlo run is required".into()));
        }
        if problem.agents() != network.agents() {
            return Err(Error::shape(
                format!("{} agents in the problem", network.agents()),
                problem.agents(),
            ));
        }
        if self.kind.requires_constant_step() && self.schedule.kind == ScheduleKind::Diminishing {
            return Err(Error::Contract(format!(
                "{} needs a constant step size (its dual elimination fixes eta = 1/mu)",
                self.kind
            )));
        }
        match self.mixing {
            MixingSchedule::Static => {}
            MixingSchedule::LinkFailure { keep_prob } => {
                if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                    return Err(Error::Parameter(format!(
                        "link keep probability must lie in (0, 1], got {keep_prob}"
                    )));
                }
            }
            MixingSchedule::Periodic { period } => {
                if period == 0 {
                    return Err(Error::Parameter("averaging period must be at least 1".into()));
                }
            }
        }
        let time_varying = self.mixing != MixingSchedule::Static;
        match self.kind {
            AlgorithmKind::AugmentedLagrangianPd { .. }
            | AlgorithmKind::GraphFilterDenoise { .. }
            | AlgorithmKind::FederatedAveraging { .. }
                if time_varying =>
            {
                return Err(Error::Contract(format!(
                    "{} does not take a time-varying combination schedule",
                    self.kind
                )));
            }
            AlgorithmKind::GraphFilterDenoise { .. } if !matches!(problem, Problem::Denoising(_)) => {
                return Err(Error::Contract("the graph filter runs on denoising problems only".into()));
            }
            _ => {}
        }
        if let Some(0) = self.record_every {
            return Err(Error::Parameter("record thinning must be at least 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Parameter("divergence threshold must be positive".into()));
        }
        metrics::steady_range(self.iterations + 1, self.burn_in, self.window())?;
        Ok(())
    }
}

/// Per-run results that survive averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: usize,
    pub diverged_at: Option<usize>,
    pub steady_msd: f64,
    pub steady_er: f64,
    /// Average of the iterates over the steady-state window.
    pub tail_iterate: NetworkVector,
    pub final_state: NetworkVector,
}

impl RunSummary {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// One run in full.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub records: Vec<Record>,
}

/// Monte-Carlo averages, one entry per iteration `0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub msd: Vec<f64>,
    pub er: Vec<f64>,
    pub regret: Vec<f64>,
    pub disagreement: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    pub runs: Vec<RunSummary>,
    /// Thinned per-run records `(run, iteration, record)`.
    pub samples: Vec<(usize, usize, Record)>,
    pub truth: GroundTruth,
    pub window: std::ops::Range<usize>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.msd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msd.is_empty()
    }

    pub fn diverged_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.diverged()).count()
    }

    /// Mean and standard error over runs of a per-run steady-state value.
    pub fn steady_stats(&self, f: impl Fn(&RunSummary) -> f64) -> (f64, f64) {
        mean_and_se(self.runs.iter().map(f))
    }
}

pub(crate) fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Executes `spec.runs` independent runs and averages their metric traces.
pub fn run(problem: &Problem, network: &Network, oracle: &OracleConfig, spec: &RunSpec) -> Result<RunTrace> {
    spec.validate(problem, network)?;
    oracle.validate()?;
    let truth = problem.centralized_optimum(network.stats.perron.as_slice())?;
    warn_if_unstable(network, spec);

    let len = spec.iterations + 1;
    let window = metrics::steady_range(len, spec.burn_in, spec.window())?;
    let mut sums = [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let mut runs = Vec::with_capacity(spec.runs);
    let mut samples = Vec::new();
    let indices: Vec<usize> = (0..spec.runs).collect();
    for chunk in indices.chunks(CHUNK) {
        let outs: Vec<Result<RunOutput>> = chunk
            .par_iter()
            .map(|&r| run_with_truth(problem, network, oracle, spec, r, &truth))
            .collect();
        for out in outs {
            let out = out?;
            for (i, rec) in out.records.iter().enumerate() {
                sums[0][i] += rec.msd;
                sums[1][i] += rec.er;
                sums[2][i] += rec.disagreement;
                sums[3][i] += rec.grad_norm_sq;
            }
            if let Some(every) = spec.record_every {
                samples.extend(
                    out.records
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| i % every == 0 || *i == len - 1)
                        .map(|(i, rec)| (out.summary.run, i, *rec)),
                );
            }
            runs.push(out.summary);
        }
    }
    let n = spec.runs as f64;
    let [msd, er, disagreement, grad_norm_sq] = sums.map(|v| v.into_iter().map(|x| x / n).collect::<Vec<_>>());
    Ok(RunTrace {
        regret: metrics::cumulative(&er),
        msd,
        er,
        disagreement,
        grad_norm_sq,
        runs,
        samples,
        truth,
        window,
    })
}

fn warn_if_unstable(network: &Network, spec: &RunSpec) {
    if spec.schedule.kind != ScheduleKind::Constant {
        return;
    }
    let mu = spec.schedule.mu0;
    match spec.kind {
        AlgorithmKind::AugmentedLagrangianPd { eta, .. } => {
            penalty_norm(&network.penalty_laplacian, mu, eta.unwrap_or(1.0 / mu));
        }
        AlgorithmKind::GraphFilterDenoise { eta } => {
            graph_filter_radius(&network.laplacian, mu, eta);
        }
        _ => {}
    }
}

/// A single run with index `run` (streams derived from `(seed, run)`).
pub fn run_single(
    problem: &Problem,
    network: &Network,
    oracle: &OracleConfig,
    spec: &RunSpec,
    run: usize,
) -> Result<RunOutput> {
    spec.validate(problem, network)?;
    oracle.validate()?;
    let truth = problem.centralized_optimum(network.stats.perron.as_slice())?;
    run_with_truth(problem, network, oracle, spec, run, &truth)
}

fn run_with_truth(
    problem: &Problem,
    network: &Network,
    oracle: &OracleConfig,
    spec: &RunSpec,
    run: usize,
    truth: &GroundTruth,
) -> Result<RunOutput> {
    let k = network.agents();
    let m = problem.dim();
    let r = run as u64;
    let evaluator = MetricEvaluator::new(problem, &network.topology, network.stats.perron.as_slice(), truth.clone());
    let mut grads = OracleGradients::new(problem, *oracle, rng::agent_streams(spec.seed, r, k))?;
    let mut init_rng = rng::stream(spec.seed, r, Purpose::Init, 0);
    let mut state = init_state(&spec.kind, network, m, &spec.init, &mut init_rng, &mut grads)?;
    let link_seed = rng::derive_seed(spec.seed, r, Purpose::Links, 0);
    let averaging = CombinationMatrix::averaging(k);
    let identity = CombinationMatrix::identity(k);

    let len = spec.iterations + 1;
    let window = metrics::steady_range(len, spec.burn_in, spec.window())?;
    let mut records = Vec::with_capacity(len);
    let mut tail = NetworkVector::zeros(k, m);
    let mut diverged_at = None;

    let mut observe = |i: usize, w: &NetworkVector, records: &mut Vec<Record>| {
        records.push(evaluator.record(w));
        if window.contains(&i) {
            for (t, x) in tail.as_mut_slice().iter_mut().zip(w.as_slice()) {
                *t += x;
            }
        }
    };
    observe(0, &state.w, &mut records);
    for i in 1..len {
        if diverged_at.is_none() {
            let mu = spec.schedule.mu(i - 1);
            let realized;
            let a: &CombinationMatrix = match spec.mixing {
                MixingSchedule::Static => &network.combination,
                MixingSchedule::LinkFailure { keep_prob } => {
                    realized = realize_link_failures(&network.combination, keep_prob, i, link_seed)?;
                    &realized
                }
                MixingSchedule::Periodic { period } => {
                    if i % period == 0 {
                        &averaging
                    } else {
                        &identity
                    }
                }
            };
            step(&spec.kind, &mut state, network, a, &mut grads, mu)?;
            if !state.w.is_finite() || state.w.max_abs() > spec.divergence_threshold {
                diverged_at = Some(i);
            }
        }
        observe(i, &state.w, &mut records);
    }
    let wn = window.len() as f64;
    tail.as_mut_slice().iter_mut().for_each(|x| *x /= wn);
    let steady_msd = records[window.clone()].iter().map(|r| r.msd).sum::<f64>() / wn;
    let steady_er = records[window.clone()].iter().map(|r| r.er).sum::<f64>() / wn;
    Ok(RunOutput {
        summary: RunSummary {
            run,
            diverged_at,
            steady_msd,
            steady_er,
            tail_iterate: tail,
            final_state: state.w,
        },
        records,
    })
}
