//! Configuration-driven experiments: sweep expansion, execution, summary
//! rows and artifacts.

pub mod config;
pub mod output;
pub mod predict;
pub mod presets;

use std::fs::File;
use std::path::PathBuf;

use rayon::prelude::*;

pub use config::{parse_config, ExperimentConfig, ProblemKind, RawConfig};
pub use output::{write_artifacts, SummaryReport, SummaryRow};
pub use predict::{predict_msd, predict_rate, predict_steady_state_er, AffineIteration};
pub use presets::{federated_reference, run_preset, Preset};

use crate::algorithms::{self, AlgorithmKind, InitRule, MixingSchedule, RunSpec, RunTrace, ScheduleKind, StepSchedule};
use crate::error::{Error, Result};
use crate::graph::{build_topology, Network};
use crate::metrics::{self, LineFit};
use crate::oracles::{OracleConfig, OracleKind};
use crate::problems::{load_pool_csv, DenoisingProblem, LogisticProblem, Problem, QuadraticProblem};
use crate::rng::{self, Purpose};

/// Bounds drawn from for graph-denoising targets when every coordinate
/// should stay away from zero.
pub const DENOISE_TARGET_RANGE: (f64, f64) = (1.0, 10.0);

/// One sweep point, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub label: String,
    pub algorithm: AlgorithmKind,
    pub k: usize,
    pub mu: f64,
    pub eta: Option<f64>,
    pub period: usize,
    pub oracle: OracleConfig,
}

/// A point with its problem, network and run specification, validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub point: Point,
    pub problem: Problem,
    pub network: Network,
    pub spec: RunSpec,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub prepared: Prepared,
    pub trace: RunTrace,
}

/// Report plus the traces behind it.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: SummaryReport,
    pub results: Vec<PointResult>,
}

impl Outcome {
    /// Writes the artifact set under `cfg.output_dir`.
    pub fn write(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let traces: Vec<(String, &RunTrace)> = self
            .results
            .iter()
            .map(|r| (r.prepared.point.label.clone(), &r.trace))
            .collect();
        write_artifacts(&cfg.output_dir, &self.report, &traces, cfg.thinning)
    }
}

pub fn build_network(cfg: &ExperimentConfig, k: usize) -> Result<Network> {
    let seed = rng::derive_seed(cfg.seed, 0, Purpose::Problem, 1);
    let topology = build_topology(&cfg.topology.kind, k, seed)?;
    Network::new(topology, cfg.topology.weights)
}

/// Synthetic problem for `k` agents. `eta` is the denoising coupling.
pub fn build_problem(cfg: &ExperimentConfig, k: usize, eta: f64) -> Result<Problem> {
    let p = &cfg.problem;
    let noise_var = p.sigma_v * p.sigma_v;
    Ok(match p.kind {
        ProblemKind::Quadratic => Problem::Quadratic(QuadraticProblem::synthetic(k, cfg.m, noise_var, p.spread, cfg.seed)?),
        ProblemKind::Denoising => Problem::Denoising(DenoisingProblem::synthetic(k, cfg.m, noise_var, p.spread, eta, cfg.seed)?),
        ProblemKind::Logistic => match &p.pool_file {
            Some(path) => {
                let pool = load_pool_csv(File::open(path)?)?;
                if pool.first().map(|s| s.h.len()) != Some(cfg.m) {
                    return Err(Error::config(None, format!("pool file features must have dimension model.m = {}", cfg.m)));
                }
                Problem::Logistic(LogisticProblem::new(vec![pool; k], p.rho)?)
            }
            None => Problem::Logistic(LogisticProblem::synthetic(k, cfg.m, p.pool, p.rho, p.spread, cfg.seed)?),
        },
    })
}

pub fn run_spec(cfg: &ExperimentConfig, point: &Point) -> RunSpec {
    let schedule = match cfg.schedule {
        ScheduleKind::Constant => StepSchedule::constant(point.mu),
        ScheduleKind::Diminishing => StepSchedule::diminishing(point.mu),
    };
    let mut spec = RunSpec::new(point.algorithm, schedule, cfg.t, cfg.runs, cfg.seed);
    spec.init = cfg.init.clone();
    spec.burn_in = cfg.burn_in;
    spec.window = cfg.window;
    spec.record_every = Some(cfg.thinning);
    if let Some(keep_prob) = cfg.link_keep_prob {
        spec.mixing = MixingSchedule::LinkFailure { keep_prob };
    }
    spec
}

fn or_default<T: Clone>(list: &[T], default: T) -> Vec<T> {
    if list.is_empty() {
        vec![default]
    } else {
        list.to_vec()
    }
}

/// Cartesian product of the sweep lists, in the order
/// algorithm, k, mu, eta, period, pi.
pub fn expand_points(cfg: &ExperimentConfig) -> Result<Vec<Point>> {
    let algorithms = or_default(&cfg.sweep.algorithms, cfg.algorithm.clone());
    let ks = or_default(&cfg.sweep.k, cfg.topology.k);
    let mus = or_default(&cfg.sweep.mu, cfg.mu);
    let etas: Vec<Option<f64>> = if cfg.sweep.eta.is_empty() {
        vec![cfg.eta]
    } else {
        cfg.sweep.eta.iter().map(|e| Some(*e)).collect()
    };
    let periods = or_default(&cfg.sweep.period, cfg.period);
    let pis = or_default(&cfg.sweep.pi, cfg.oracle.update_prob);

    let mut points = Vec::new();
    for id in &algorithms {
        for &k in &ks {
            for &mu in &mus {
                for &eta in &etas {
                    for &period in &periods {
                        for &pi in &pis {
                            let algorithm = AlgorithmKind::from_id(id, eta, Some(period))?;
                            let mut oracle = cfg.oracle;
                            oracle.update_prob = pi;
                            let mut label = format!("p{:02}_{id}_k{k}_mu{mu:e}", points.len());
                            if !cfg.sweep.eta.is_empty() {
                                label += &format!("_eta{}", eta.unwrap_or(0.0));
                            }
                            if !cfg.sweep.period.is_empty() {
                                label += &format!("_period{period}");
                            }
                            if !cfg.sweep.pi.is_empty() {
                                label += &format!("_pi{pi}");
                            }
                            points.push(Point {
                                label,
                                algorithm,
                                k,
                                mu,
                                eta,
                                period,
                                oracle,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

/// Builds and validates every point; nothing runs if any point is invalid.
pub fn prepare(cfg: &ExperimentConfig, points: Vec<Point>) -> Result<Vec<Prepared>> {
    prepare_with(cfg, points, |_, _, _| Ok(()))
}

/// [`prepare`] with a hook that may adjust the problem and run specification
/// of each point before validation.
pub fn prepare_with(
    cfg: &ExperimentConfig,
    points: Vec<Point>,
    adjust: impl Fn(&Point, &mut Problem, &mut RunSpec) -> Result<()>,
) -> Result<Vec<Prepared>> {
    points
        .into_iter()
        .map(|point| {
            let eta = point.eta.unwrap_or(0.0);
            let mut problem = build_problem(cfg, point.k, eta)?;
            let network = build_network(cfg, point.k)?;
            let mut spec = run_spec(cfg, &point);
            adjust(&point, &mut problem, &mut spec)?;
            spec.validate(&problem, &network)?;
            point.oracle.validate()?;
            Ok(Prepared {
                point,
                problem,
                network,
                spec,
            })
        })
        .collect()
}

/// Runs all points; results come back in point order.
pub fn execute(prepared: Vec<Prepared>) -> Result<Vec<PointResult>> {
    prepared
        .into_par_iter()
        .map(|p| {
            let trace = algorithms::run(&p.problem, &p.network, &p.point.oracle, &p.spec)?;
            Ok(PointResult { prepared: p, trace })
        })
        .collect()
}

/// Mean and standard error.
pub fn mean_se(values: impl IntoIterator<Item = f64>) -> (f64, Option<f64>) {
    let v: Vec<f64> = values.into_iter().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Standard error of a fitted slope from its `R^2` and sample size.
pub fn slope_std_error(fit: &LineFit, n: usize) -> Option<f64> {
    if n < 3 || fit.r2 <= 0.0 {
        return None;
    }
    Some(fit.slope.abs() * ((1.0 - fit.r2).max(0.0) / (fit.r2 * (n - 2) as f64)).sqrt())
}

/// Whether the leading-order steady-state laws are stated for `kind`.
pub fn has_steady_state_law(kind: &AlgorithmKind) -> bool {
    matches!(
        kind,
        AlgorithmKind::ConsensusInnovation | AlgorithmKind::DiffusionAtc | AlgorithmKind::DiffusionCta
    )
}

impl PointResult {
    /// Exact oracle, fixed initial point and static mixing: every run is
    /// identical, so averages carry no Monte-Carlo error.
    pub fn is_deterministic(&self) -> bool {
        let spec = &self.prepared.spec;
        self.prepared.point.oracle.kind == OracleKind::Exact
            && !matches!(spec.init, InitRule::Gaussian(sd) if sd > 0.0)
            && !matches!(spec.mixing, MixingSchedule::LinkFailure { .. })
    }

    /// A summary row; a missing standard error becomes zero for
    /// deterministic points.
    pub fn row(&self, metric: &str, empirical: f64, std_error: Option<f64>, predicted: Option<f64>) -> SummaryRow {
        let std_error = std_error.or_else(|| self.is_deterministic().then_some(0.0));
        let p = &self.prepared.point;
        SummaryRow {
            point: p.label.clone(),
            algorithm: p.algorithm.id().to_string(),
            k: p.k,
            mu: p.mu,
            metric: metric.to_string(),
            empirical,
            std_error,
            mc_runs: self.trace.runs.len(),
            predicted,
            diverged_runs: self.trace.diverged_runs(),
        }
    }

    pub fn steady_er(&self) -> (f64, Option<f64>) {
        mean_se(self.trace.runs.iter().map(|r| r.steady_er))
    }

    pub fn steady_msd(&self) -> (f64, Option<f64>) {
        mean_se(self.trace.runs.iter().map(|r| r.steady_msd))
    }

    pub fn final_msd(&self) -> (f64, Option<f64>) {
        let w_opt = self.trace.truth.w_opt.as_slice();
        mean_se(self.trace.runs.iter().map(|r| {
            metrics::msd(&r.final_state, w_opt).map(|(_, net)| net).unwrap_or(f64::NAN)
        }))
    }

    /// Per-iteration contraction of the mean excess risk, fitted over the
    /// second half of the transient (until ER first falls within ten times
    /// its steady-state level).
    pub fn transient_rate(&self) -> Option<(f64, Option<f64>)> {
        let er = &self.trace.er;
        let e0 = er[0];
        if !(e0 > 0.0) || !e0.is_finite() {
            return None;
        }
        let floor = (10.0 * self.steady_er().0).max(e0 * 1e-12);
        let end = er.iter().position(|&e| e <= floor)?;
        let start = end / 2;
        if end - start < 3 {
            return None;
        }
        let fit = metrics::log_linear_fit(er, start..end).ok()?;
        let rate = fit.slope.exp();
        Some((rate, slope_std_error(&fit, end - start).map(|se| se * rate)))
    }

    /// Rows shared by every experiment.
    pub fn standard_rows(&self) -> Vec<SummaryRow> {
        let p = &self.prepared;
        let constant = p.spec.schedule.kind == ScheduleKind::Constant;
        let law = constant && has_steady_state_law(&p.point.algorithm);
        let truth = &self.trace.truth;
        let mu = p.point.mu;
        let mut rows = Vec::new();

        let er_pred = if law {
            predict_steady_state_er(&p.problem, &p.network, &p.point.oracle, truth, mu).ok()
        } else {
            None
        };
        let (er, er_se) = self.steady_er();
        rows.push(self.row("steady_er", er, er_se, er_pred));

        let msd_pred = if law {
            predict_msd(&p.problem, &p.network, &p.point.oracle, truth, mu)
        } else {
            None
        };
        let (msd, msd_se) = self.steady_msd();
        rows.push(self.row("steady_msd", msd, msd_se, msd_pred));

        let (fin, fin_se) = self.final_msd();
        rows.push(self.row("final_msd", fin, fin_se, None));

        if constant {
            if let Some((rate, se)) = self.transient_rate() {
                let pred = law.then(|| {
                    let (nu, _) = p.problem.curvature(p.network.stats.perron.as_slice());
                    predict_rate(nu, mu)
                });
                rows.push(self.row("er_rate", rate, se, pred));
            }
        }
        rows
    }
}

/// Runs a plain configuration: every sweep point with the standard rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let prepared = prepare(cfg, expand_points(cfg)?)?;
    let results = execute(prepared)?;
    let rows = results.iter().flat_map(PointResult::standard_rows).collect();
    Ok(Outcome {
        report: SummaryReport {
            experiment: cfg.experiment.clone(),
            seed: cfg.seed,
            rows,
            notes: Vec::new(),
        },
        results,
    })
}

/// Checks a configuration end to end without running it.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<usize> {
    Ok(prepare(cfg, expand_points(cfg)?)?.len())
}
