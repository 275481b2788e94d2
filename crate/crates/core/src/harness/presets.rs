//! Named experiments, each with a shipped default configuration.

use std::str::FromStr;

use nalgebra::DMatrix;

use super::config::{from_raw, ExperimentConfig, ProblemKind, RawConfig};
use super::output::{SummaryReport, SummaryRow};
use super::predict::AffineIteration;
use super::{execute, expand_points, mean_se, prepare, prepare_with, Outcome, PointResult, DENOISE_TARGET_RANGE};
use crate::algorithms::{self, AlgorithmKind, InitRule, MixingSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::metrics;
use crate::oracles::{OracleConfig, OracleKind};
use crate::problems::{DenoisingProblem, Problem};
use crate::rng::{self, Purpose};
use crate::stacked::NetworkVector;

/// Network MSD below which a deterministic run counts as exact.
pub const EXACT_TOLERANCE: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    SteadyStateEr,
    DiminishingRate,
    LinearGain,
    BiasExactness,
    StabilitySweep,
    FederatedEquivalence,
    GraphDenoise,
    Asynchrony,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::SteadyStateEr,
        Preset::DiminishingRate,
        Preset::LinearGain,
        Preset::BiasExactness,
        Preset::StabilitySweep,
        Preset::FederatedEquivalence,
        Preset::GraphDenoise,
        Preset::Asynchrony,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SteadyStateEr => "steady_state_er",
            Preset::DiminishingRate => "diminishing_rate",
            Preset::LinearGain => "linear_gain",
            Preset::BiasExactness => "bias_exactness",
            Preset::StabilitySweep => "stability_sweep",
            Preset::FederatedEquivalence => "federated_equivalence",
            Preset::GraphDenoise => "graph_denoise",
            Preset::Asynchrony => "asynchrony",
        }
    }

    pub fn default_config(self) -> &'static str {
        match self {
            Preset::SteadyStateEr => include_str!("../../configs/steady_state_er.conf"),
            Preset::DiminishingRate => include_str!("../../configs/diminishing_rate.conf"),
            Preset::LinearGain => include_str!("../../configs/linear_gain.conf"),
            Preset::BiasExactness => include_str!("../../configs/bias_exactness.conf"),
            Preset::StabilitySweep => include_str!("../../configs/stability_sweep.conf"),
            Preset::FederatedEquivalence => include_str!("../../configs/federated_equivalence.conf"),
            Preset::GraphDenoise => include_str!("../../configs/graph_denoise.conf"),
            Preset::Asynchrony => include_str!("../../configs/asynchrony.conf"),
        }
    }

    /// Defaults, then keys from `file`, then `key=value` overrides.
    pub fn config(self, file: Option<&str>, overrides: &[String]) -> Result<ExperimentConfig> {
        let mut raw = RawConfig::parse(self.default_config())?;
        if let Some(text) = file {
            raw.merge(RawConfig::parse(text)?);
        }
        for o in overrides {
            raw.apply_override(o)?;
        }
        from_raw(&raw)
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            Error::Parameter(format!("unknown preset `{s}`; known: {}", names.join(", ")))
        })
    }
}

fn contract(preset: Preset, msg: impl std::fmt::Display) -> Error {
    Error::Contract(format!("preset {}: {msg}", preset.name()))
}

fn check_compatible(preset: Preset, cfg: &ExperimentConfig) -> Result<()> {
    let want_diminishing = preset == Preset::DiminishingRate;
    if want_diminishing != (cfg.schedule == ScheduleKind::Diminishing) {
        let want = if want_diminishing { "diminishing" } else { "constant" };
        return Err(contract(preset, format!("requires a {want} step-size schedule")));
    }
    match preset {
        Preset::BiasExactness | Preset::StabilitySweep if cfg.oracle.kind != OracleKind::Exact => {
            Err(contract(preset, "requires oracle.kind = exact"))
        }
        Preset::Asynchrony if cfg.oracle.kind != OracleKind::Asynchronous => {
            Err(contract(preset, "requires oracle.kind = asynchronous"))
        }
        Preset::GraphDenoise => {
            if cfg.problem.kind != ProblemKind::Denoising {
                return Err(contract(preset, "requires problem.kind = denoising"));
            }
            let ids = if cfg.sweep.algorithms.is_empty() {
                std::slice::from_ref(&cfg.algorithm)
            } else {
                &cfg.sweep.algorithms[..]
            };
            if ids.iter().any(|a| a != "graph_filter_denoise") {
                return Err(contract(preset, "only graph_filter_denoise applies"));
            }
            Ok(())
        }
        Preset::FederatedEquivalence => {
            if cfg.algorithm != "diffusion_atc" || !cfg.sweep.algorithms.is_empty() {
                return Err(contract(preset, "compares diffusion_atc under periodic averaging"));
            }
            if cfg.link_keep_prob.is_some() {
                return Err(contract(preset, "link failures do not apply"));
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Runs `preset` with `cfg`; every point is validated before anything runs.
pub fn run_preset(preset: Preset, cfg: &ExperimentConfig) -> Result<Outcome> {
    check_compatible(preset, cfg)?;
    let points = expand_points(cfg)?;
    let (results, rows, notes) = match preset {
        Preset::SteadyStateEr => {
            let results = execute(prepare(cfg, points)?)?;
            let mut rows = standard(&results);
            rows.extend(pairwise(&results, "er_scaling", |r| {
                let row = r.standard_rows().into_iter().find(|x| x.metric == "steady_er")?;
                Some((row.empirical, row.std_error, row.predicted))
            }));
            (results, rows, vec!["steady_er predicted by (mu/4) sum_k p_k^2 sigma_k^2".to_string()])
        }
        Preset::DiminishingRate => {
            let results = execute(prepare(cfg, points)?)?;
            let mut rows = standard(&results);
            for r in &results {
                rows.extend(loglog_slope_row(r)?);
            }
            (results, rows, vec!["er_loglog_slope fitted over [T/100, T]".to_string()])
        }
        Preset::LinearGain => {
            let results = execute(prepare(cfg, points)?)?;
            let mut rows = standard(&results);
            if let Some(first) = results.first() {
                let base = first.standard_rows().into_iter().find(|x| x.metric == "steady_msd");
                for r in results.iter().skip(1) {
                    let cur = r.standard_rows().into_iter().find(|x| x.metric == "steady_msd");
                    if let (Some(a), Some(b)) = (&base, cur) {
                        rows.push(ratio_row(r, "msd_ratio", &b, a));
                    }
                }
            }
            (results, rows, vec!["msd_ratio is relative to the first network size".to_string()])
        }
        Preset::BiasExactness => {
            let results = execute(prepare(cfg, points)?)?;
            let mut rows = Vec::new();
            for r in &results {
                rows.extend(exactness_rows(r)?);
            }
            (results, rows, vec![format!("exact methods must reach network MSD <= {EXACT_TOLERANCE:e}")])
        }
        Preset::StabilitySweep => {
            let results = execute(prepare(cfg, points)?)?;
            let mut rows = Vec::new();
            let mut notes = Vec::new();
            for r in &results {
                let (row, radius) = stability_row(r)?;
                rows.push(row);
                rows.push(r.row("final_msd", r.final_msd().0, r.final_msd().1, None));
                if let Some(rho) = radius {
                    notes.push(format!("{}: spectral radius {rho:.6}", r.prepared.point.label));
                }
            }
            notes.extend(stability_summary(&results));
            (results, rows, notes)
        }
        Preset::FederatedEquivalence => {
            let prepared = prepare_with(cfg, points, |p, _, spec| {
                spec.mixing = MixingSchedule::Periodic { period: p.period };
                Ok(())
            })?;
            let results = execute(prepared)?;
            let mut rows = Vec::new();
            for r in &results {
                rows.extend(federated_rows(r)?);
            }
            (results, rows, vec!["differences are max |w| gaps over all iterations and runs".to_string()])
        }
        Preset::GraphDenoise => {
            let (lo, hi) = DENOISE_TARGET_RANGE;
            let prepared = prepare_with(cfg, points, |p, problem, _| {
                let noise_var = cfg.problem.sigma_v * cfg.problem.sigma_v;
                let eta = p.eta.unwrap_or(0.0);
                *problem = Problem::Denoising(DenoisingProblem::uniform(p.k, cfg.m, lo, hi, noise_var, eta, cfg.seed)?);
                Ok(())
            })?;
            let results = execute(prepared)?;
            let mut rows = Vec::new();
            for r in &results {
                rows.extend(denoise_rows(r)?);
            }
            (results, rows, vec!["tail means predicted by the solve of (I + eta L) w = E gamma".to_string()])
        }
        Preset::Asynchrony => {
            let results = execute(prepare(cfg, points)?)?;
            let rows = standard(&results);
            (results, rows, vec!["steady_er uses the asynchronous oracle noise variance".to_string()])
        }
    };
    Ok(Outcome {
        report: SummaryReport {
            experiment: cfg.experiment.clone(),
            seed: cfg.seed,
            rows,
            notes,
        },
        results,
    })
}

fn standard(results: &[PointResult]) -> Vec<SummaryRow> {
    results.iter().flat_map(PointResult::standard_rows).collect()
}

/// `a / b` with a delta-method standard error.
fn ratio_row(at: &PointResult, metric: &str, a: &SummaryRow, b: &SummaryRow) -> SummaryRow {
    let value = a.empirical / b.empirical;
    let se = match (a.std_error, b.std_error) {
        (Some(sa), Some(sb)) => Some(value.abs() * ((sa / a.empirical).powi(2) + (sb / b.empirical).powi(2)).sqrt()),
        _ => None,
    };
    let predicted = match (a.predicted, b.predicted) {
        (Some(pa), Some(pb)) if pb != 0.0 => Some(pa / pb),
        _ => None,
    };
    let mut row = at.row(metric, value, se, predicted);
    row.diverged_runs = a.diverged_runs.max(b.diverged_runs);
    row
}

/// Ratios between consecutive points that share algorithm and size.
fn pairwise(
    results: &[PointResult],
    metric: &str,
    value: impl Fn(&PointResult) -> Option<(f64, Option<f64>, Option<f64>)>,
) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for pair in results.windows(2) {
        let (x, y) = (&pair[0], &pair[1]);
        let same = x.prepared.point.algorithm == y.prepared.point.algorithm && x.prepared.point.k == y.prepared.point.k;
        if !same {
            continue;
        }
        if let (Some(a), Some(b)) = (value(x), value(y)) {
            let (ra, rb) = (x.row(metric, a.0, a.1, a.2), y.row(metric, b.0, b.1, b.2));
            rows.push(ratio_row(y, metric, &ra, &rb));
        }
    }
    rows
}

fn loglog_slope_row(r: &PointResult) -> Result<Option<SummaryRow>> {
    let len = r.trace.len();
    let t = len - 1;
    let lo = (t / 100).max(1);
    if t <= lo + 2 {
        return Ok(None);
    }
    let fit = metrics::log_log_fit(&r.trace.er, lo..len)?;
    let mut per_run: Vec<Vec<(f64, f64)>> = vec![Vec::new(); r.trace.runs.len()];
    for (run, iter, rec) in &r.trace.samples {
        if *iter >= lo && rec.er > 0.0 {
            per_run[*run].push(((*iter as f64).ln(), rec.er.ln()));
        }
    }
    let slopes: Vec<f64> = per_run
        .iter()
        .filter(|v| v.len() >= 3)
        .filter_map(|v| {
            let (x, y): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
            metrics::fit_line(&x, &y).ok().map(|f| f.slope)
        })
        .collect();
    let se = if slopes.len() >= 2 { mean_se(slopes).1 } else { None };
    Ok(Some(r.row("er_loglog_slope", fit.slope, se, Some(-1.0))))
}

fn is_exact_method(kind: &AlgorithmKind) -> bool {
    matches!(
        kind,
        AlgorithmKind::Extra
            | AlgorithmKind::ExactDiffusion
            | AlgorithmKind::Diging
            | AlgorithmKind::AugDgm
            | AlgorithmKind::AugmentedLagrangianPd { .. }
    )
}

/// Final MSD with its prediction (zero for exact methods, the deterministic
/// fixed point otherwise), iterations to the exactness tolerance and the
/// quality of a log-linear fit up to that point.
fn exactness_rows(r: &PointResult) -> Result<Vec<SummaryRow>> {
    let p = &r.prepared;
    let kind = &p.point.algorithm;
    let msd = &r.trace.msd;
    let w_opt = r.trace.truth.w_opt.as_slice();
    let predicted = if is_exact_method(kind) {
        Some(0.0)
    } else {
        match AffineIteration::probe(kind, &p.problem, &p.network, p.point.mu)? {
            Some(map) => match map.fixed_point() {
                Some(w) => Some(metrics::msd(&w, w_opt)?.1),
                None => None,
            },
            None => None,
        }
    };
    let (fin, fin_se) = r.final_msd();
    let mut rows = vec![r.row("final_msd", fin, fin_se, predicted)];
    let hit = metrics::iteration_complexity(msd, EXACT_TOLERANCE);
    rows.push(r.row("iters_to_tol", hit.map(|i| i as f64).unwrap_or(f64::INFINITY), None, None));
    let end = hit.map(|i| i + 1).unwrap_or(msd.len());
    if let Ok(fit) = metrics::log_linear_fit(msd, 0..end) {
        rows.push(r.row("log_linear_r2", fit.r2, None, None));
        rows.push(r.row("msd_rate", fit.slope.exp(), None, None));
    }
    Ok(rows)
}

/// Fraction of divergent runs against the spectral-radius verdict of the
/// deterministic iteration, when that iteration is affine.
fn stability_row(r: &PointResult) -> Result<(SummaryRow, Option<f64>)> {
    let p = &r.prepared;
    let n = r.trace.runs.len() as f64;
    let frac = r.trace.diverged_runs() as f64 / n;
    let se = Some((frac * (1.0 - frac) / n).sqrt());
    let radius = AffineIteration::probe(&p.point.algorithm, &p.problem, &p.network, p.point.mu)?
        .map(|m| m.spectral_radius());
    let predicted = radius.map(|rho| if rho > 1.0 { 1.0 } else { 0.0 });
    Ok((r.row("diverged", frac, se, predicted), radius))
}

fn stability_summary(results: &[PointResult]) -> Vec<String> {
    let diverged = |id: &str, mu: f64| {
        results
            .iter()
            .find(|r| r.prepared.point.algorithm.id() == id && r.prepared.point.mu == mu)
            .map(|r| r.trace.diverged_runs() > 0)
    };
    let mut mus: Vec<f64> = results.iter().map(|r| r.prepared.point.mu).collect();
    mus.sort_by(f64::total_cmp);
    mus.dedup();
    let (mut wider, mut reverse) = (Vec::new(), Vec::new());
    for mu in mus {
        match (diverged("consensus_innovation", mu), diverged("diffusion_atc", mu)) {
            (Some(true), Some(false)) => wider.push(format!("{mu:e}")),
            (Some(false), Some(true)) => reverse.push(format!("{mu:e}")),
            _ => {}
        }
    }
    vec![
        format!("consensus_innovation diverges while diffusion_atc converges at mu = [{}]", wider.join(", ")),
        format!("diffusion_atc diverges while consensus_innovation converges at mu = [{}]", reverse.join(", ")),
    ]
}

/// ATC diffusion with periodic averaging against the reference loop and the
/// federated-averaging kind, iteration by iteration. The gaps are exact
/// maxima over every run, so their standard error is zero.
fn federated_rows(r: &PointResult) -> Result<Vec<SummaryRow>> {
    let p = &r.prepared;
    let period = p.point.period;
    let t = p.spec.iterations;
    let mut gap_reference = 0.0f64;
    let mut gap_kind = 0.0f64;
    let mut federated = p.spec.clone();
    federated.kind = AlgorithmKind::FederatedAveraging { period };
    federated.mixing = MixingSchedule::Static;
    for run in 0..p.spec.runs {
        let reference = federated_reference(
            &p.problem,
            &p.point.oracle,
            &p.spec.init,
            p.point.mu,
            period,
            t,
            p.spec.seed,
            run,
        )?;
        for (i, w_ref) in reference.iter().enumerate().skip(1) {
            let mut diffusion = p.spec.clone();
            diffusion.iterations = i;
            diffusion.window = Some(1);
            let w = algorithms::run_single(&p.problem, &p.network, &p.point.oracle, &diffusion, run)?
                .summary
                .final_state;
            let mut fed = federated.clone();
            fed.iterations = i;
            fed.window = Some(1);
            let w_fed = algorithms::run_single(&p.problem, &p.network, &p.point.oracle, &fed, run)?
                .summary
                .final_state;
            gap_reference = gap_reference.max(max_gap(&w, w_ref));
            gap_kind = gap_kind.max(max_gap(&w, &w_fed));
        }
    }
    Ok(vec![
        r.row("max_gap_reference", gap_reference, Some(0.0), Some(0.0)),
        r.row("max_gap_federated_kind", gap_kind, Some(0.0), Some(0.0)),
    ])
}

fn max_gap(a: &NetworkVector, b: &NetworkVector) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| match (x - y).abs() {
            _ if x == y => 0.0,
            d if d.is_nan() => f64::INFINITY,
            d => d,
        })
        .fold(0.0, f64::max)
}

/// Federated averaging written out directly: every agent takes a local
/// stochastic-gradient step, and on steps divisible by `period` (counted
/// from 1) all models are replaced by their average. Uses the same random
/// streams as the simulator. Returns the iterates for `i = 0..=iterations`.
#[allow(clippy::too_many_arguments)]
pub fn federated_reference(
    problem: &Problem,
    oracle: &OracleConfig,
    init: &InitRule,
    mu: f64,
    period: usize,
    iterations: usize,
    seed: u64,
    run: usize,
) -> Result<Vec<NetworkVector>> {
    if period == 0 {
        return Err(Error::Parameter("averaging period must be at least 1".into()));
    }
    let (k, m) = (problem.agents(), problem.dim());
    let mut streams = rng::agent_streams(seed, run as u64, k);
    let mut init_rng = rng::stream(seed, run as u64, Purpose::Init, 0);
    let start = init.realize(k, m, &mut init_rng)?;
    let mut models: Vec<Vec<f64>> = start.blocks().map(<[f64]>::to_vec).collect();
    let share = 1.0 / k as f64;
    let mut out = Vec::with_capacity(iterations + 1);
    out.push(start);
    for i in 1..=iterations {
        for (agent, model) in models.iter_mut().enumerate() {
            let g = oracle.evaluate(problem, agent, model, &mut streams[agent])?;
            for (x, gj) in model.iter_mut().zip(g.iter()) {
                *x -= mu * gj;
            }
        }
        if i % period == 0 {
            let mut avg: Vec<f64> = models[0].iter().map(|x| share * x).collect();
            for model in &models[1..] {
                for (a, x) in avg.iter_mut().zip(model) {
                    *a += share * x;
                }
            }
            for model in models.iter_mut() {
                model.copy_from_slice(&avg);
            }
        }
        out.push(NetworkVector::from_blocks(&models)?);
    }
    Ok(out)
}

/// Per-coordinate tail means of the graph filter against the direct solve.
fn denoise_rows(r: &PointResult) -> Result<Vec<SummaryRow>> {
    let p = &r.prepared;
    let Problem::Denoising(problem) = &p.problem else {
        return Err(Error::Contract("graph denoising needs a denoising problem".into()));
    };
    let eta = match p.point.algorithm {
        AlgorithmKind::GraphFilterDenoise { eta } => eta,
        _ => return Err(Error::Contract("graph denoising needs the graph filter".into())),
    };
    let (k, m) = (p.problem.agents(), p.problem.dim());
    let l = p.network.laplacian.matrix();
    let system = DMatrix::identity(k, k) + l * eta;
    let targets = DMatrix::from_fn(k, m, |a, j| problem.w_true(a)[j]);
    let solved = system
        .lu()
        .solve(&targets)
        .ok_or_else(|| Error::Numerical("I + eta L is singular".into()))?;
    let mut rows = Vec::with_capacity(k * m + 1);
    let mut worst = 0.0f64;
    for a in 0..k {
        for j in 0..m {
            let (mean, se) = mean_se(r.trace.runs.iter().map(|s| s.tail_iterate.block(a)[j]));
            let want = solved[(a, j)];
            worst = worst.max((mean / want - 1.0).abs());
            rows.push(r.row(&format!("tail_mean_a{a}_c{j}"), mean, se, Some(want)));
        }
    }
    rows.push(r.row("max_rel_error", worst, None, None));
    Ok(rows)
}
