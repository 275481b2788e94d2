//! Invariant checks shared by the property suites and the acceptance run.
//! Each check returns `Err` with a description of the first violation.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::Path;

use decentsim::algorithms::{
    init_state, step, AlgorithmKind, AlgorithmState, InitRule, OracleGradients, ZeroGradients,
};
use decentsim::graph::{
    build_topology, expected_link_failure_matrix, laplacian_from_topology, mixing_rate, periodic_matrix,
    perron_vector, realize_link_failures, variation_measure, CombinationMatrix, Network, Topology, TopologyKind,
    WeightRule,
};
use decentsim::harness::{self, federated_reference, Preset};
use decentsim::metrics::{self, MetricEvaluator};
use decentsim::oracles::{estimate_noise_moments, OracleConfig};
use decentsim::problems::{DenoisingProblem, LogisticProblem, Problem, QuadraticProblem};
use decentsim::rng::{self, Purpose, Stream};
use decentsim::stacked::NetworkVector;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn lift<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Maximum that keeps NaN, so a NaN never passes a bound.
pub fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

pub fn rng_for(seed: u64) -> Stream {
    rng::stream(seed, 0, Purpose::Estimation, 0)
}

pub fn gaussian_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_network_vector(rng: &mut Stream, k: usize, m: usize) -> NetworkVector {
    let blocks: Vec<Vec<f64>> = (0..k).map(|_| gaussian_vec(rng, m)).collect();
    NetworkVector::from_blocks(&blocks).unwrap()
}

/// Random weighted graph, possibly disconnected.
pub fn random_weighted_topology(rng: &mut Stream, k: usize, density: f64) -> Topology {
    let mut edges = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if rng.random::<f64>() < density {
                edges.push((a, b, rng.random_range(0.1..2.0)));
            }
        }
    }
    Topology::new(k, edges).unwrap()
}

pub fn quadratic(k: usize, m: usize, noise_var: f64, spread: f64, seed: u64) -> Problem {
    Problem::Quadratic(QuadraticProblem::synthetic(k, m, noise_var, spread, seed).unwrap())
}

pub fn logistic(k: usize, m: usize, seed: u64) -> Problem {
    Problem::Logistic(LogisticProblem::synthetic(k, m, 200, 0.1, 0.5, seed).unwrap())
}

pub fn denoising(k: usize, m: usize, seed: u64) -> Problem {
    Problem::Denoising(DenoisingProblem::synthetic(k, m, 0.3, 1.0, 1.0, seed).unwrap())
}

pub fn problem_of(kind: &str, k: usize, m: usize, seed: u64) -> Problem {
    match kind {
        "quadratic" => quadratic(k, m, 0.5, 1.0, seed),
        "logistic" => logistic(k, m, seed),
        "denoising" => denoising(k, m, seed),
        _ => panic!("unknown problem kind {kind}"),
    }
}

pub const PROBLEM_KINDS: [&str; 3] = ["quadratic", "logistic", "denoising"];

pub fn oracle_configs() -> Vec<OracleConfig> {
    vec![
        OracleConfig::exact(),
        OracleConfig::ordinary(),
        OracleConfig::minibatch(4),
        OracleConfig::asynchronous(0.4),
        OracleConfig::perturbed(0.5),
    ]
}

fn er_network(k: usize, p: f64, seed: u64, rule: WeightRule) -> Result<Network, String> {
    let t = lift(build_topology(&TopologyKind::erdos_renyi(p), k, seed))?;
    lift(Network::new(t, rule))
}

// ---------------------------------------------------------------- graph

pub fn combination_matrix(k: usize, p: f64, seed: u64) -> Check {
    let t = lift(build_topology(&TopologyKind::erdos_renyi(p), k, seed))?;
    let max_deg = (0..k).map(|v| t.degree(v)).max().unwrap_or(0);
    let rules = [
        WeightRule::Metropolis,
        WeightRule::LazyMetropolis,
        WeightRule::Uniform(1.0 / (max_deg + 1) as f64),
    ];
    for rule in rules {
        let a = lift(rule.build(&t))?;
        for c in 0..k {
            let sum: f64 = (0..k).map(|r| a.entry(r, c)).sum();
            ensure!((sum - 1.0).abs() <= 1e-12, "{rule:?}: column {c} sums to {sum}");
            let neighbors = t.neighbors(c);
            for r in 0..k {
                let x = a.entry(r, c);
                ensure!(x >= 0.0, "{rule:?}: negative entry {x} at ({r}, {c})");
                if r != c {
                    ensure!(
                        (x != 0.0) == neighbors.contains(&r),
                        "{rule:?}: pattern mismatch at ({r}, {c})"
                    );
                }
            }
        }
    }
    Ok(())
}

pub fn laplacian_spectrum(k: usize, density: f64, seed: u64) -> Check {
    let mut rng = rng_for(seed);
    let t = random_weighted_topology(&mut rng, k, density);
    let l = laplacian_from_topology(&t);
    for r in 0..k {
        let s: f64 = l.matrix().row(r).sum();
        ensure!(s.abs() <= 1e-12, "row {r} sums to {s}");
    }
    let ev = l.eigenvalues();
    ensure!(ev[0] >= -1e-10, "minimum eigenvalue {}", ev[0]);
    if k >= 2 {
        ensure!(
            (ev[1] > 1e-9) == t.is_connected(),
            "second eigenvalue {} but connected = {}",
            ev[1],
            t.is_connected()
        );
    }
    Ok(())
}

pub fn variation_brute_force(k: usize, m: usize, seed: u64) -> Check {
    let mut rng = rng_for(seed);
    let t = random_weighted_topology(&mut rng, k, 0.6);
    let w = random_network_vector(&mut rng, k, m);
    let c = t.adjacency();
    let mut brute = 0.0;
    for a in 0..k {
        for b in 0..k {
            let d: f64 = w.block(a).iter().zip(w.block(b)).map(|(x, y)| (x - y) * (x - y)).sum();
            brute += c[(a, b)] * d;
        }
    }
    brute *= 0.5;
    let v = lift(variation_measure(&w, &laplacian_from_topology(&t)))?;
    ensure!((v - brute).abs() <= 1e-10, "quadratic form {v} vs double sum {brute}");
    Ok(())
}

pub fn mixing_rate_order(k: usize) -> Check {
    let ring = lift(WeightRule::Metropolis.build(&lift(build_topology(&TopologyKind::Ring, k, 0))?))?;
    let complete = lift(WeightRule::Metropolis.build(&lift(build_topology(&TopologyKind::Complete, k, 0))?))?;
    let (lr, lc) = (lift(mixing_rate(&ring))?, lift(mixing_rate(&complete))?);
    ensure!((0.0..=1.0).contains(&lr) && (0.0..=1.0).contains(&lc), "rates {lr}, {lc} outside [0, 1]");
    ensure!(lc <= lr + 1e-12, "complete {lc} exceeds ring {lr}");
    Ok(())
}

pub fn perron_uniform(k: usize, p: f64, seed: u64) -> Check {
    let t = lift(build_topology(&TopologyKind::erdos_renyi(p), k, seed))?;
    let a = lift(WeightRule::Metropolis.build(&t))?;
    let v = lift(perron_vector(&a))?;
    for x in v.iter() {
        ensure!((x - 1.0 / k as f64).abs() <= 1e-10, "Perron entry {x} vs {}", 1.0 / k as f64);
    }
    Ok(())
}

/// Empirical mean of realized matrices against the expected matrix, within
/// three standard errors entrywise; every realization stays doubly
/// stochastic.
pub fn link_failure_expectation(keep: f64, seed: u64) -> Check {
    let net = er_network(6, 0.6, seed, WeightRule::Metropolis)?;
    let a = &net.combination;
    let k = a.size();
    let n = 10_000;
    let mut sum = DMatrix::zeros(k, k);
    let mut sum_sq = DMatrix::zeros(k, k);
    for i in 0..n {
        let r = lift(realize_link_failures(a, keep, i, seed))?;
        ensure!(r.is_doubly_stochastic(1e-12), "realization {i} is not doubly stochastic");
        sum += r.matrix();
        sum_sq += r.matrix().component_mul(r.matrix());
    }
    let expected = expected_link_failure_matrix(a, keep);
    let nf = n as f64;
    for r in 0..k {
        for c in 0..k {
            let mean = sum[(r, c)] / nf;
            let var = (sum_sq[(r, c)] / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
            let se = (var / nf).sqrt();
            let want = expected.entry(r, c);
            if se == 0.0 {
                ensure!((mean - want).abs() <= 1e-12, "constant entry ({r}, {c}) {mean} vs {want}");
            } else {
                ensure!((mean - want).abs() <= 3.0 * se, "entry ({r}, {c}) {mean} vs {want}, se {se}");
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------- problems

pub fn finite_differences(kind: &str, seed: u64) -> Check {
    let (k, m) = (3, 3);
    let problem = problem_of(kind, k, m, seed);
    let mut rng = rng_for(seed ^ 0xfd);
    for trial in 0..20 {
        let agent = trial % k;
        let w = gaussian_vec(&mut rng, m);
        let s = problem.sample(agent, &mut rng);
        let g = lift(problem.grad_loss(&w, &s))?;
        let scale = g.norm().max(1.0);
        for j in 0..m {
            let h = 1e-5 * w[j].abs().max(1.0);
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (lift(problem.loss(&up, &s))? - lift(problem.loss(&down, &s))?) / (2.0 * h);
            ensure!(
                (fd - g[j]).abs() <= 1e-6 * scale,
                "{kind}: coordinate {j} analytic {} vs central difference {fd}",
                g[j]
            );
        }
    }
    Ok(())
}

pub fn optimum_is_stationary(kind: &str, seed: u64) -> Check {
    let k = 5;
    let problem = problem_of(kind, k, 3, seed);
    let mut rng = rng_for(seed);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let truth = lift(problem.centralized_optimum(&p))?;
    let mut g = DVector::zeros(3);
    for (j, pj) in p.iter().enumerate() {
        g += problem.true_gradient(j, truth.w_opt.as_slice()) * *pj;
    }
    ensure!(g.norm() <= 1e-8, "{kind}: weighted gradient norm {} at the optimum", g.norm());
    Ok(())
}

pub fn sample_gradients_unbiased(kind: &str, seed: u64) -> Check {
    let m = 3;
    let problem = problem_of(kind, 2, m, seed);
    let mut rng = rng_for(seed ^ 0xb1a5);
    let w = gaussian_vec(&mut rng, m);
    let truth = problem.true_gradient(1, &w);
    let n = 100_000;
    let (mut sum, mut sum_sq) = (vec![0.0; m], vec![0.0; m]);
    for _ in 0..n {
        let s = problem.sample(1, &mut rng);
        let g = lift(problem.grad_loss(&w, &s))?;
        for j in 0..m {
            let e = g[j] - truth[j];
            sum[j] += e;
            sum_sq[j] += e * e;
        }
    }
    let nf = n as f64;
    for j in 0..m {
        let mean = sum[j] / nf;
        let se = ((sum_sq[j] / nf - mean * mean).max(0.0) / (nf - 1.0)).sqrt();
        ensure!(mean.abs() <= 4.0 * se, "{kind}: coordinate {j} bias {mean}, se {se}");
    }
    Ok(())
}

/// At the optimum of a homogeneous quadratic (and anywhere for logistic),
/// the sample-gradient variance is positive and below the tabulated sigma^2.
pub fn sample_variance_bounded(kind: &str, seed: u64) -> Check {
    let m = 3;
    let problem = match kind {
        "quadratic" => quadratic(2, m, 0.7, 0.0, seed),
        "logistic" => logistic(2, m, seed),
        _ => return Err(format!("no tabulated constants for {kind}")),
    };
    let truth = lift(problem.centralized_optimum(&[0.5, 0.5]))?;
    let w = truth.w_opt.as_slice();
    let (_, sigma2) = lift(problem.noise_constants(0))?;
    let g0 = problem.true_gradient(0, w);
    let mut rng = rng_for(seed ^ 0x5a);
    let n = 100_000;
    let mut total = 0.0;
    for _ in 0..n {
        let s = problem.sample(0, &mut rng);
        total += (lift(problem.grad_loss(w, &s))? - &g0).norm_squared();
    }
    let var = total / n as f64;
    ensure!(var > 0.0, "{kind}: zero variance");
    ensure!(var <= sigma2, "{kind}: variance {var} above sigma^2 = {sigma2}");
    Ok(())
}

pub fn heterogeneity_grows(seed: u64) -> Check {
    let b2 = |spread: f64| -> Result<f64, String> {
        let problem = quadratic(6, 3, 0.5, spread, seed);
        Ok(lift(problem.centralized_optimum(&[1.0 / 6.0; 6]))?.heterogeneity)
    };
    let (h0, h1, h2) = (b2(0.0)?, b2(0.5)?, b2(1.0)?);
    ensure!(h0.abs() <= 1e-20, "homogeneous b^2 = {h0}");
    ensure!(h0 < h1 && h1 < h2, "b^2 not increasing: {h0}, {h1}, {h2}");
    Ok(())
}

// -------------------------------------------------------------- oracles

fn own_optimum(problem: &Problem, k: usize) -> Vec<f64> {
    match problem {
        Problem::Quadratic(q) => q.agent(k).w_true().as_slice().to_vec(),
        _ => panic!("own optimum is defined for quadratic problems"),
    }
}

pub fn oracle_unbiased(config: OracleConfig, seed: u64) -> Check {
    let problem = quadratic(3, 3, 0.5, 1.0, seed);
    let w_ref = own_optimum(&problem, 1);
    let mut rng = rng_for(seed ^ 0x0a);
    for point in 0..5 {
        let w = gaussian_vec(&mut rng, 3);
        let mom = lift(estimate_noise_moments(&config, &problem, 1, &w, &w_ref, 100_000, &mut rng))?;
        ensure!(
            mom.max_bias_z() <= 4.0,
            "{:?} point {point}: bias z-score {}",
            config.kind,
            mom.max_bias_z()
        );
    }
    Ok(())
}

pub fn oracle_variance_bounded(config: OracleConfig, seed: u64) -> Check {
    let problem = quadratic(3, 3, 0.5, 1.0, seed);
    let w_ref = own_optimum(&problem, 2);
    let mut rng = rng_for(seed ^ 0x0b);
    let r = gaussian_vec(&mut rng, 3);
    let shifted: Vec<f64> = w_ref.iter().zip(&r).map(|(a, b)| a + b).collect();
    for w in [w_ref.clone(), shifted] {
        let mom = lift(estimate_noise_moments(&config, &problem, 2, &w, &w_ref, 100_000, &mut rng))?;
        ensure!(
            mom.variance <= 1.1 * mom.bound,
            "{:?}: variance {} above 1.1 x bound {}",
            config.kind,
            mom.variance,
            mom.bound
        );
    }
    Ok(())
}

pub fn minibatch_halving(seed: u64) -> Check {
    let problem = quadratic(2, 3, 0.5, 1.0, seed);
    let w_ref = own_optimum(&problem, 0);
    let mut rng = rng_for(seed ^ 0x0c);
    let w = gaussian_vec(&mut rng, 3);
    let mut var = |b: usize| -> Result<f64, String> {
        Ok(lift(estimate_noise_moments(&OracleConfig::minibatch(b), &problem, 0, &w, &w_ref, 100_000, &mut rng))?.variance)
    };
    let (v1, v2, v4) = (var(1)?, var(2)?, var(4)?);
    for (a, b) in [(v1, v2), (v2, v4)] {
        let ratio = b / a;
        ensure!((ratio - 0.5).abs() <= 0.5 * 0.15, "doubling B gave variance ratio {ratio}");
    }
    Ok(())
}

pub fn oracle_deterministic(config: OracleConfig, seed: u64) -> Check {
    let problem = quadratic(2, 3, 0.5, 1.0, seed);
    let draw = |s: u64| -> Result<Vec<f64>, String> {
        let mut rng = rng::stream(s, 0, Purpose::Data, 0);
        let mut out = Vec::new();
        for i in 0..100 {
            let w = [i as f64 * 0.01, -0.5, 1.0];
            out.extend(lift(config.evaluate(&problem, 0, &w, &mut rng))?.iter().copied());
        }
        Ok(out)
    };
    let (a, b) = (draw(seed)?, draw(seed)?);
    ensure!(
        a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
        "{:?}: identical streams diverged",
        config.kind
    );
    Ok(())
}

// ----------------------------------------------------------- algorithms

pub fn problem_for(kind: &AlgorithmKind, k: usize, m: usize, seed: u64) -> Problem {
    match kind {
        AlgorithmKind::GraphFilterDenoise { .. } => denoising(k, m, seed),
        _ => quadratic(k, m, 0.5, 1.0, seed),
    }
}

fn same_bits(a: &NetworkVector, b: &NetworkVector) -> bool {
    a.same_shape(b) && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same_opt(a: &Option<NetworkVector>, b: &Option<NetworkVector>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => same_bits(x, y),
        _ => false,
    }
}

/// Three steps with the natural agent order and with a random permutation
/// leave bit-identical states.
pub fn order_invariance(id: &str, seed: u64) -> Check {
    let kind = lift(AlgorithmKind::from_id(id, Some(0.5), Some(2)))?;
    let (k, m) = (6, 2);
    let problem = problem_for(&kind, k, m, seed);
    let net = er_network(k, 0.6, seed, WeightRule::LazyMetropolis)?;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut rng = rng_for(seed);
    for i in (1..k).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let mut states = Vec::new();
    for order in [(0..k).collect::<Vec<_>>(), perm] {
        let mut grads = lift(OracleGradients::new(&problem, OracleConfig::ordinary(), rng::agent_streams(seed, 0, k)))?;
        let mut init_rng = rng::stream(seed, 0, Purpose::Init, 0);
        let mut s = lift(init_state(&kind, &net, m, &InitRule::Gaussian(1.0), &mut init_rng, &mut grads))?;
        lift(s.set_order(order))?;
        for i in 1..=3 {
            let a = match kind {
                AlgorithmKind::FederatedAveraging { period } => lift(periodic_matrix(k, i, period))?,
                _ => net.combination.clone(),
            };
            lift(step(&kind, &mut s, &net, &a, &mut grads, 0.05))?;
        }
        states.push(s);
    }
    let (a, b) = (&states[0], &states[1]);
    ensure!(same_bits(&a.w, &b.w), "{id}: iterates depend on the agent order");
    ensure!(
        same_opt(&a.dual, &b.dual)
            && same_opt(&a.tracker, &b.tracker)
            && same_opt(&a.prev_grad, &b.prev_grad)
            && same_opt(&a.prev_inter, &b.prev_inter),
        "{id}: auxiliaries depend on the agent order"
    );
    Ok(())
}

/// With zero gradients: contraction towards the initial average at rate
/// lambda, and the average preserved at every step.
pub fn consensus_contraction(id: &str, k: usize, p: f64, seed: u64) -> Check {
    let kind = lift(AlgorithmKind::from_id(id, None, None))?;
    let net = er_network(k, p, seed, WeightRule::Metropolis)?;
    let lambda = net.stats.mixing_rate.ok_or("Metropolis matrix without a mixing rate")?;
    let mut rng = rng_for(seed);
    let w0 = random_network_vector(&mut rng, k, 3);
    let mean0 = w0.mean_block();
    let dev = |w: &NetworkVector| -> f64 {
        w.blocks()
            .flat_map(|b| b.iter().zip(mean0.iter()).map(|(x, y)| (x - y) * (x - y)))
            .sum::<f64>()
            .sqrt()
    };
    let d0 = dev(&w0);
    let mut s = AlgorithmState::from_iterates(w0);
    let mut i = 0;
    // Stop once the bound itself reaches rounding level.
    while i < 200 && lambda.powi(i + 1) >= 1e-6 {
        lift(step(&kind, &mut s, &net, &net.combination, &mut ZeroGradients, 0.1))?;
        i += 1;
        let d = dev(&s.w);
        ensure!(
            d <= lambda.powi(i) * d0 * (1.0 + 1e-10),
            "{id}: deviation {d} above lambda^{i} bound {}",
            lambda.powi(i) * d0
        );
        let mean = s.w.mean_block();
        let drift = mean.iter().zip(mean0.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, nan_max);
        ensure!(drift <= 1e-12, "{id}: network average moved by {drift} at step {i}");
    }
    Ok(())
}

pub fn tracker_conservation(id: &str, seed: u64) -> Check {
    let kind = lift(AlgorithmKind::from_id(id, None, None))?;
    let (k, m) = (7, 3);
    let problem = quadratic(k, m, 0.5, 1.0, seed);
    let net = er_network(k, 0.5, seed, WeightRule::Metropolis)?;
    let mut grads = lift(OracleGradients::new(&problem, OracleConfig::ordinary(), rng::agent_streams(seed, 0, k)))?;
    let mut init_rng = rng::stream(seed, 0, Purpose::Init, 0);
    let mut s = lift(init_state(&kind, &net, m, &InitRule::Gaussian(1.0), &mut init_rng, &mut grads))?;
    for i in 0..50 {
        if i > 0 {
            lift(step(&kind, &mut s, &net, &net.combination, &mut grads, 0.05))?;
        }
        let tracker = s.tracker.as_ref().ok_or("missing tracker")?.mean_block();
        let grad = s.prev_grad.as_ref().ok_or("missing gradient memory")?.mean_block();
        let scale = 1.0 + grad.iter().map(|x| x.abs()).fold(0.0, nan_max);
        let gap = tracker.iter().zip(grad.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, nan_max);
        ensure!(gap <= 1e-12 * scale, "{id}: tracker mean off by {gap} at iteration {i}");
    }
    Ok(())
}

pub fn exact_diffusion_starts_as_atc(seed: u64) -> Check {
    let (k, m) = (6, 3);
    let problem = quadratic(k, m, 0.5, 1.0, seed);
    let net = er_network(k, 0.6, seed, WeightRule::LazyMetropolis)?;
    let mut out = Vec::new();
    for kind in [AlgorithmKind::DiffusionAtc, AlgorithmKind::ExactDiffusion] {
        let mut grads = lift(OracleGradients::new(&problem, OracleConfig::ordinary(), rng::agent_streams(seed, 0, k)))?;
        let mut init_rng = rng::stream(seed, 0, Purpose::Init, 0);
        let mut s = lift(init_state(&kind, &net, m, &InitRule::Gaussian(1.0), &mut init_rng, &mut grads))?;
        lift(step(&kind, &mut s, &net, &net.combination, &mut grads, 0.05))?;
        out.push(s.w);
    }
    ensure!(same_bits(&out[0], &out[1]), "first Exact diffusion iterate differs from ATC");
    Ok(())
}

/// ATC diffusion with periodic averaging and the federated kind against the
/// reference loop, bit for bit over 100 iterations.
pub fn federated_matches_reference(period: usize, seed: u64) -> Check {
    let (k, m, mu, t) = (8, 4, 0.01, 100);
    let problem = quadratic(k, m, 1.0, 1.0, seed);
    let net = lift(Network::new(lift(build_topology(&TopologyKind::Ring, k, 0))?, WeightRule::Metropolis))?;
    let oracle = OracleConfig::ordinary();
    let init = InitRule::Gaussian(1.0);
    for run in 0..2 {
        let reference = lift(federated_reference(&problem, &oracle, &init, mu, period, t, seed, run))?;
        for kind in [AlgorithmKind::DiffusionAtc, AlgorithmKind::FederatedAveraging { period }] {
            let mut grads = lift(OracleGradients::new(&problem, oracle, rng::agent_streams(seed, run as u64, k)))?;
            let mut init_rng = rng::stream(seed, run as u64, Purpose::Init, 0);
            let mut s = lift(init_state(&kind, &net, m, &init, &mut init_rng, &mut grads))?;
            ensure!(same_bits(&s.w, &reference[0]), "initial iterates differ");
            for (i, want) in reference.iter().enumerate().skip(1) {
                let a: CombinationMatrix = lift(periodic_matrix(k, i, period))?;
                lift(step(&kind, &mut s, &net, &a, &mut grads, mu))?;
                ensure!(same_bits(&s.w, want), "{}: iterate {i} differs from the reference", kind.id());
            }
        }
    }
    Ok(())
}

/// Exact methods reach the tolerance, diffusion and consensus keep a
/// positive plateau (deterministic gradients, heterogeneous agents).
pub fn exactness(seed: u64) -> Check {
    let cfg = lift(Preset::BiasExactness.config(None, &[format!("seed={seed}"), "t=3000".into()]))?;
    let outcome = lift(harness::run_preset(Preset::BiasExactness, &cfg))?;
    for r in &outcome.results {
        let id = r.prepared.point.algorithm.id();
        let best = r.trace.msd.iter().copied().fold(f64::INFINITY, f64::min);
        let last = *r.trace.msd.last().unwrap();
        match id {
            "diffusion_atc" | "consensus_innovation" => {
                ensure!(last > 0.0 && best > 1e-8, "{id}: plateau {last} is not strictly positive")
            }
            _ => ensure!(best <= 1e-20, "{id}: best MSD {best} above 1e-20"),
        }
    }
    Ok(())
}

// -------------------------------------------------------------- metrics

pub fn disagreement_zero_iff_consensus(k: usize, m: usize, seed: u64) -> Check {
    let mut rng = rng_for(seed);
    let t = lift(build_topology(&TopologyKind::erdos_renyi(0.5), k, seed))?;
    let block = gaussian_vec(&mut rng, m);
    let consensus = NetworkVector::replicate(&block, k);
    let d = metrics::disagreement(&consensus, &t);
    ensure!(d == 0.0, "consensus disagreement {d}");
    if k >= 2 {
        let spread = random_network_vector(&mut rng, k, m);
        let d = metrics::disagreement(&spread, &t);
        ensure!(d > 0.0, "distinct models with zero disagreement");
    }
    Ok(())
}

pub fn regret_is_running_sum(seed: u64) -> Check {
    let k = 5;
    let problem = quadratic(k, 3, 0.5, 1.0, seed);
    let net = er_network(k, 0.6, seed, WeightRule::Metropolis)?;
    let p = net.stats.perron.as_slice().to_vec();
    let truth = lift(problem.centralized_optimum(&p))?;
    let eval = MetricEvaluator::new(&problem, &net.topology, &p, truth);
    let mut rng = rng_for(seed);
    let (mut regret, mut manual) = (0.0, 0.0);
    for i in 0..50 {
        let w = random_network_vector(&mut rng, k, 3);
        let snap = eval.snapshot(&w, regret);
        manual += snap.er_network;
        regret = snap.regret;
        ensure!(
            (regret - manual).abs() <= 1e-12 * manual.abs().max(1.0),
            "regret {regret} vs running sum {manual} at {i}"
        );
    }
    Ok(())
}

pub fn gradient_vanishes_at_optimum(seed: u64) -> Check {
    let k = 6;
    let problem = quadratic(k, 4, 0.5, 1.0, seed);
    let p = vec![1.0 / k as f64; k];
    let truth = lift(problem.centralized_optimum(&p))?;
    let w = NetworkVector::replicate(truth.w_opt.as_slice(), k);
    let g = metrics::grad_norm_sq(&problem, &p, &w);
    ensure!(g <= 1e-16, "gradient norm squared {g} at the optimum");
    Ok(())
}

// -------------------------------------------------------------- harness

fn quick_config(out: &Path) -> Result<harness::ExperimentConfig, String> {
    let text = include_str!("../../configs/quickstart.conf");
    let mut raw = lift(harness::RawConfig::parse(text))?;
    for o in ["t=400", "runs=20", "thinning=50", &format!("output_dir={}", out.display())] {
        lift(raw.apply_override(o))?;
    }
    lift(harness::config::from_raw(&raw))
}

pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Same configuration, different thread counts and repeated runs: identical
/// artifact bytes.
pub fn byte_reproducible() -> Check {
    let mut trees = Vec::new();
    for threads in [1, 3, 1] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = quick_config(dir.path())?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let written = pool.install(|| -> Result<std::path::PathBuf, String> {
            let outcome = lift(harness::run_experiment(&cfg))?;
            lift(outcome.write(&cfg))
        })?;
        trees.push(read_tree(&written));
    }
    ensure!(trees[0].len() > 3, "too few artifacts: {:?}", trees[0].keys().collect::<Vec<_>>());
    ensure!(trees[0] == trees[1], "artifacts differ between 1 and 3 threads");
    ensure!(trees[0] == trees[2], "artifacts differ between repeated runs");
    Ok(())
}

/// Every row with a prediction also carries mc_runs and a standard error.
pub fn rows_carry_errors() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = vec![lift(harness::run_experiment(&quick_config(dir.path())?))?.report];
    for (preset, overrides) in [
        (Preset::BiasExactness, vec!["t=1500"]),
        (Preset::StabilitySweep, vec!["t=300"]),
        (Preset::FederatedEquivalence, vec!["t=20", "runs=2"]),
        (Preset::GraphDenoise, vec!["t=400", "runs=10", "steady.window=200"]),
    ] {
        let overrides: Vec<String> = overrides.into_iter().map(String::from).collect();
        let cfg = lift(preset.config(None, &overrides))?;
        reports.push(lift(harness::run_preset(preset, &cfg))?.report);
    }
    for report in &reports {
        for row in report.rows.iter().filter(|r| r.predicted.is_some()) {
            ensure!(
                row.std_error.is_some() && row.mc_runs > 0,
                "{}: {} {} lacks a standard error",
                report.experiment,
                row.point,
                row.metric
            );
        }
    }
    Ok(())
}

/// Presets write into their own `<name>_<seed>` directories.
pub fn presets_isolated() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = format!("output_dir={}", dir.path().display());
    let first_cfg = lift(Preset::FederatedEquivalence.config(None, &[out.clone(), "t=10".into(), "runs=1".into()]))?;
    let first = lift(lift(harness::run_preset(Preset::FederatedEquivalence, &first_cfg))?.write(&first_cfg))?;
    let before = read_tree(&first);
    let second_cfg = lift(Preset::BiasExactness.config(None, &[out, "t=200".into()]))?;
    let second = lift(lift(harness::run_preset(Preset::BiasExactness, &second_cfg))?.write(&second_cfg))?;
    ensure!(first != second, "both presets wrote to {}", first.display());
    ensure!(first.ends_with("federated_equivalence_2024"), "unexpected directory {}", first.display());
    ensure!(read_tree(&first) == before, "second preset changed the first preset's files");
    Ok(())
}
