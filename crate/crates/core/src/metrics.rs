//! Performance measures: MSD, excess risk, regret, disagreement,
//! first-order stationarity, iteration complexity and tail averages.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::problems::{GroundTruth, Problem};
use crate::stacked::{dist_sq, NetworkVector};

/// Metrics of one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSnapshot {
    pub msd_per_agent: Vec<f64>,
    pub msd_network: f64,
    pub er_network: f64,
    /// Sum of `er_network` over all snapshots so far, initialization included.
    pub regret: f64,
    pub disagreement: f64,
    pub grad_norm_sq: f64,
}

/// `(||w° - w_k||^2 per agent, their average)`.
pub fn msd(w: &NetworkVector, w_opt: &[f64]) -> Result<(Vec<f64>, f64)> {
    if w.dim() != w_opt.len() {
        return Err(Error::shape(format!("blocks of dimension {}", w_opt.len()), w.dim()));
    }
    let per: Vec<f64> = w.blocks().map(|b| dist_sq(b, w_opt)).collect();
    let net = per.iter().sum::<f64>() / per.len() as f64;
    Ok((per, net))
}

/// `(1/K) sum_k [J(w_k) - J(w°)]` with `J = sum_l p_l J_l`.
pub fn excess_risk(problem: &Problem, p: &[f64], w: &NetworkVector, risk_opt: f64) -> f64 {
    let total: f64 = w
        .blocks()
        .map(|b| p.iter().enumerate().map(|(l, pl)| pl * problem.risk(l, b)).sum::<f64>() - risk_opt)
        .sum();
    total / w.agents() as f64
}

/// `W^T (L (x) I) W` evaluated edge by edge.
pub fn disagreement(w: &NetworkVector, topology: &Topology) -> f64 {
    topology
        .edges()
        .iter()
        .map(|e| e.weight * dist_sq(w.block(e.a), w.block(e.b)))
        .sum()
}

/// `(1/K) sum_k ||grad J(w_k)||^2` for the aggregate `J = sum_l p_l J_l`.
pub fn grad_norm_sq(problem: &Problem, p: &[f64], w: &NetworkVector) -> f64 {
    let m = w.dim();
    let total: f64 = w
        .blocks()
        .map(|b| {
            (0..p.len())
                .fold(DVector::zeros(m), |acc, l| acc + problem.true_gradient(l, b) * p[l])
                .norm_squared()
        })
        .sum();
    total / w.agents() as f64
}

/// Smallest `i` with `trace[i] <= eps`.
pub fn iteration_complexity(trace: &[f64], eps: f64) -> Option<usize> {
    trace.iter().position(|x| *x <= eps)
}

/// Default tail window: `min(1000, T/10)`, at least one sample.
pub fn default_window(t: usize) -> usize {
    (t / 10).clamp(1, 1000)
}

pub const DEFAULT_BURN_IN: f64 = 0.5;

/// Index range `[start, len)` averaged by [`steady_state`].
pub fn steady_range(len: usize, burn_in: f64, window: usize) -> Result<std::ops::Range<usize>> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(Error::Parameter(format!("burn-in fraction must lie in [0, 1), got {burn_in}")));
    }
    if window == 0 {
        return Err(Error::Parameter("steady-state window must be at least 1".into()));
    }
    let skip = (burn_in * len as f64).floor() as usize;
    let available = len.saturating_sub(skip);
    if window > available {
        return Err(Error::Parameter(format!(
            "window of {window} exceeds the {available} samples left after burn-in"
        )));
    }
    Ok(len - window..len)
}

/// Mean of the final `window` entries once the burn-in prefix is dropped.
pub fn steady_state(trace: &[f64], burn_in: f64, window: usize) -> Result<f64> {
    let r = steady_range(trace.len(), burn_in, window)?;
    Ok(trace[r].iter().sum::<f64>() / window as f64)
}

/// Least-squares line `y = intercept + slope x` with its coefficient of
/// determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Parameter("line fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::Parameter("line fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Fit of `ln y_i` against `i` over `range`; the per-iteration contraction
/// factor is `exp(slope)`.
pub fn log_linear_fit(trace: &[f64], range: std::ops::Range<usize>) -> Result<LineFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = range
        .filter(|i| trace[*i] > 0.0)
        .map(|i| (i as f64, trace[i].ln()))
        .unzip();
    fit_line(&x, &y)
}

/// Fit of `ln y_i` against `ln i` over `range` (indices must be positive).
pub fn log_log_fit(trace: &[f64], range: std::ops::Range<usize>) -> Result<LineFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = range
        .filter(|i| *i > 0 && trace[*i] > 0.0)
        .map(|i| ((i as f64).ln(), trace[i].ln()))
        .unzip();
    fit_line(&x, &y)
}

/// Precomputed evaluator for everything tracked per iteration.
#[derive(Debug, Clone)]
pub struct MetricEvaluator<'a> {
    problem: &'a Problem,
    topology: &'a Topology,
    p: Vec<f64>,
    truth: GroundTruth,
    hessian: Option<DMatrix<f64>>,
}

/// Per-iteration values recorded by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Record {
    pub msd: f64,
    pub er: f64,
    pub disagreement: f64,
    pub grad_norm_sq: f64,
}

impl<'a> MetricEvaluator<'a> {
    pub fn new(problem: &'a Problem, topology: &'a Topology, p: &[f64], truth: GroundTruth) -> Self {
        Self {
            problem,
            topology,
            p: p.to_vec(),
            hessian: problem.aggregate_hessian(p),
            truth,
        }
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn weights(&self) -> &[f64] {
        &self.p
    }

    pub fn record(&self, w: &NetworkVector) -> Record {
        let w_opt = self.truth.w_opt.as_slice();
        let k = w.agents() as f64;
        let msd = w.blocks().map(|b| dist_sq(b, w_opt)).sum::<f64>() / k;
        let (er, grad) = match &self.hessian {
            // J(w) - J(w°) = d^T H d / 2 and grad J(w) = H d for quadratic risks
            Some(h) => {
                let m = w.dim();
                let mut er = 0.0;
                let mut gn = 0.0;
                let mut d = vec![0.0; m];
                for b in w.blocks() {
                    for j in 0..m {
                        d[j] = b[j] - w_opt[j];
                    }
                    for i in 0..m {
                        let mut hd = 0.0;
                        for j in 0..m {
                            hd += h[(i, j)] * d[j];
                        }
                        er += 0.5 * d[i] * hd;
                        gn += hd * hd;
                    }
                }
                (er / k, gn / k)
            }
            None => (
                excess_risk(self.problem, &self.p, w, self.truth.risk_opt),
                grad_norm_sq(self.problem, &self.p, w),
            ),
        };
        Record {
            msd,
            er,
            disagreement: disagreement(w, self.topology),
            grad_norm_sq: grad,
        }
    }

    pub fn snapshot(&self, w: &NetworkVector, regret_before: f64) -> MetricSnapshot {
        let (per, net) = msd(w, self.truth.w_opt.as_slice()).expect("matching dimensions");
        let r = self.record(w);
        MetricSnapshot {
            msd_per_agent: per,
            msd_network: net,
            er_network: r.er,
            regret: regret_before + r.er,
            disagreement: r.disagreement,
            grad_norm_sq: r.grad_norm_sq,
        }
    }
}

/// Running sums of a trace.
pub fn cumulative(trace: &[f64]) -> Vec<f64> {
    trace
        .iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, TopologyKind};
    use crate::problems::{DenoisingProblem, QuadraticProblem};
    use approx::assert_abs_diff_eq;

    #[test]
    fn msd_examples() {
        let w = NetworkVector::from_blocks(&[[1.0], [-1.0]]).unwrap();
        let (per, net) = msd(&w, &[0.0]).unwrap();
        assert_eq!(per, vec![1.0, 1.0]);
        assert_eq!(net, 1.0);
        let at = NetworkVector::replicate(&[0.3, 0.4], 3);
        assert_eq!(msd(&at, &[0.3, 0.4]).unwrap().1, 0.0);
        assert!(msd(&at, &[0.0]).is_err());
    }

    #[test]
    fn excess_risk_example() {
        let den: Problem = DenoisingProblem::new(vec![DVector::zeros(2)], vec![0.0], 0.0)
            .unwrap()
            .into();
        let w = NetworkVector::from_blocks(&[[1.0, 1.0]]).unwrap();
        let gt = den.centralized_optimum(&[1.0]).unwrap();
        assert_abs_diff_eq!(excess_risk(&den, &[1.0], &w, gt.risk_opt), 1.0);
        let t = Topology::new(1, []).unwrap();
        let ev = MetricEvaluator::new(&den, &t, &[1.0], gt.clone());
        assert_abs_diff_eq!(ev.record(&w).er, 1.0);
        assert_eq!(ev.record(&NetworkVector::zeros(1, 2)).er, 0.0);
    }

    #[test]
    fn quadratic_shortcut_matches_generic_risk() {
        let q: Problem = QuadraticProblem::synthetic(4, 3, 0.5, 1.0, 5).unwrap().into();
        let p = [0.1, 0.2, 0.3, 0.4];
        let gt = q.centralized_optimum(&p).unwrap();
        let t = build_topology(&TopologyKind::Ring, 4, 0).unwrap();
        let ev = MetricEvaluator::new(&q, &t, &p, gt.clone());
        let w = NetworkVector::from_blocks(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.0], [0.0, 0.0, 2.0], [-0.5, 0.5, 0.5]]).unwrap();
        let r = ev.record(&w);
        assert_abs_diff_eq!(r.er, excess_risk(&q, &p, &w, gt.risk_opt), epsilon = 1e-12);
        assert_abs_diff_eq!(r.grad_norm_sq, grad_norm_sq(&q, &p, &w), epsilon = 1e-12);
        let at = NetworkVector::replicate(gt.w_opt.as_slice(), 4);
        assert!(ev.record(&at).grad_norm_sq <= 1e-16);
    }

    #[test]
    fn iteration_complexity_examples() {
        assert_eq!(iteration_complexity(&[0.5, 2.0], 1.0), Some(0));
        assert_eq!(iteration_complexity(&[4.0, 2.0, 1.0, 0.5], 1.0), Some(2));
        assert_eq!(iteration_complexity(&[0.3, 0.1, 0.2], 0.0), None);
    }

    #[test]
    fn steady_state_examples() {
        assert_eq!(steady_state(&[3.0; 10], 0.5, 3).unwrap(), 3.0);
        assert_eq!(steady_state(&[9.0, 7.0, 2.0, 4.0], 0.0, 2).unwrap(), 3.0);
        assert!(steady_state(&[1.0; 10], 0.5, 6).is_err());
        assert!(steady_state(&[1.0; 10], 1.0, 1).is_err());
        assert_eq!(default_window(100_000), 1000);
        assert_eq!(default_window(5), 1);
    }

    #[test]
    fn fits() {
        let y: Vec<f64> = (0..50).map(|i| 3.0 * 0.9f64.powi(i)).collect();
        let f = log_linear_fit(&y, 0..50).unwrap();
        assert_abs_diff_eq!(f.slope.exp(), 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(f.r2, 1.0, epsilon = 1e-12);
        let z: Vec<f64> = (0..100).map(|i| 5.0 / (i as f64 + 1e-300)).collect();
        assert_abs_diff_eq!(log_log_fit(&z, 1..100).unwrap().slope, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn regret_is_running_sum() {
        assert_eq!(cumulative(&[1.0, 0.5, 0.25]), vec![1.0, 1.5, 1.75]);
    }
}
