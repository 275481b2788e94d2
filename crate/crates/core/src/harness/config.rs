//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::algorithms::{AlgorithmKind, InitRule, ScheduleKind};
use crate::error::{Error, Result};
use crate::graph::{TopologyKind, WeightRule};
use crate::oracles::{OracleConfig, OracleKind};

/// Every accepted key.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "algorithm",
    "topology.kind",
    "topology.k",
    "topology.p_edge",
    "topology.weights",
    "model.m",
    "mu",
    "schedule",
    "eta",
    "period",
    "t",
    "runs",
    "seed",
    "init",
    "oracle.kind",
    "oracle.batch",
    "oracle.pi",
    "oracle.noise_std",
    "problem.kind",
    "problem.sigma_v",
    "problem.rho",
    "problem.heterogeneous",
    "problem.pool",
    "problem.pool_file",
    "output_dir",
    "thinning",
    "link.keep_prob",
    "steady.burn_in",
    "steady.window",
    "sweep.mu",
    "sweep.k",
    "sweep.eta",
    "sweep.period",
    "sweep.pi",
    "sweep.algorithms",
];

pub const MANDATORY_KEYS: &[&str] = &[
    "algorithm",
    "topology.kind",
    "topology.k",
    "model.m",
    "mu",
    "t",
    "seed",
    "problem.kind",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Quadratic,
    Denoising,
    Logistic,
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(ProblemKind::Quadratic),
            "denoising" => Ok(ProblemKind::Denoising),
            "logistic" => Ok(ProblemKind::Logistic),
            _ => Err("expected quadratic, denoising or logistic".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Observation noise standard deviation.
    pub sigma_v: f64,
    pub rho: f64,
    /// Spread of the per-agent models around a common one; zero is homogeneous.
    pub spread: f64,
    pub pool: usize,
    pub pool_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub k: usize,
    pub weights: WeightRule,
}

/// Sweep lists consumed by presets; empty lists fall back to the scalar key.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sweep {
    pub mu: Vec<f64>,
    pub k: Vec<usize>,
    pub eta: Vec<f64>,
    pub period: Vec<usize>,
    pub pi: Vec<f64>,
    pub algorithms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub algorithm: String,
    pub topology: TopologySpec,
    pub m: usize,
    pub mu: f64,
    pub schedule: ScheduleKind,
    pub eta: Option<f64>,
    pub period: usize,
    pub t: usize,
    pub runs: usize,
    pub seed: u64,
    pub init: InitRule,
    pub oracle: OracleConfig,
    pub problem: ProblemSpec,
    pub output_dir: PathBuf,
    pub thinning: usize,
    pub link_keep_prob: Option<f64>,
    pub burn_in: f64,
    pub window: Option<usize>,
    pub sweep: Sweep,
}

impl ExperimentConfig {
    pub fn algorithm_kind(&self) -> Result<AlgorithmKind> {
        AlgorithmKind::from_id(&self.algorithm, self.eta, Some(self.period))
    }
}

/// Raw `key -> (value, line)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, Option<usize>)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (String, Option<usize>)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config(Some(line), format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            check_known(&key, Some(line))?;
            if let Some((_, Some(first))) = entries.get(&key) {
                return Err(Error::config(
                    Some(line),
                    format!("duplicate key `{key}` (first set on line {first})"),
                ));
            }
            entries.insert(key, (value, Some(line)));
        }
        Ok(Self { entries })
    }

    /// Keys of `other` replace those already present.
    pub fn merge(&mut self, other: RawConfig) {
        self.entries.extend(other.entries);
    }

    /// Applies `key=value` overrides on top of the parsed file.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(None, format!("override `{assignment}` is not `key=value`")))?;
        let key = key.trim();
        check_known(key, None)?;
        self.entries.insert(key.to_string(), (value.trim().to_string(), None));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<(&str, Option<usize>)> {
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn require(&self, key: &str) -> Result<(&str, Option<usize>)> {
        self.get(key)
            .ok_or_else(|| Error::config(None, format!("missing mandatory key `{key}`")))
    }

    fn typed<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(line, format!("`{key}` expects {what}, got `{v}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some((v, line)) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|_| Error::config(line, format!("`{key}` expects a list of {what}, got `{s}`")))
                })
                .collect(),
        }
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.get(key).and_then(|(_, l)| l)
    }
}

fn check_known(key: &str, line: Option<usize>) -> Result<()> {
    if KNOWN_KEYS.contains(&key) {
        return Ok(());
    }
    let nearest = KNOWN_KEYS
        .iter()
        .min_by_key(|k| strsim::levenshtein(k, key))
        .expect("non-empty key list");
    Err(Error::config(line, format!("unknown key `{key}`; did you mean `{nearest}`?")))
}

fn ensure(cond: bool, raw: &RawConfig, key: &str, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(raw.line(key), format!("`{key}` {msg}")))
    }
}

fn parse_weights(s: &str) -> std::result::Result<WeightRule, String> {
    match s {
        "metropolis" => Ok(WeightRule::Metropolis),
        "lazy_metropolis" => Ok(WeightRule::LazyMetropolis),
        _ => match s.strip_prefix("uniform:").map(str::parse::<f64>) {
            Some(Ok(w)) if w > 0.0 => Ok(WeightRule::Uniform(w)),
            _ => Err("expected metropolis, lazy_metropolis or uniform:<weight>".into()),
        },
    }
}

fn parse_init(s: &str) -> std::result::Result<InitRule, String> {
    if s == "zeros" {
        return Ok(InitRule::Zeros);
    }
    match s.strip_prefix("gaussian:").map(str::parse::<f64>) {
        Some(Ok(sd)) if sd >= 0.0 => Ok(InitRule::Gaussian(sd)),
        _ => Err("expected zeros or gaussian:<std>".into()),
    }
}

fn parse_bool_or_spread(s: &str) -> Option<f64> {
    match s {
        "true" => Some(1.0),
        "false" => Some(0.0),
        _ => s.parse::<f64>().ok().filter(|x| *x >= 0.0),
    }
}

fn parse_topology_kind(s: &str, p_edge: f64) -> std::result::Result<TopologyKind, String> {
    Ok(match s {
        "ring" => TopologyKind::Ring,
        "path" => TopologyKind::Path,
        "grid" => TopologyKind::Grid { rows: None },
        "complete" => TopologyKind::Complete,
        "star" => TopologyKind::Star,
        "erdos_renyi" => TopologyKind::erdos_renyi(p_edge),
        _ => return Err("expected ring, path, grid, complete, star or erdos_renyi".into()),
    })
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    from_raw(&RawConfig::parse(text)?)
}

/// Builds a typed configuration, applying defaults for optional keys.
pub fn from_raw(raw: &RawConfig) -> Result<ExperimentConfig> {
    for key in MANDATORY_KEYS {
        raw.require(key)?;
    }
    fn with<T>(raw: &RawConfig, key: &str, r: std::result::Result<T, String>) -> Result<T> {
        r.map_err(|e| Error::config(raw.line(key), format!("`{key}`: {e}")))
    }

    let algorithm = raw.require("algorithm")?.0.to_string();
    if !AlgorithmKind::IDS.contains(&algorithm.as_str()) {
        return Err(Error::config(
            raw.line("algorithm"),
            format!("unknown algorithm `{algorithm}`; known: {}", AlgorithmKind::IDS.join(", ")),
        ));
    }

    let p_edge: f64 = raw.typed("topology.p_edge", "a probability")?.unwrap_or(0.5);
    ensure(p_edge > 0.0 && p_edge <= 1.0, raw, "topology.p_edge", "must lie in (0, 1]")?;
    let kind = with(raw, "topology.kind", parse_topology_kind(raw.require("topology.kind")?.0, p_edge))?;
    let k: usize = raw.typed("topology.k", "a positive integer")?.unwrap();
    ensure(k >= 1, raw, "topology.k", "must be at least 1")?;
    let weights = match raw.get("topology.weights") {
        Some((v, _)) => with(raw, "topology.weights", parse_weights(v))?,
        None => WeightRule::Metropolis,
    };

    let m: usize = raw.typed("model.m", "a positive integer")?.unwrap();
    ensure(m >= 1, raw, "model.m", "must be at least 1")?;
    let mu: f64 = raw.typed("mu", "a number")?.unwrap();
    ensure(mu > 0.0 && mu.is_finite(), raw, "mu", "must be > 0")?;
    let schedule = match raw.get("schedule") {
        None | Some(("constant", _)) => ScheduleKind::Constant,
        Some(("diminishing", _)) => ScheduleKind::Diminishing,
        Some((v, line)) => {
            return Err(Error::config(line, format!("`schedule` expects constant or diminishing, got `{v}`")))
        }
    };
    let eta: Option<f64> = raw.typed("eta", "a number")?;
    if let Some(e) = eta {
        ensure(e >= 0.0 && e.is_finite(), raw, "eta", "must be >= 0")?;
    }
    let period: usize = raw.typed("period", "a positive integer")?.unwrap_or(1);
    ensure(period >= 1, raw, "period", "must be at least 1")?;
    let t: usize = raw.typed("t", "a non-negative integer")?.unwrap();
    let runs: usize = raw.typed("runs", "a positive integer")?.unwrap_or(1);
    ensure(runs >= 1, raw, "runs", "must be at least 1")?;
    let seed: u64 = raw.typed("seed", "a non-negative integer")?.unwrap();
    let init = match raw.get("init") {
        Some((v, _)) => with(raw, "init", parse_init(v))?,
        None => InitRule::Zeros,
    };

    let oracle_kind = match raw.get("oracle.kind") {
        Some((v, line)) => OracleKind::from_str(v).map_err(|_| {
            Error::config(
                line,
                format!("`oracle.kind` expects exact, ordinary, minibatch, asynchronous or perturbed, got `{v}`"),
            )
        })?,
        None => OracleKind::Ordinary,
    };
    let batch: usize = raw.typed("oracle.batch", "a positive integer")?.unwrap_or(1);
    ensure(batch >= 1, raw, "oracle.batch", "must be at least 1")?;
    let pi: f64 = raw.typed("oracle.pi", "a probability")?.unwrap_or(1.0);
    ensure(pi > 0.0 && pi <= 1.0, raw, "oracle.pi", "must lie in (0, 1]")?;
    let noise_std: f64 = raw.typed("oracle.noise_std", "a number")?.unwrap_or(0.0);
    ensure(noise_std >= 0.0 && noise_std.is_finite(), raw, "oracle.noise_std", "must be >= 0")?;
    let oracle = OracleConfig {
        kind: oracle_kind,
        batch,
        update_prob: pi,
        perturbation_var: noise_std * noise_std,
    };

    let problem_kind = with(raw, "problem.kind", raw.require("problem.kind")?.0.parse::<ProblemKind>())?;
    let sigma_v: f64 = raw.typed("problem.sigma_v", "a number")?.unwrap_or(1.0);
    ensure(sigma_v >= 0.0 && sigma_v.is_finite(), raw, "problem.sigma_v", "must be >= 0")?;
    let rho: f64 = raw.typed("problem.rho", "a number")?.unwrap_or(0.1);
    ensure(rho > 0.0 && rho.is_finite(), raw, "problem.rho", "must be > 0")?;
    let spread = match raw.get("problem.heterogeneous") {
        None => 0.0,
        Some((v, line)) => parse_bool_or_spread(v).ok_or_else(|| {
            Error::config(line, format!("`problem.heterogeneous` expects true, false or a spread >= 0, got `{v}`"))
        })?,
    };
    let pool: usize = raw.typed("problem.pool", "a positive integer")?.unwrap_or(200);
    let pool_file = raw.get("problem.pool_file").map(|(v, _)| PathBuf::from(v));

    let output_dir = raw
        .get("output_dir")
        .map(|(v, _)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from("out"));
    let thinning: usize = raw.typed("thinning", "a positive integer")?.unwrap_or(100);
    ensure(thinning >= 1, raw, "thinning", "must be at least 1")?;
    let link_keep_prob: Option<f64> = raw.typed("link.keep_prob", "a probability")?;
    if let Some(q) = link_keep_prob {
        ensure(q > 0.0 && q <= 1.0, raw, "link.keep_prob", "must lie in (0, 1]")?;
    }
    let burn_in: f64 = raw.typed("steady.burn_in", "a fraction")?.unwrap_or(0.5);
    ensure((0.0..1.0).contains(&burn_in), raw, "steady.burn_in", "must lie in [0, 1)")?;
    let window: Option<usize> = raw.typed("steady.window", "a positive integer")?;
    if let Some(w) = window {
        ensure(w >= 1, raw, "steady.window", "must be at least 1")?;
    }

    let sweep = Sweep {
        mu: raw.list("sweep.mu", "numbers")?,
        k: raw.list("sweep.k", "integers")?,
        eta: raw.list("sweep.eta", "numbers")?,
        period: raw.list("sweep.period", "integers")?,
        pi: raw.list("sweep.pi", "probabilities")?,
        algorithms: raw.list("sweep.algorithms", "algorithm identifiers")?,
    };
    ensure(sweep.mu.iter().all(|x| *x > 0.0), raw, "sweep.mu", "entries must be > 0")?;
    ensure(sweep.k.iter().all(|x| *x >= 1), raw, "sweep.k", "entries must be at least 1")?;
    ensure(sweep.eta.iter().all(|x| *x >= 0.0), raw, "sweep.eta", "entries must be >= 0")?;
    ensure(sweep.period.iter().all(|x| *x >= 1), raw, "sweep.period", "entries must be at least 1")?;
    ensure(sweep.pi.iter().all(|x| *x > 0.0 && *x <= 1.0), raw, "sweep.pi", "entries must lie in (0, 1]")?;
    if let Some(bad) = sweep.algorithms.iter().find(|a| !AlgorithmKind::IDS.contains(&a.as_str())) {
        return Err(Error::config(raw.line("sweep.algorithms"), format!("unknown algorithm `{bad}`")));
    }

    Ok(ExperimentConfig {
        experiment: raw.get("experiment").map(|(v, _)| v.to_string()).unwrap_or_else(|| "experiment".into()),
        algorithm,
        topology: TopologySpec { kind, k, weights },
        m,
        mu,
        schedule,
        eta,
        period,
        t,
        runs,
        seed,
        init,
        oracle,
        problem: ProblemSpec {
            kind: problem_kind,
            sigma_v,
            rho,
            spread,
            pool,
            pool_file,
        },
        output_dir,
        thinning,
        link_keep_prob,
        burn_in,
        window,
        sweep,
    })
}
