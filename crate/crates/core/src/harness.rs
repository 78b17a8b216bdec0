//! Seeded PAC trials and resumable parameter sweeps.
//!
//! Trial `i` uses seed `base_seed + i` for all of its randomness, and results
//! are merged in trial order, so reports are byte-identical at any thread
//! count. Wall time is deliberately not part of a report.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{cem_ns_sample_size, cem_s_sample_size, PacParams};
use crate::cem::{cem_ns_solve, cem_s_solve};
use crate::dp::{enumerate_policies, evaluate_policy, optimal_policy, SolveOptions, DEFAULT_POLICY_CAP};
use crate::error::{Error, Result};
use crate::mdp::{Kind, MdpSpec};
use crate::policy::Policy;
use crate::sampling::{sample_dataset_with_budget, DEFAULT_SAMPLE_BUDGET};
use crate::ttm::{default_tree_count, node_count, ttm_select_capped, DEFAULT_NODE_CAP};

/// Gap above `eps` by more than this counts as a mistake; absorbs solver
/// round-off only.
pub const MISTAKE_SLACK: f64 = 1e-12;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
const SWEEP_SCHEMA: &str = "pacrl-sweep v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    CemNs,
    CemS,
    Ttm,
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::CemNs => "cem-ns",
            Solver::CemS => "cem-s",
            Solver::Ttm => "ttm",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "cem-ns" => Ok(Solver::CemNs),
            "cem-s" => Ok(Solver::CemS),
            "ttm" => Ok(Solver::Ttm),
            other => Err(Error::InvalidParameter(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub solver: Solver,
    pub eps: f64,
    pub delta: f64,
    /// Samples per tuple (trees for TTM); `None` uses the solver's formula.
    pub n_override: Option<u64>,
    pub trials: u64,
    pub base_seed: u64,
    /// 0 means the global pool.
    pub threads: usize,
    /// Root state scored by TTM.
    pub root: usize,
    pub sample_budget: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            solver: Solver::CemNs,
            eps: 0.5,
            delta: 0.1,
            n_override: None,
            trials: 100,
            base_seed: 0,
            threads: 0,
            root: 0,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub n: u64,
    pub samples_used: u64,
    pub policy_digest: String,
    /// `V^pi(s, 0)` on the true model.
    pub values: Vec<f64>,
    /// `max_s (V*(s, 0) - V^pi(s, 0))`, over the root only for TTM.
    pub gap: f64,
    pub mistake: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialReport {
    pub solver: Solver,
    pub mdp_digest: String,
    pub eps: f64,
    pub delta: f64,
    pub n: u64,
    pub trials: u64,
    pub base_seed: u64,
    pub records: Vec<TrialRecord>,
    pub mistakes: u64,
    pub mistake_rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
}

impl TrialReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn pac_params(m: &MdpSpec<f64>, cfg: &TrialConfig) -> PacParams {
    PacParams {
        eps: cfg.eps,
        delta: cfg.delta,
        v_max: m.v_max,
        num_states: m.num_states,
        num_actions: m.num_actions,
        horizon: m.horizon,
        gamma: m.discount,
    }
}

fn too_big(what: &'static str, required: impl ToString, cap: u64) -> Error {
    Error::CapExceeded {
        what,
        required: required.to_string(),
        cap,
    }
}

/// Samples per tuple (trees for TTM) a trial will use.
pub fn resolve_n(m: &MdpSpec<f64>, cfg: &TrialConfig) -> Result<u64> {
    if let Some(n) = cfg.n_override {
        return Ok(n);
    }
    let p = pac_params(m, cfg);
    let big = match cfg.solver {
        Solver::CemNs => cem_ns_sample_size(&p)?.n,
        Solver::CemS => cem_s_sample_size(&p)?.n,
        Solver::Ttm => {
            let count = enumerate_policies(m, DEFAULT_POLICY_CAP)?.remaining();
            return default_tree_count(m.v_max, cfg.eps, cfg.delta, count);
        }
    };
    big.to_u64()
        .ok_or_else(|| too_big("samples per tuple", &big, cfg.sample_budget))
}

struct Truth {
    optimal: Vec<f64>,
    policies: Vec<Policy>,
}

fn truth(m: &MdpSpec<f64>, cfg: &TrialConfig, opts: &SolveOptions) -> Result<Truth> {
    let (_, v) = optimal_policy(m, opts)?;
    let policies = if cfg.solver == Solver::Ttm {
        enumerate_policies(m, DEFAULT_POLICY_CAP)?.collect()
    } else {
        Vec::new()
    };
    Ok(Truth {
        optimal: v.initial().to_vec(),
        policies,
    })
}

fn one_trial(m: &MdpSpec<f64>, model: &MdpSpec<f64>, cfg: &TrialConfig, truth: &Truth, n: u64, trial: u64) -> Result<TrialRecord> {
    let seed = cfg.base_seed.wrapping_add(trial);
    let opts = SolveOptions::default();
    let (policy, samples_used) = match cfg.solver {
        Solver::CemNs => {
            let d = sample_dataset_with_budget(model, n as usize, seed, cfg.sample_budget)?;
            let used = d.samples.len() as u64;
            (cem_ns_solve(&d, model)?.0, used)
        }
        Solver::CemS => {
            let d = sample_dataset_with_budget(model, n as usize, seed, cfg.sample_budget)?;
            let used = d.samples.len() as u64;
            (cem_s_solve(&d, model)?.0, used)
        }
        Solver::Ttm => {
            let sel = ttm_select_capped(m, cfg.root, &truth.policies, n, seed, DEFAULT_NODE_CAP)?;
            let edges = node_count(m.num_actions, m.horizon.finite().unwrap_or(0)).to_u64().unwrap_or(u64::MAX) - 1;
            (truth.policies[sel.index].clone(), n.saturating_mul(edges))
        }
    };
    let v = evaluate_policy(m, &policy, &opts)?;
    let values = v.initial().to_vec();
    let states: Vec<usize> = match cfg.solver {
        Solver::Ttm => vec![cfg.root],
        _ => (0..m.num_states).collect(),
    };
    let gap = states
        .iter()
        .map(|&s| truth.optimal[s] - values[s])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TrialRecord {
        trial,
        seed,
        n,
        samples_used,
        policy_digest: policy.digest(),
        values,
        gap,
        mistake: gap > cfg.eps + MISTAKE_SLACK,
    })
}

fn trial_model(m: &MdpSpec<f64>, solver: Solver) -> Result<MdpSpec<f64>> {
    match solver {
        Solver::CemNs => m.to_nonstationary(),
        Solver::CemS if m.kind != Kind::Stationary => Err(Error::InvalidParameter(
            "CEM-S trials need a stationary MDP".into(),
        )),
        _ => Ok(m.clone()),
    }
}

fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn run_pac_trials(m: &MdpSpec<f64>, cfg: &TrialConfig) -> Result<TrialReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    pac_params(m, cfg).validate()?;
    m.ensure_valid()?;
    let model = trial_model(m, cfg.solver)?;
    let n = resolve_n(m, cfg)?;
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    if cfg.solver != Solver::Ttm {
        let total = n as u128 * model.num_tuples() as u128;
        if total > cfg.sample_budget as u128 {
            return Err(too_big("samples per tuple", n, cfg.sample_budget));
        }
    }
    let opts = SolveOptions::default();
    let truth = truth(m, cfg, &opts)?;
    let records = with_pool(cfg.threads, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| one_trial(m, &model, cfg, &truth, n, i))
            .collect::<Result<Vec<_>>>()
    })??;
    let mistakes = records.iter().filter(|r| r.mistake).count() as u64;
    let (wilson_low, wilson_high) = wilson_interval(mistakes, cfg.trials, Z95);
    let mean_gap = records.iter().map(|r| r.gap).sum::<f64>() / cfg.trials as f64;
    let max_gap = records.iter().map(|r| r.gap).fold(f64::NEG_INFINITY, f64::max);
    Ok(TrialReport {
        solver: cfg.solver,
        mdp_digest: m.digest(),
        eps: cfg.eps,
        delta: cfg.delta,
        n,
        trials: cfg.trials,
        base_seed: cfg.base_seed,
        records,
        mistakes,
        mistake_rate: mistakes as f64 / cfg.trials as f64,
        wilson_low,
        wilson_high,
        mean_gap,
        max_gap,
    })
}

/// One grid point of a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub solver: Solver,
    pub eps: f64,
    pub delta: f64,
    pub n: Option<u64>,
}

impl SweepPoint {
    fn key(&self) -> (String, String, String, String) {
        (
            self.solver.name().to_string(),
            self.eps.to_string(),
            self.delta.to_string(),
            self.n.map_or_else(|| "formula".to_string(), |n| n.to_string()),
        )
    }
}

/// Cartesian product in solver, eps, delta, n order.
pub fn grid(solvers: &[Solver], eps: &[f64], delta: &[f64], n: &[Option<u64>]) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for &solver in solvers {
        for &e in eps {
            for &d in delta {
                for &k in n {
                    out.push(SweepPoint {
                        solver,
                        eps: e,
                        delta: d,
                        n: k,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub solver: String,
    pub eps: String,
    pub delta: String,
    pub n_requested: String,
    pub n: u64,
    pub trials: u64,
    pub base_seed: u64,
    pub mistakes: u64,
    pub mistake_rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
}

impl SweepRow {
    fn key(&self) -> (String, String, String, String) {
        (self.solver.clone(), self.eps.clone(), self.delta.clone(), self.n_requested.clone())
    }

    pub fn from_report(point: &SweepPoint, r: &TrialReport) -> Self {
        let (solver, eps, delta, n_requested) = point.key();
        SweepRow {
            solver,
            eps,
            delta,
            n_requested,
            n: r.n,
            trials: r.trials,
            base_seed: r.base_seed,
            mistakes: r.mistakes,
            mistake_rate: r.mistake_rate,
            wilson_low: r.wilson_low,
            wilson_high: r.wilson_high,
            mean_gap: r.mean_gap,
            max_gap: r.max_gap,
        }
    }
}

/// Header comment identifying the tool version and the fixed part of the config.
pub fn sweep_header(m: &MdpSpec<f64>, base: &TrialConfig) -> String {
    let fixed = serde_json::json!({
        "mdp": m.digest(),
        "trials": base.trials,
        "base_seed": base.base_seed,
        "root": base.root,
        "sample_budget": base.sample_budget,
    });
    let digest = Sha256::digest(fixed.to_string().as_bytes());
    format!(
        "# {SWEEP_SCHEMA} tool={} config={}",
        env!("CARGO_PKG_VERSION"),
        hex::encode(&digest[..8])
    )
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<SweepRow>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let first = text.lines().next().unwrap_or("");
    if first != header {
        return Err(Error::Format(format!(
            "{} was written by a different sweep configuration ({first:?})",
            path.display()
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(Error::from)
}

fn write_rows(path: &Path, header: &str, rows: &[SweepRow]) -> Result<()> {
    let mut body = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut body);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let tmp = path.with_extension("csv.partial");
    {
        let mut f = fs::File::create(&tmp)?;
        writeln!(f, "{header}")?;
        f.write_all(&body)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Known rows in grid order, then rows from other grids in key order.
fn ordered(points: &[SweepPoint], rows: &BTreeMap<(String, String, String, String), SweepRow>) -> Vec<SweepRow> {
    let keys: std::collections::BTreeSet<_> = points.iter().map(SweepPoint::key).collect();
    let mut out: Vec<SweepRow> = points.iter().filter_map(|p| rows.get(&p.key()).cloned()).collect();
    out.extend(rows.values().filter(|r| !keys.contains(&r.key())).cloned());
    out
}

/// Runs every missing grid point, rewriting `path` atomically after each one.
/// Rows already present (same header, same key) are kept as they are.
pub fn sweep(m: &MdpSpec<f64>, base: &TrialConfig, points: &[SweepPoint], path: &Path) -> Result<Vec<SweepRow>> {
    let header = sweep_header(m, base);
    let mut rows: BTreeMap<_, SweepRow> = read_rows(path, &header)?
        .into_iter()
        .map(|r| (r.key(), r))
        .collect();
    for point in points {
        if rows.contains_key(&point.key()) {
            continue;
        }
        let cfg = TrialConfig {
            solver: point.solver,
            eps: point.eps,
            delta: point.delta,
            n_override: point.n,
            ..base.clone()
        };
        let report = run_pac_trials(m, &cfg)?;
        rows.insert(point.key(), SweepRow::from_report(point, &report));
        write_rows(path, &header, &ordered(points, &rows))?;
    }
    write_rows(path, &header, &ordered(points, &rows))?;
    Ok(points.iter().map(|p| rows[&p.key()].clone()).collect())
}
