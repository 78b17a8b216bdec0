//! Verification campaigns: every identity and bound the library relies on,
//! checked against enumeration, exact arithmetic or Monte Carlo.
//!
//! Each check yields a [`CheckResult`] with a worst-case `metric` that must
//! not exceed `tolerance`. Errors (including cap violations) are recorded on
//! the result instead of aborting the suite. Every reduction runs over fixed
//! chunks merged in order, so results do not depend on the thread count.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bounds::{biased_fraction_bound, hoeffding_dep_tail};
use crate::cem::{build_empirical_ns, build_empirical_s, truncate_horizon};
use crate::dp::{evaluate_policy, optimal_policy, PolicyIter, SolveOptions, DEFAULT_POLICY_CAP};
use crate::error::{Error, Result};
use crate::harness::{run_pac_trials, Solver, TrialConfig};
use crate::lower_bound::{
    build_family_member, chernoff_event_probability, closed_form_value, deviation, exact_geometric_value,
    gap_certificate, log_likelihood_ratio, log_theta, sample_floor, LowerBoundFamily, Member, C1_PRIME, C2_PRIME,
};
use crate::mdp::{random_mdp, GenSpec, Horizon, Kind, MdpSpec};
use crate::policy::{Policy, ValueTable};
use crate::precise::rational;
use crate::sampling::{sample_dataset_with_budget, tuple_stream, Dataset, DEFAULT_SAMPLE_BUDGET};
use crate::scalar::Scalar;
use crate::ttm::{build_tree_indexed, eval_policy_on_tree, DEFAULT_NODE_CAP};
use crate::worlds::{
    average_over_worlds, batch_decomposition_check, biased_fraction_exact, chunked_fold, count_batches,
    count_batches_containing, count_batches_enumerated, count_unbiased, count_worlds, distinct_induced_enumerated,
    EnumerationCaps, World, WorldDims, WorldFilter, WorldModel,
};

/// Seed of the small reference MDP used by the PAC and trajectory-tree checks.
pub const PAC_MDP_SEED: u64 = 2024;

/// Resource limits, loadable from JSON. Missing fields take the defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Caps {
    pub worlds: u64,
    pub batches: u64,
    pub policies: u64,
    pub tree_nodes: u64,
    pub sample_budget: u64,
}

impl Default for Caps {
    fn default() -> Self {
        let e = EnumerationCaps::default();
        Caps {
            worlds: e.worlds,
            batches: e.batches,
            policies: DEFAULT_POLICY_CAP,
            tree_nodes: DEFAULT_NODE_CAP,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
        }
    }
}

impl Caps {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn enumeration(&self) -> EnumerationCaps {
        EnumerationCaps {
            worlds: self.worlds,
            batches: self.batches,
        }
    }
}

/// Families of checks selectable by tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Unbiasedness,
    Consistency,
    Batches,
    Counting,
    Truncation,
    BiasedFraction,
    Hoeffding,
    LowerBound,
    Floor,
    Ttm,
    Pac,
}

impl Scope {
    pub const ALL: [Scope; 11] = [
        Scope::Unbiasedness,
        Scope::Consistency,
        Scope::Batches,
        Scope::Counting,
        Scope::Truncation,
        Scope::BiasedFraction,
        Scope::Hoeffding,
        Scope::LowerBound,
        Scope::Floor,
        Scope::Ttm,
        Scope::Pac,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Scope::Unbiasedness => "unbiasedness",
            Scope::Consistency => "consistency",
            Scope::Batches => "batches",
            Scope::Counting => "counting",
            Scope::Truncation => "truncation",
            Scope::BiasedFraction => "biased-fraction",
            Scope::Hoeffding => "hoeffding",
            Scope::LowerBound => "lower-bound",
            Scope::Floor => "floor",
            Scope::Ttm => "ttm",
            Scope::Pac => "pac",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Scope::ALL
            .into_iter()
            .find(|s| s.tag() == text)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown check scope {text:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy or violation; passing means `metric <= tolerance`.
    pub metric: f64,
    pub tolerance: f64,
    pub detail: Value,
    pub error: Option<String>,
}

impl CheckResult {
    pub fn measured(name: &str, metric: f64, tolerance: f64, detail: Value) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: metric <= tolerance,
            metric,
            tolerance,
            detail,
            error: None,
        }
    }

    fn errored(name: &str, tolerance: f64, e: &Error) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: false,
            metric: f64::NAN,
            tolerance,
            detail: Value::Null,
            error: Some(e.to_string()),
        }
    }
}

fn guarded(name: &str, tolerance: f64, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult::errored(name, tolerance, &e))
}

/// Campaign sizes. `full` matches the acceptance targets, `quick` is for smoke runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSizes {
    pub consistency_instances: usize,
    pub truncation_instances: usize,
    pub unbiasedness_datasets: u64,
    pub hoeffding_replications: u64,
    pub ttm_trees: u64,
    pub pac_trials: u64,
}

impl SuiteSizes {
    pub fn full() -> Self {
        SuiteSizes {
            consistency_instances: 100,
            truncation_instances: 50,
            unbiasedness_datasets: 100_000,
            hoeffding_replications: 100_000,
            ttm_trees: 100_000,
            pac_trials: 200,
        }
    }

    pub fn quick() -> Self {
        SuiteSizes {
            consistency_instances: 12,
            truncation_instances: 10,
            unbiasedness_datasets: 5_000,
            hoeffding_replications: 10_000,
            ttm_trees: 5_000,
            pac_trials: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

/// Runs every check in `scopes` (deduplicated, in tag order).
pub fn run_verification_suite(scopes: &[Scope], caps: &Caps, sizes: &SuiteSizes, seed: u64) -> SuiteReport {
    let mut selected = scopes.to_vec();
    selected.sort();
    selected.dedup();
    let mut checks = Vec::new();
    for scope in selected {
        match scope {
            Scope::Unbiasedness => {
                checks.push(check_unbiasedness_nonstationary(sizes.unbiasedness_datasets, seed));
                checks.push(check_unbiasedness_stationary(sizes.unbiasedness_datasets, seed));
            }
            Scope::Consistency => checks.push(check_consistency_campaign(sizes.consistency_instances, seed, caps)),
            Scope::Batches => checks.push(check_batch_campaign(seed, caps)),
            Scope::Counting => checks.push(check_counting(4, 3, 2)),
            Scope::Truncation => checks.push(check_truncation(sizes.truncation_instances, seed, caps)),
            Scope::BiasedFraction => {
                checks.push(check_biased_fraction(seed, caps));
                checks.push(check_biased_fraction_formula(caps));
            }
            Scope::Hoeffding => checks.push(check_dependent_hoeffding(sizes.hoeffding_replications, seed)),
            Scope::LowerBound => {
                checks.push(check_family_closed_form());
                checks.push(check_gap_grid());
                checks.push(check_gap_monotone());
                checks.push(check_chernoff_grid(seed));
                checks.push(check_likelihood_literal());
                checks.push(check_likelihood_supported());
            }
            Scope::Floor => checks.push(check_sample_floor()),
            Scope::Ttm => {
                checks.push(check_ttm_unbiased(sizes.ttm_trees, seed, caps));
                checks.push(check_pac_rate(Solver::Ttm, sizes.pac_trials, seed, caps));
            }
            Scope::Pac => {
                checks.push(check_pac_rate(Solver::CemNs, sizes.pac_trials, seed, caps));
                checks.push(check_pac_monotone(&[4, 16, 64, 256], sizes.pac_trials, seed, caps));
            }
        }
    }
    SuiteReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

// ---------------------------------------------------------------------------
// Worlds against the empirical model

/// `max |V^pi_X - V^pi_{M-hat}|` over every enumerable policy of `empirical`.
/// Returns the discrepancy and the number of policies checked.
pub fn consistency_discrepancy(model: &WorldModel<f64>, empirical: &MdpSpec<f64>, caps: &Caps) -> Result<(f64, u64)> {
    let policies: Vec<Policy> = PolicyIter::new(
        Kind::Nonstationary,
        empirical.num_states,
        empirical.num_actions,
        model.dims().slices,
        caps.policies,
    )?
    .collect();
    let over_worlds = average_over_worlds(model, &policies, WorldFilter::All, caps.worlds)?;
    let opts = SolveOptions::default();
    let mut worst = 0.0f64;
    for (pi, vx) in policies.iter().zip(&over_worlds) {
        let v = evaluate_policy(empirical, pi, &opts)?;
        worst = worst.max(vx.max_abs_diff(&v));
    }
    Ok((worst, policies.len() as u64))
}

/// A world model together with the empirical model its full world set must reproduce.
pub struct WorldInstance {
    pub label: String,
    pub model: WorldModel<f64>,
    /// `M-hat` (time-indexed) or `M-hat` truncated to `Hbar` steps (stationary).
    pub empirical: MdpSpec<f64>,
    /// The generating skeleton, truncated to `Hbar` steps when stationary.
    pub skeleton: MdpSpec<f64>,
}

/// Time-indexed instance: `n` samples per `(s, a, t)` of a random MDP.
pub fn nonstationary_instance(states: usize, actions: usize, horizon: usize, n: usize, seed: u64) -> Result<WorldInstance> {
    let m = random_mdp(&GenSpec {
        kind: Kind::Nonstationary,
        states,
        actions,
        horizon: Horizon::Finite(horizon),
        gamma: 1.0,
        seed,
        deterministic: false,
    })?;
    let d = sample_dataset_with_budget(&m, n, seed ^ 0x5eed, DEFAULT_SAMPLE_BUDGET)?;
    Ok(WorldInstance {
        label: format!("ns S={states} A={actions} H={horizon} N={n}"),
        model: WorldModel::nonstationary(&d, &m)?,
        empirical: build_empirical_ns(&d, &m)?.mdp,
        skeleton: m,
    })
}

/// Stationary instance: `n` pooled samples per `(s, a)` of a random
/// discounted MDP, read with `hbar` coordinates per pair.
pub fn stationary_instance(states: usize, actions: usize, hbar: usize, n: usize, seed: u64) -> Result<WorldInstance> {
    let mut rng = tuple_stream(seed, 0);
    let gamma = 0.5 + 0.45 * rng.random::<f64>();
    let m = random_mdp(&GenSpec {
        kind: Kind::Stationary,
        states,
        actions,
        horizon: Horizon::Infinite,
        gamma,
        seed,
        deterministic: false,
    })?;
    let d = sample_dataset_with_budget(&m, n, seed ^ 0x5eed, DEFAULT_SAMPLE_BUDGET)?;
    let skeleton = m.with_horizon(Horizon::Finite(hbar))?;
    Ok(WorldInstance {
        label: format!("s S={states} A={actions} Hbar={hbar} N={n}"),
        model: WorldModel::stationary(&d, &skeleton, hbar)?,
        empirical: build_empirical_s(&d, &m)?.mdp.with_horizon(Horizon::Finite(hbar))?,
        skeleton,
    })
}

/// Shapes `(stationary, S, A, slices, N)` with at most a million worlds.
const CONSISTENCY_SHAPES: [(bool, usize, usize, usize, usize); 14] = [
    (false, 2, 2, 2, 2),
    (false, 2, 2, 2, 3),
    (false, 2, 2, 3, 3),
    (false, 2, 2, 2, 5),
    (false, 3, 2, 2, 2),
    (false, 3, 2, 2, 3),
    (false, 2, 1, 3, 4),
    (false, 1, 2, 3, 4),
    (false, 3, 1, 2, 9),
    (true, 2, 2, 2, 4),
    (true, 2, 2, 3, 3),
    (true, 2, 1, 3, 6),
    (true, 3, 2, 2, 3),
    (true, 2, 2, 2, 5),
];

pub fn consistency_instance(i: usize, seed: u64) -> Result<WorldInstance> {
    let (st, s, a, h, n) = CONSISTENCY_SHAPES[i % CONSISTENCY_SHAPES.len()];
    let seed = seed.wrapping_add(1000 + i as u64);
    if st {
        stationary_instance(s, a, h, n, seed)
    } else {
        nonstationary_instance(s, a, h, n, seed)
    }
}

pub const CONSISTENCY_TOLERANCE: f64 = 1e-9;

/// The full world set reproduces `M-hat` (both readings) on `instances` random instances.
pub fn check_consistency_campaign(instances: usize, seed: u64, caps: &Caps) -> CheckResult {
    let name = "consistency";
    guarded(name, CONSISTENCY_TOLERANCE, || {
        let mut worst = 0.0f64;
        let mut policies = 0u64;
        let mut worlds = 0u64;
        for i in 0..instances {
            let inst = consistency_instance(i, seed)?;
            let (d, p) = consistency_discrepancy(&inst.model, &inst.empirical, caps)?;
            worst = worst.max(d);
            policies += p;
            worlds += count_worlds(inst.model.dims()).to_u64().unwrap_or(u64::MAX);
        }
        Ok(CheckResult::measured(
            name,
            worst,
            CONSISTENCY_TOLERANCE,
            json!({"instances": instances, "policies": policies, "worlds": worlds}),
        ))
    })
}

pub const BATCH_TOLERANCE: f64 = 1e-12;

/// Every instance with `N <= 3` and at most three coordinates, both readings.
pub fn batch_instances(seed: u64) -> Result<Vec<WorldInstance>> {
    let mut shapes = Vec::new();
    for s in 1..=3usize {
        for a in 1..=3usize {
            for h in 1..=3usize {
                if s * a * h <= 3 {
                    shapes.push((s, a, h));
                }
            }
        }
    }
    let mut out = Vec::new();
    for (j, &(s, a, h)) in shapes.iter().enumerate() {
        for n in 1..=3usize {
            let sd = seed.wrapping_add((j * 10 + n) as u64);
            out.push(nonstationary_instance(s, a, h, n, sd)?);
            if n >= h {
                out.push(stationary_instance(s, a, h, n, sd)?);
            }
        }
    }
    Ok(out)
}

/// World averages equal batch averages on every small instance and policy.
pub fn check_batch_campaign(seed: u64, caps: &Caps) -> CheckResult {
    let name = "batches";
    guarded(name, BATCH_TOLERANCE, || {
        let mut worst = 0.0f64;
        let mut checked = 0u64;
        let instances = batch_instances(seed)?;
        for inst in &instances {
            let dims = inst.model.dims();
            let policies = PolicyIter::new(Kind::Nonstationary, dims.num_states, dims.num_actions, dims.slices, caps.policies)?;
            for pi in policies {
                worst = worst.max(batch_decomposition_check(&inst.model, &pi, &caps.enumeration())?);
                checked += 1;
            }
        }
        Ok(CheckResult::measured(
            name,
            worst,
            BATCH_TOLERANCE,
            json!({"instances": instances.len(), "policy_checks": checked}),
        ))
    })
}

// ---------------------------------------------------------------------------
// Counting by generate-and-filter

fn all_worlds(dims: &WorldDims) -> Vec<Vec<u32>> {
    let k = dims.coordinates();
    let total = (dims.n as u64).pow(k as u32);
    (0..total)
        .map(|mut v| {
            let mut x = vec![0u32; k];
            for c in (0..k).rev() {
                x[c] = (v % dims.n as u64) as u32 + 1;
                v /= dims.n as u64;
            }
            x
        })
        .collect()
}

/// A world with a repeated index inside one pair's block.
fn repeats_in_block(dims: &WorldDims, x: &[u32]) -> bool {
    let b = dims.slices;
    dims.stationary
        && x.chunks(b).any(|blk| (0..b).any(|i| (i + 1..b).any(|j| blk[i] == blk[j])))
}

fn disjoint(dims: &WorldDims, x: &[u32], y: &[u32]) -> bool {
    if !dims.stationary {
        return x.iter().zip(y).all(|(a, b)| a != b);
    }
    let b = dims.slices;
    x.chunks(b).zip(y.chunks(b)).all(|(bx, by)| bx.iter().all(|v| !by.contains(v)))
}

/// Counts every size-`m` set of pairwise disjoint worlds from `pool`, and
/// for each pool member how many of those sets contain it.
fn count_disjoint_sets(dims: &WorldDims, pool: &[Vec<u32>], m: usize) -> (u64, Vec<u64>) {
    fn rec(
        dims: &WorldDims,
        pool: &[Vec<u32>],
        m: usize,
        start: usize,
        chosen: &mut Vec<usize>,
        total: &mut u64,
        per: &mut [u64],
    ) {
        if chosen.len() == m {
            *total += 1;
            for &c in chosen.iter() {
                per[c] += 1;
            }
            return;
        }
        for i in start..pool.len() {
            if chosen.iter().all(|&c| disjoint(dims, &pool[c], &pool[i])) {
                chosen.push(i);
                rec(dims, pool, m, i + 1, chosen, total, per);
                chosen.pop();
            }
        }
    }
    let mut total = 0;
    let mut per = vec![0; pool.len()];
    rec(dims, pool, m, 0, &mut Vec::new(), &mut total, &mut per);
    (total, per)
}

/// Enumerated counts against the closed forms, exactly, for `N <= n_max`,
/// `k <= k_max` and stationary `Hbar <= hbar_max` dividing `N`.
pub fn check_counting(n_max: usize, k_max: usize, hbar_max: usize) -> CheckResult {
    let name = "counting";
    guarded(name, 0.0, || {
        let mut cases = Vec::new();
        for k in 1..=k_max {
            for n in 1..=n_max {
                cases.push(WorldDims::nonstationary(1, 1, k, n));
            }
        }
        for hbar in 1..=hbar_max {
            for pairs in 1..=k_max / hbar {
                for n in (hbar..=n_max).filter(|n| n % hbar == 0) {
                    cases.push(WorldDims::stationary(pairs, 1, hbar, n));
                }
            }
        }
        let mut mismatches = Vec::new();
        for dims in &cases {
            let worlds = all_worlds(dims);
            let pool: Vec<Vec<u32>> = worlds.iter().filter(|x| !repeats_in_block(dims, x)).cloned().collect();
            let (total, per) = count_disjoint_sets(dims, &pool, dims.batch_size());
            let mut compare = |what: &str, got: BigUint, want: BigUint| {
                if got != want {
                    mismatches.push(json!({"dims": dims, "what": what, "enumerated": got.to_string(), "closed_form": want.to_string()}));
                }
            };
            compare("worlds", BigUint::from(worlds.len()), count_worlds(dims));
            if dims.stationary {
                compare("unbiased", BigUint::from(pool.len()), count_unbiased(dims));
            }
            compare("batches", BigUint::from(total), count_batches(dims));
            let want_x = count_batches_containing(dims);
            for c in &per {
                compare("batches containing x", BigUint::from(*c), want_x.clone());
            }
            let x = World::new(pool[0].clone());
            let (space_len, space_x) = count_batches_enumerated(dims, &x, u64::MAX)?;
            compare("batch space", BigUint::from(space_len), BigUint::from(total));
            compare("batch space containing x", BigUint::from(space_x), BigUint::from(per[0]));
        }
        Ok(CheckResult::measured(
            name,
            mismatches.len() as f64,
            0.0,
            json!({"cases": cases.len(), "mismatches": mismatches}),
        ))
    })
}

// ---------------------------------------------------------------------------
// Unbiasedness of single worlds

/// Per-cell running sums of values and squares.
#[derive(Clone)]
struct Moments {
    n: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(width: usize) -> Self {
        Moments {
            n: 0,
            sum: vec![0.0; width],
            sum_sq: vec![0.0; width],
        }
    }

    fn add(&mut self, v: &[f64]) {
        self.n += 1;
        for (i, x) in v.iter().enumerate() {
            self.sum[i] += x;
            self.sum_sq[i] += x * x;
        }
    }

    fn merge(&mut self, o: Moments) {
        self.n += o.n;
        for i in 0..self.sum.len() {
            self.sum[i] += o.sum[i];
            self.sum_sq[i] += o.sum_sq[i];
        }
    }

    /// Largest `|mean - truth| / SE` over cells; cells with zero spread must match to 1e-12.
    fn worst_z(&self, truth: &[f64]) -> (f64, f64) {
        let n = self.n as f64;
        let mut worst_z = 0.0f64;
        let mut worst_abs = 0.0f64;
        for i in 0..self.sum.len() {
            let mean = self.sum[i] / n;
            let var = ((self.sum_sq[i] / n - mean * mean) * n / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            let diff = (mean - truth[i]).abs();
            worst_abs = worst_abs.max(diff);
            let z = if se > 1e-15 {
                diff / se
            } else if diff <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
        (worst_z, worst_abs)
    }
}

pub const Z_TOLERANCE: f64 = 4.0;

/// Monte Carlo over datasets: the mean of `V^pi_x` for each fixed world
/// against `truth`, per `(s, t)`.
fn world_mean_check(
    name: &str,
    datasets: u64,
    seed: u64,
    truth: &ValueTable<f64>,
    codes: &[&str],
    pi: &Policy,
    build: impl Fn(u64) -> Result<WorldModel<f64>> + Sync,
) -> Result<CheckResult> {
    let worlds: Vec<World> = codes.iter().map(|c| World::parse(c)).collect::<Result<_>>()?;
    let width = truth.values.len();
    let acc = chunked_fold(
        datasets,
        |lo, hi| -> Result<Vec<Moments>> {
            let mut acc = vec![Moments::new(width); worlds.len()];
            for r in lo..hi {
                let model = build(seed.wrapping_add(r))?;
                for (w, x) in worlds.iter().enumerate() {
                    acc[w].add(&model.world_value(x, pi)?.values);
                }
            }
            Ok(acc)
        },
        |a, b| {
            if let (Ok(a), Ok(b)) = (a.as_mut(), b) {
                for (x, y) in a.iter_mut().zip(b) {
                    x.merge(y);
                }
            } else if a.is_ok() {
                *a = Err(Error::InvalidParameter("dataset replicate failed".into()));
            }
        },
    )
    .ok_or(Error::InvalidParameter("no datasets requested".into()))??;
    let mut worst_z = 0.0f64;
    let mut per_world = Vec::new();
    for (code, m) in codes.iter().zip(&acc) {
        let (z, abs) = m.worst_z(&truth.values);
        worst_z = worst_z.max(z);
        per_world.push(json!({"world": code, "max_z": z, "max_abs_diff": abs}));
    }
    Ok(CheckResult::measured(
        name,
        worst_z,
        Z_TOLERANCE,
        json!({"datasets": datasets, "worlds": per_world}),
    ))
}

/// A fixed 2-state 2-action model used by the single-world checks.
pub fn unbiasedness_mdp(kind: Kind) -> Result<MdpSpec<f64>> {
    let (horizon, gamma, seed) = match kind {
        Kind::Nonstationary => (Horizon::Finite(2), 1.0, 77),
        Kind::Stationary => (Horizon::Infinite, 0.6, 78),
    };
    random_mdp(&GenSpec {
        kind,
        states: 2,
        actions: 2,
        horizon,
        gamma,
        seed,
        deterministic: false,
    })
}

/// Time-indexed: `E[V^pi_x] = V^pi` for three fixed worlds, `N = 3`.
pub fn check_unbiasedness_nonstationary(datasets: u64, seed: u64) -> CheckResult {
    let name = "unbiasedness.time-indexed";
    guarded(name, Z_TOLERANCE, || {
        let m = unbiasedness_mdp(Kind::Nonstationary)?;
        let opts = SolveOptions::default();
        let (pi, _) = optimal_policy(&m, &opts)?;
        let truth = evaluate_policy(&m, &pi, &opts)?;
        world_mean_check(name, datasets, seed, &truth, &["11111111", "12312312", "32132131"], &pi, |s| {
            let d = sample_dataset_with_budget(&m, 3, s, DEFAULT_SAMPLE_BUDGET)?;
            WorldModel::nonstationary(&d, &m)
        })
    })
}

/// Stationary: `E[V^pi_x] = V^pi` on the two-step truncation for three unbiased worlds, `N = 4`.
pub fn check_unbiasedness_stationary(datasets: u64, seed: u64) -> CheckResult {
    let name = "unbiasedness.stationary";
    guarded(name, Z_TOLERANCE, || {
        let m = unbiasedness_mdp(Kind::Stationary)?;
        let truncated = m.with_horizon(Horizon::Finite(2))?;
        let opts = SolveOptions::default();
        let (pi, _) = optimal_policy(&truncated, &opts)?;
        let truth = evaluate_policy(&truncated, &pi, &opts)?;
        world_mean_check(name, datasets, seed, &truth, &["12342143", "21433412", "41232314"], &pi, |s| {
            let d = sample_dataset_with_budget(&m, 4, s, DEFAULT_SAMPLE_BUDGET)?;
            WorldModel::stationary(&d, &truncated, 2)
        })
    })
}

// ---------------------------------------------------------------------------
// Truncation

/// `V^pi` of a stationary policy on a discounted model, solved exactly.
pub fn exact_discounted_value(m: &MdpSpec<BigRational>, pi: &Policy) -> Result<Vec<BigRational>> {
    if m.horizon != Horizon::Infinite || m.kind != Kind::Stationary || pi.kind != Kind::Stationary {
        return Err(Error::InvalidParameter("exact solve needs a discounted stationary model and policy".into()));
    }
    let n = m.num_states;
    // Augmented system (I - gamma P_pi) v = r_pi.
    let mut rows: Vec<Vec<BigRational>> = (0..n)
        .map(|s| {
            let a = pi.action(s, 0);
            let mut row: Vec<BigRational> = (0..n)
                .map(|j| {
                    let diag = if j == s { BigRational::one() } else { BigRational::zero() };
                    diag - &m.discount * m.prob(s, a, 0, j)
                })
                .collect();
            row.push(m.reward(s, a, 0).clone());
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !rows[r][col].is_zero())
            .ok_or_else(|| Error::InvalidMdp(vec![]))?;
        rows.swap(col, pivot);
        let p = rows[col][col].clone();
        for v in rows[col].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..n {
            if r != col && !rows[r][col].is_zero() {
                let f = rows[r][col].clone();
                for c in col..=n {
                    let sub = &f * &rows[col][c];
                    rows[r][c] -= sub;
                }
            }
        }
    }
    Ok(rows.into_iter().map(|mut r| r.pop().expect("augmented column")).collect())
}

pub const TRUNCATION_SLACK: f64 = 1e-12;

/// Largest violation of `V - eps/4 <= V_Hbar(., 0) <= V` over states and
/// stationary policies, exactly, on `m` truncated to `hbar` steps.
fn truncation_violation(m: &MdpSpec<BigRational>, hbar: usize, eps: f64, caps: &Caps) -> Result<(BigRational, u64)> {
    let quarter = rational(eps)? / BigRational::from_integer(4.into());
    let truncated = m.with_horizon(Horizon::Finite(hbar))?;
    let opts = SolveOptions::default();
    let mut worst = BigRational::zero();
    let mut count = 0;
    for pi in PolicyIter::new(Kind::Stationary, m.num_states, m.num_actions, 1, caps.policies)? {
        let v = exact_discounted_value(m, &pi)?;
        let vh = evaluate_policy(&truncated, &pi, &opts)?;
        for (s, full) in v.iter().enumerate() {
            let short = vh.get(s, 0);
            let above = short - full;
            let below = full - &quarter - short;
            worst = worst.max(above).max(below);
        }
        count += 1;
    }
    Ok((worst, count))
}

/// Both truncation chains on random discounted MDPs and their empirical models.
pub fn check_truncation(instances: usize, seed: u64, caps: &Caps) -> CheckResult {
    let name = "truncation";
    guarded(name, TRUNCATION_SLACK, || {
        let mut worst = f64::NEG_INFINITY;
        let mut policies = 0u64;
        let mut horizons = Vec::new();
        for i in 0..instances {
            let sd = seed.wrapping_add(5000 + i as u64);
            let mut rng = tuple_stream(sd, 1);
            let gamma = 0.5 + 0.45 * rng.random::<f64>();
            let states = 2 + (i % 2);
            let m = random_mdp(&GenSpec {
                kind: Kind::Stationary,
                states,
                actions: 2,
                horizon: Horizon::Infinite,
                gamma,
                seed: sd,
                deterministic: false,
            })?;
            let eps = m.v_max * (0.05 + 0.85 * rng.random::<f64>());
            let (_, hbar) = truncate_horizon(&m, eps)?;
            horizons.push(hbar);
            let exact = m.to_exact();
            let d = sample_dataset_with_budget(&m, 5, sd, caps.sample_budget)?;
            let empirical = build_empirical_s(&d, &exact)?.mdp;
            for model in [&exact, &empirical] {
                let (v, c) = truncation_violation(model, hbar, eps, caps)?;
                worst = worst.max(v.to_f64_lossy());
                policies += c;
            }
        }
        Ok(CheckResult::measured(
            name,
            worst.max(0.0),
            TRUNCATION_SLACK,
            json!({"instances": instances, "policy_checks": policies, "max_signed_violation": worst, "horizons": horizons}),
        ))
    })
}

// ---------------------------------------------------------------------------
// Biased worlds

/// Stationary shapes `(S, A, Hbar, N)` small enough to enumerate.
const BIASED_SHAPES: [(usize, usize, usize, usize); 8] = [
    (1, 1, 2, 3),
    (1, 2, 2, 3),
    (2, 1, 2, 4),
    (2, 2, 2, 3),
    (2, 2, 2, 4),
    (2, 1, 3, 4),
    (2, 1, 3, 6),
    (1, 1, 3, 9),
];

/// `|V_X - V_{X_unbiased}| <= |S||A| Hbar (Hbar - 1) v_max / N` for every
/// policy on every enumerable stationary instance.
pub fn check_biased_fraction(seed: u64, caps: &Caps) -> CheckResult {
    let name = "biased-fraction.bound";
    guarded(name, 0.0, || {
        let mut worst = f64::NEG_INFINITY;
        let mut checked = 0u64;
        for (j, &(s, a, h, n)) in BIASED_SHAPES.iter().enumerate() {
            for rep in 0..2u64 {
                let inst = stationary_instance(s, a, h, n, seed.wrapping_add(9000 + 10 * j as u64 + rep))?;
                let dims = *inst.model.dims();
                let bound = biased_fraction_bound(dims.pairs(), h, n, inst.skeleton.v_max)?;
                let policies: Vec<Policy> =
                    PolicyIter::new(Kind::Nonstationary, s, a, h, caps.policies)?.collect();
                let all = average_over_worlds(&inst.model, &policies, WorldFilter::All, caps.worlds)?;
                let unbiased = average_over_worlds(&inst.model, &policies, WorldFilter::Unbiased, caps.worlds)?;
                for (x, u) in all.iter().zip(&unbiased) {
                    worst = worst.max(x.max_abs_diff(u) - bound);
                    checked += 1;
                }
            }
        }
        Ok(CheckResult::measured(
            name,
            worst.max(0.0),
            0.0,
            json!({"policy_checks": checked, "max_signed_excess": worst}),
        ))
    })
}

pub const FRACTION_TOLERANCE: f64 = 1e-12;

/// `1 - (N! / (N - Hbar)!)^(|S||A|) / N^(|S||A| Hbar)` in floating point.
pub fn biased_fraction_formula(pairs: usize, hbar: usize, n: usize) -> f64 {
    if hbar > n {
        return 1.0;
    }
    let per_block: f64 = (0..hbar).map(|i| (n - i) as f64 / n as f64).product();
    1.0 - per_block.powi(pairs as i32)
}

/// Enumerated biased fraction against the exact closed form and the float formula.
pub fn check_biased_fraction_formula(caps: &Caps) -> CheckResult {
    let name = "biased-fraction.exact";
    guarded(name, FRACTION_TOLERANCE, || {
        let mut worst = 0.0f64;
        let mut exact_mismatch = 0u64;
        for &(s, a, h, n) in &BIASED_SHAPES {
            let dims = WorldDims::stationary(s, a, h, n);
            let total = count_worlds(&dims).to_u64().filter(|&t| t <= caps.worlds).ok_or(Error::CapExceeded {
                what: "worlds",
                required: count_worlds(&dims).to_string(),
                cap: caps.worlds,
            })?;
            let biased = all_worlds(&dims).iter().filter(|x| repeats_in_block(&dims, x)).count() as u64;
            let enumerated = BigRational::new(biased.into(), total.into());
            if enumerated != biased_fraction_exact(&dims) {
                exact_mismatch += 1;
            }
            let f = biased as f64 / total as f64;
            worst = worst.max((f - biased_fraction_formula(dims.pairs(), h, n)).abs());
        }
        let metric = if exact_mismatch > 0 { f64::INFINITY } else { worst };
        Ok(CheckResult::measured(
            name,
            metric,
            FRACTION_TOLERANCE,
            json!({"shapes": BIASED_SHAPES.len(), "exact_mismatches": exact_mismatch, "max_float_diff": worst}),
        ))
    })
}

// ---------------------------------------------------------------------------
// Hoeffding for dependent averages

/// Weights of the three groups.
const GROUP_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];

/// One replicate: a pool of `2m` uniforms; group `i` averages the window of
/// `m` draws starting at `i * m / 2`, so neighbouring groups share draws.
fn shared_sample_statistic(m: usize, rng: &mut impl Rng) -> f64 {
    let pool: Vec<f64> = (0..2 * m).map(|_| rng.random::<f64>()).collect();
    GROUP_WEIGHTS
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let start = i * m / 2;
            w * pool[start..start + m].iter().sum::<f64>() / m as f64
        })
        .sum()
}

pub const HOEFFDING_GRID_M: [u64; 3] = [4, 16, 64];
pub const HOEFFDING_GRID_GAP: [f64; 3] = [0.05, 0.1, 0.2];

/// Upper and lower empirical tails against `exp(-2 m gap^2)` plus 3 standard errors.
pub fn check_dependent_hoeffding(replications: u64, seed: u64) -> CheckResult {
    let name = "hoeffding";
    guarded(name, 0.0, || {
        let mut worst = f64::NEG_INFINITY;
        let mut points = Vec::new();
        for (gi, &m) in HOEFFDING_GRID_M.iter().enumerate() {
            let stats: Vec<f64> = chunked_fold(
                replications,
                |lo, hi| {
                    (lo..hi)
                        .map(|r| {
                            let mut rng = tuple_stream(seed.wrapping_add(gi as u64), r);
                            shared_sample_statistic(m as usize, &mut rng)
                        })
                        .collect::<Vec<_>>()
                },
                |a, b| a.extend(b),
            )
            .unwrap_or_default();
            for &gap in &HOEFFDING_GRID_GAP {
                let bound = hoeffding_dep_tail(m, gap, 0.0, 1.0)?;
                let r = replications as f64;
                for (side, hits) in [
                    ("upper", stats.iter().filter(|&&u| u >= 0.5 + gap).count()),
                    ("lower", stats.iter().filter(|&&u| u <= 0.5 - gap).count()),
                ] {
                    let p = hits as f64 / r;
                    let se = (p * (1.0 - p) / r).sqrt();
                    worst = worst.max(p - bound - 3.0 * se);
                    points.push(json!({"m": m, "gap": gap, "side": side, "tail": p, "bound": bound, "se": se}));
                }
            }
        }
        Ok(CheckResult::measured(
            name,
            worst.max(0.0),
            0.0,
            json!({"replications": replications, "points": points}),
        ))
    })
}

// ---------------------------------------------------------------------------
// Lower-bound family

pub const CLOSED_FORM_TOLERANCE: f64 = 1e-9;

/// Backward induction on every member against the closed form at each `(y, 0)`.
pub fn check_family_closed_form() -> CheckResult {
    let name = "lower-bound.closed-form";
    guarded(name, CLOSED_FORM_TOLERANCE, || {
        let opts = SolveOptions::default();
        let mut worst = 0.0f64;
        let mut points = 0;
        for h in [1usize, 2, 10, 201] {
            for p in [0.6, 0.9, 1.0 - 1.0 / h as f64] {
                for alpha in [0.0, (1.0 - p) / 4.0] {
                    let f = LowerBoundFamily {
                        initial_states: 2,
                        actions: 2,
                        p,
                        alpha,
                        horizon: h,
                    };
                    let mut members = vec![Member::Base];
                    members.extend((0..2).flat_map(|a| (0..2).map(move |b| Member::Modified(a, b))));
                    for member in members {
                        let m = build_family_member(&f, member)?;
                        let (_, v) = optimal_policy(&m, &opts)?;
                        for i in 0..2 {
                            for j in 0..2 {
                                let modified = member == Member::Modified(i, j);
                                let want = closed_form_value(&p, &alpha, h, modified);
                                worst = worst.max((v.get(f.secondary_state(i, j), 0) - want).abs());
                            }
                        }
                        points += 1;
                    }
                }
            }
        }
        Ok(CheckResult::measured(name, worst, CLOSED_FORM_TOLERANCE, json!({"members_checked": points})))
    })
}

pub const GAP_GRID_H: [usize; 3] = [201, 500, 1000];
pub const GAP_GRID_EPS: [f64; 3] = [0.1, 0.5, 0.9];

/// The exact gap exceeds `2 eps` on the whole grid. Metric counts failures.
pub fn check_gap_grid() -> CheckResult {
    let name = "lower-bound.gap";
    guarded(name, 0.0, || {
        let mut failures = 0;
        let mut points = Vec::new();
        for h in GAP_GRID_H {
            for eps in GAP_GRID_EPS {
                let c = gap_certificate(h, eps)?;
                if !c.holds {
                    failures += 1;
                }
                points.push(json!({"horizon": h, "eps": eps, "gap": c.gap, "holds": c.holds}));
            }
        }
        Ok(CheckResult::measured(name, failures as f64, 0.0, json!({"points": points})))
    })
}

/// The exact gap is strictly increasing in `alpha` at fixed `p` and `H`.
pub fn check_gap_monotone() -> CheckResult {
    let name = "lower-bound.monotone";
    guarded(name, 0.0, || {
        let mut failures = 0;
        for h in GAP_GRID_H {
            let hr = BigRational::from_integer(h.into());
            let p = BigRational::one() - hr.recip();
            let base = exact_geometric_value(&p, h);
            let step = (BigRational::one() - &p) / BigRational::from_integer(20.into());
            let mut prev = BigRational::zero();
            for i in 1..=10 {
                let alpha = &step * BigRational::from_integer(i.into());
                let gap = exact_geometric_value(&(&p + &alpha), h) - &base;
                if gap <= prev {
                    failures += 1;
                }
                prev = gap;
            }
        }
        Ok(CheckResult::measured(name, failures as f64, 0.0, json!({"horizons": GAP_GRID_H, "alpha_steps": 10})))
    })
}

pub const BERNOULLI_GRID_L: [u64; 6] = [1, 10, 100, 500, 1000, 2000];
pub const BERNOULLI_GRID_P: [f64; 4] = [0.6, 0.75, 0.9, 0.99];

/// `alpha` values tested at `p`: 0 and `(1 - p) / {8, 4, 2}`.
pub fn bernoulli_alphas(p: f64) -> [f64; 4] {
    let r = 1.0 - p;
    [0.0, r / 8.0, r / 4.0, r / 2.0]
}

/// Exact event probability is at least `1 - 2 theta / c2` on the grid.
pub fn check_chernoff_grid(seed: u64) -> CheckResult {
    let name = "lower-bound.chernoff";
    guarded(name, 0.0, || {
        let mut worst = f64::NEG_INFINITY;
        let mut points = 0;
        for l in BERNOULLI_GRID_L {
            for p in BERNOULLI_GRID_P {
                for alpha in bernoulli_alphas(p) {
                    let r = chernoff_event_probability(l, p, alpha, C1_PRIME, C2_PRIME, seed)?;
                    worst = worst.max(r.bound - r.probability);
                    points += 1;
                }
            }
        }
        Ok(CheckResult::measured(
            name,
            worst.max(0.0),
            0.0,
            json!({"points": points, "max_bound_minus_probability": worst}),
        ))
    })
}

/// Worst `ln(2 theta / c2) - ln ratio` over `s` in `lo(l, p, Delta)..=pl + Delta`.
fn likelihood_sweep(lower: impl Fn(u64, f64, f64) -> u64) -> Result<(f64, Vec<Value>)> {
    let mut worst = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for l in BERNOULLI_GRID_L {
        for p in BERNOULLI_GRID_P {
            for alpha in bernoulli_alphas(p) {
                let delta_cap = deviation(l, p, alpha, C1_PRIME, C2_PRIME);
                let hi = ((p * l as f64 + delta_cap).floor() as u64).min(l);
                let lo = lower(l, p, delta_cap);
                let log_bound = (2.0f64 / C2_PRIME).ln() + log_theta(l, p, alpha, C1_PRIME);
                let mut point_worst = f64::NEG_INFINITY;
                let mut at = lo;
                for s in lo..=hi {
                    let excess = log_bound - log_likelihood_ratio(s, l, p, alpha)?;
                    if excess > point_worst {
                        point_worst = excess;
                        at = s;
                    }
                }
                worst = worst.max(point_worst);
                if point_worst > 1e-12 {
                    violations.push(json!({"l": l, "p": p, "alpha": alpha, "s": at, "log_shortfall": point_worst}));
                }
            }
        }
    }
    Ok((worst, violations))
}

/// Ratio bound at every `s` from 0 to `pl + Delta`, as literally stated.
pub fn check_likelihood_literal() -> CheckResult {
    let name = "lower-bound.likelihood";
    guarded(name, 1e-12, || {
        let (worst, violations) = likelihood_sweep(|_, _, _| 0)?;
        Ok(CheckResult::measured(
            name,
            worst.max(0.0),
            1e-12,
            json!({"range": "0 <= s <= pl + Delta", "violating_points": violations.len(), "violations": violations}),
        ))
    })
}

/// Ratio bound on the two-sided window `pl - Delta <= s <= pl + Delta`.
pub fn check_likelihood_supported() -> CheckResult {
    let name = "lower-bound.likelihood-window";
    guarded(name, 1e-12, || {
        let (worst, violations) =
            likelihood_sweep(|l, p, d| ((p * l as f64 - d).ceil().max(0.0) as u64).min(l))?;
        Ok(CheckResult::measured(
            name,
            worst.max(0.0),
            1e-12,
            json!({"range": "pl - Delta <= s <= pl + Delta", "violating_points": violations.len(), "violations": violations}),
        ))
    })
}

/// Floor formula against an independent evaluation, cubic scaling and the `delta -> 1/6` limit.
pub fn check_sample_floor() -> CheckResult {
    let name = "floor";
    guarded(name, 1e-12, || {
        let r = sample_floor(201, 0.5, 0.1, 4)?;
        let want = 201f64.powi(3) / (64000.0 * 0.25) * (1.0f64 / 0.6).ln();
        let rel_formula = (r.per_pair - want).abs() / want;
        let rel_total = (r.total - 4.0 * r.per_pair).abs() / r.total;
        let mut worst = rel_formula.max(rel_total);
        for (h, eps, delta) in [(201usize, 0.5, 0.1), (250, 0.1, 0.01), (333, 0.9, 0.2)] {
            let a = sample_floor(h, eps, delta, 1)?.per_pair;
            let b = sample_floor(2 * h, eps, delta, 1)?.per_pair;
            worst = worst.max((b / a - 8.0).abs() / 8.0);
        }
        let edge = sample_floor(201, 0.5, 1.0 / 6.0 - 1e-9, 1)?.per_pair;
        let edge_ok = edge > 0.0 && edge < 1e-3;
        let metric = if edge_ok { worst } else { f64::INFINITY };
        Ok(CheckResult::measured(
            name,
            metric,
            1e-12,
            json!({"per_pair_201": r.per_pair, "near_one_sixth": edge}),
        ))
    })
}

// ---------------------------------------------------------------------------
// Trajectory trees and end-to-end PAC runs

/// The small time-indexed MDP used by the PAC and trajectory-tree checks:
/// 2 states, 2 actions, `H = 2`, rewards in `[0, 1]`, so `v_max = 2`.
pub fn pac_reference_mdp() -> Result<MdpSpec<f64>> {
    random_mdp(&GenSpec {
        kind: Kind::Nonstationary,
        states: 2,
        actions: 2,
        horizon: Horizon::Finite(2),
        gamma: 1.0,
        seed: PAC_MDP_SEED,
        deterministic: false,
    })
}

pub const PAC_DELTA: f64 = 0.2;

/// Mean tree value of every policy from every root against `V^pi(root, 0)`.
pub fn check_ttm_unbiased(trees: u64, seed: u64, caps: &Caps) -> CheckResult {
    let name = "ttm.unbiased";
    guarded(name, Z_TOLERANCE, || {
        let m = pac_reference_mdp()?;
        let h = m.horizon.finite().unwrap_or(0);
        let policies: Vec<Policy> = PolicyIter::new(Kind::Nonstationary, 2, 2, h, caps.policies)?.collect();
        let opts = SolveOptions::default();
        let truth: Vec<ValueTable<f64>> = policies
            .iter()
            .map(|pi| evaluate_policy(&m, pi, &opts))
            .collect::<Result<_>>()?;
        let mut worst = 0.0f64;
        for root in 0..m.num_states {
            let acc = chunked_fold(
                trees,
                |lo, hi| -> Result<Moments> {
                    let mut acc = Moments::new(policies.len());
                    for i in lo..hi {
                        let tree = build_tree_indexed(&m, root, seed, i, caps.tree_nodes)?;
                        let row: Vec<f64> = policies.iter().map(|pi| eval_policy_on_tree(&tree, &m, pi)).collect();
                        acc.add(&row);
                    }
                    Ok(acc)
                },
                |a, b| {
                    if let (Ok(a), Ok(b)) = (a.as_mut(), b) {
                        a.merge(b);
                    } else if a.is_ok() {
                        *a = Err(Error::InvalidParameter("tree build failed".into()));
                    }
                },
            )
            .ok_or(Error::InvalidParameter("no trees requested".into()))??;
            let target: Vec<f64> = truth.iter().map(|v| *v.get(root, 0)).collect();
            worst = worst.max(acc.worst_z(&target).0);
        }
        Ok(CheckResult::measured(
            name,
            worst,
            Z_TOLERANCE,
            json!({"trees": trees, "policies": policies.len()}),
        ))
    })
}

fn pac_config(solver: Solver, trials: u64, seed: u64, caps: &Caps, n: Option<u64>) -> Result<TrialConfig> {
    let m = pac_reference_mdp()?;
    Ok(TrialConfig {
        solver,
        eps: m.v_max / 2.0,
        delta: PAC_DELTA,
        n_override: n,
        trials,
        base_seed: seed,
        threads: 0,
        root: 0,
        sample_budget: caps.sample_budget,
    })
}

/// Mistake rate at the prescribed `N` (or tree count): the Wilson upper end must not exceed `delta`.
pub fn check_pac_rate(solver: Solver, trials: u64, seed: u64, caps: &Caps) -> CheckResult {
    let name = format!("pac.{}", solver.name());
    guarded(&name, PAC_DELTA, || {
        let m = pac_reference_mdp()?;
        let r = run_pac_trials(&m, &pac_config(solver, trials, seed, caps, None)?)?;
        Ok(CheckResult::measured(
            &name,
            r.wilson_high,
            PAC_DELTA,
            json!({"n": r.n, "trials": r.trials, "mistakes": r.mistakes, "rate": r.mistake_rate,
                   "wilson": [r.wilson_low, r.wilson_high], "mean_gap": r.mean_gap}),
        ))
    })
}

/// CEM-NS mistake rate is nonincreasing in `N` up to twice the wider Wilson width.
pub fn check_pac_monotone(ns: &[u64], trials: u64, seed: u64, caps: &Caps) -> CheckResult {
    let name = "pac.monotone";
    guarded(name, 0.0, || {
        let m = pac_reference_mdp()?;
        let mut rows = Vec::new();
        for &n in ns {
            let r = run_pac_trials(&m, &pac_config(Solver::CemNs, trials, seed, caps, Some(n))?)?;
            rows.push((n, r.mistake_rate, r.wilson_high - r.wilson_low));
        }
        let mut worst = f64::NEG_INFINITY;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let slack = 2.0 * rows[i].2.max(rows[j].2);
                worst = worst.max(rows[j].1 - rows[i].1 - slack);
            }
        }
        let table: Vec<Value> = rows
            .iter()
            .map(|(n, rate, w)| json!({"n": n, "rate": rate, "ci_width": w}))
            .collect();
        Ok(CheckResult::measured(name, worst.max(0.0), 0.0, json!({"trials": trials, "points": table})))
    })
}

// ---------------------------------------------------------------------------
// Checks on a single dataset

/// World checks available on one dataset and skeleton.
pub fn verify_dataset(d: &Dataset, skeleton: &MdpSpec<f64>, hbar: Option<usize>, scopes: &[Scope], caps: &Caps) -> Result<Vec<CheckResult>> {
    let (model, empirical) = match d.kind {
        Kind::Nonstationary => (WorldModel::nonstationary(d, skeleton)?, build_empirical_ns(d, skeleton)?.mdp),
        Kind::Stationary => {
            let hbar = hbar
                .or(skeleton.horizon.finite())
                .ok_or_else(|| Error::InvalidParameter("stationary data needs a truncated horizon".into()))?;
            let truncated = skeleton.with_horizon(Horizon::Finite(hbar))?;
            (
                WorldModel::stationary(d, &truncated, hbar)?,
                build_empirical_s(d, skeleton)?.mdp.with_horizon(Horizon::Finite(hbar))?,
            )
        }
    };
    let dims = *model.dims();
    let mut out = Vec::new();
    let mut selected = scopes.to_vec();
    selected.sort();
    selected.dedup();
    for scope in selected {
        match scope {
            Scope::Consistency => out.push(guarded("consistency", CONSISTENCY_TOLERANCE, || {
                let (worst, policies) = consistency_discrepancy(&model, &empirical, caps)?;
                Ok(CheckResult::measured(
                    "consistency",
                    worst,
                    CONSISTENCY_TOLERANCE,
                    json!({"policies": policies, "worlds": count_worlds(&dims).to_string()}),
                ))
            })),
            Scope::Batches => out.push(guarded("batches", BATCH_TOLERANCE, || {
                let mut worst = 0.0f64;
                for pi in PolicyIter::new(Kind::Nonstationary, dims.num_states, dims.num_actions, dims.slices, caps.policies)? {
                    worst = worst.max(batch_decomposition_check(&model, &pi, &caps.enumeration())?);
                }
                Ok(CheckResult::measured(
                    "batches",
                    worst,
                    BATCH_TOLERANCE,
                    json!({"batches": count_batches(&dims).to_string()}),
                ))
            })),
            Scope::Counting => out.push(guarded("counting", 0.0, || {
                let distinct = distinct_induced_enumerated(&model, caps.worlds)?;
                let mut detail = BTreeMap::new();
                detail.insert("worlds", count_worlds(&dims).to_string());
                detail.insert("distinct_induced", distinct.to_string());
                detail.insert("distinct_induced_closed_form", crate::worlds::distinct_induced_count(&model).to_string());
                detail.insert("batches", count_batches(&dims).to_string());
                detail.insert("batches_containing_x", count_batches_containing(&dims).to_string());
                let mismatch = BigUint::from(distinct) != crate::worlds::distinct_induced_count(&model);
                Ok(CheckResult::measured("counting", if mismatch { 1.0 } else { 0.0 }, 0.0, json!(detail)))
            })),
            Scope::BiasedFraction if dims.stationary => out.push(guarded("biased-fraction", 0.0, || {
                let policies: Vec<Policy> =
                    PolicyIter::new(Kind::Nonstationary, dims.num_states, dims.num_actions, dims.slices, caps.policies)?
                        .collect();
                let bound = biased_fraction_bound(dims.pairs(), dims.slices, dims.n, skeleton.v_max)?;
                let all = average_over_worlds(&model, &policies, WorldFilter::All, caps.worlds)?;
                let unbiased = average_over_worlds(&model, &policies, WorldFilter::Unbiased, caps.worlds)?;
                let worst = all.iter().zip(&unbiased).map(|(a, u)| a.max_abs_diff(u)).fold(0.0, f64::max);
                Ok(CheckResult::measured(
                    "biased-fraction",
                    (worst - bound).max(0.0),
                    0.0,
                    json!({"max_difference": worst, "bound": bound,
                           "biased_fraction": biased_fraction_exact(&dims).to_f64_lossy()}),
                ))
            })),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "check {:?} does not apply to this dataset",
                    other.tag()
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_caps() -> Caps {
        Caps::default()
    }

    #[test]
    fn scope_tags_round_trip() {
        for s in Scope::ALL {
            assert_eq!(Scope::parse(s.tag()).unwrap(), s);
        }
        assert!(Scope::parse("nope").is_err());
    }

    #[test]
    fn caps_fill_defaults() {
        let c = Caps::from_json(r#"{"worlds": 5}"#).unwrap();
        assert_eq!(c.worlds, 5);
        assert_eq!(c.batches, Caps::default().batches);
    }

    #[test]
    fn empty_scope_is_empty_report() {
        let r = run_verification_suite(&[], &small_caps(), &SuiteSizes::quick(), 0);
        assert!(r.checks.is_empty());
        assert!(r.passed);
    }

    #[test]
    fn counting_small() {
        let r = check_counting(3, 2, 2);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn consistency_few_instances() {
        let r = check_consistency_campaign(3, 1, &small_caps());
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn exact_discounted_matches_iteration() {
        let m = unbiasedness_mdp(Kind::Stationary).unwrap();
        let pi = Policy::constant(Kind::Stationary, 2, 1, 1);
        let exact = exact_discounted_value(&m.to_exact(), &pi).unwrap();
        let approx = evaluate_policy(&m, &pi, &SolveOptions::default()).unwrap();
        for s in 0..2 {
            assert!((exact[s].to_f64_lossy() - approx.get(s, 0)).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_small() {
        let r = check_truncation(3, 0, &small_caps());
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn fraction_formula_edges() {
        assert_eq!(biased_fraction_formula(3, 1, 5), 0.0);
        assert!((biased_fraction_formula(1, 2, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(biased_fraction_formula(1, 4, 3), 1.0);
    }

    #[test]
    fn cap_violation_is_reported_not_fatal() {
        let caps = Caps {
            worlds: 10,
            ..Caps::default()
        };
        let r = check_consistency_campaign(1, 0, &caps);
        assert!(!r.passed);
        assert!(r.error.unwrap().contains("cap"));
    }
}
