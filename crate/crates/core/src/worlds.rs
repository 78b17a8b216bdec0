//! Worlds: deterministic MDPs obtained by committing to one stored sample
//! per coordinate, their value averages, batches of mutually disjoint
//! worlds, and the counting identities that go with them.
//!
//! A world is a string over `[N]` (1-based) with one entry per coordinate.
//! Coordinates are laid out `s`-major, then `a`, then `t`, so coordinate
//! `(s, a, t)` sits at `(s * A + a) * slices + t`.
//!
//! In the time-indexed reading coordinate `(s, a, t)` selects a sample of
//! tuple `(s, a, t)`. In the stationary reading the `slices = Hbar`
//! coordinates of a pair `(s, a)` all select from the pooled samples of
//! `(s, a)`; a world is biased when one of those blocks repeats an index,
//! and two stationary worlds are disjoint when their index sets differ on
//! every block.

use std::collections::HashSet;
use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Horizon, Kind, MdpSpec};
use crate::policy::{Policy, ValueTable};
use crate::precise::from_uint;
use crate::sampling::Dataset;
use crate::scalar::{CompensatedSum, Scalar};

/// Work items per parallel chunk. Fixed so reductions are thread-count independent.
const CHUNK: u64 = 1 << 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationCaps {
    pub worlds: u64,
    pub batches: u64,
}

impl Default for EnumerationCaps {
    fn default() -> Self {
        EnumerationCaps {
            worlds: 10_000_000,
            batches: 1_000_000,
        }
    }
}

/// Shape of a world space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldDims {
    pub num_states: usize,
    pub num_actions: usize,
    /// `H` (time-indexed) or `Hbar` (stationary reading).
    pub slices: usize,
    /// Alphabet size: samples per tuple, or pooled samples per pair.
    pub n: usize,
    pub stationary: bool,
}

impl WorldDims {
    pub fn nonstationary(num_states: usize, num_actions: usize, horizon: usize, n: usize) -> Self {
        WorldDims {
            num_states,
            num_actions,
            slices: horizon,
            n,
            stationary: false,
        }
    }

    pub fn stationary(num_states: usize, num_actions: usize, hbar: usize, n: usize) -> Self {
        WorldDims {
            num_states,
            num_actions,
            slices: hbar,
            n,
            stationary: true,
        }
    }

    pub fn pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    /// `k`, the world length.
    pub fn coordinates(&self) -> usize {
        self.pairs() * self.slices
    }

    #[inline]
    pub fn coord(&self, s: usize, a: usize, t: usize) -> usize {
        (s * self.num_actions + a) * self.slices + t
    }

    /// Batch size: `N` time-indexed, `floor(N / Hbar)` stationary.
    pub fn batch_size(&self) -> usize {
        if self.stationary {
            self.n / self.slices
        } else {
            self.n
        }
    }

    /// Coordinates per disjointness block.
    fn block_len(&self) -> usize {
        if self.stationary {
            self.slices
        } else {
            1
        }
    }

    fn blocks(&self) -> usize {
        self.coordinates() / self.block_len()
    }

    pub fn check(&self, x: &World) -> Result<()> {
        if x.indices.len() != self.coordinates() {
            return Err(Error::Dimension(format!(
                "world has {} coordinates, expected {}",
                x.indices.len(),
                self.coordinates()
            )));
        }
        if let Some(bad) = x.indices.iter().find(|&&i| i == 0 || i as usize > self.n) {
            return Err(Error::OutOfRange(format!("world index {bad} outside [1, {}]", self.n)));
        }
        Ok(())
    }

    fn check_shape(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.slices == 0 || self.n == 0 {
            return Err(Error::Dimension("world dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// A string over `[N]`, stored 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct World {
    pub indices: Vec<u32>,
}

impl World {
    pub fn new(indices: Vec<u32>) -> Self {
        World { indices }
    }

    /// `i^k`.
    pub fn constant(i: u32, k: usize) -> Self {
        World { indices: vec![i; k] }
    }

    /// Digit string (`132121123211`) or comma-separated indices.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let indices: Option<Vec<u32>> = if text.contains(',') {
            text.split(',').map(|p| p.trim().parse::<u32>().ok()).collect()
        } else {
            text.chars().map(|c| c.to_digit(10)).collect()
        };
        match indices {
            Some(indices) if !indices.is_empty() => Ok(World { indices }),
            _ => Err(Error::Format(format!("bad world string {text:?}"))),
        }
    }

    fn zero_based(&self) -> Vec<u32> {
        self.indices.iter().map(|&i| i - 1).collect()
    }
}

impl fmt::Display for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.indices.iter().all(|&i| i <= 9) {
            for i in &self.indices {
                write!(f, "{i}")?;
            }
            Ok(())
        } else {
            let parts: Vec<String> = self.indices.iter().map(u32::to_string).collect();
            f.write_str(&parts.join(","))
        }
    }
}

/// Mutually disjoint worlds, members in ascending order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub worlds: Vec<World>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldPartition {
    pub biased: Vec<World>,
    pub unbiased: Vec<World>,
}

/// Which worlds an average runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorldFilter {
    All,
    Unbiased,
    Biased,
}

/// Dataset and skeleton flattened to per-coordinate sample columns.
#[derive(Clone, Debug)]
pub struct WorldModel<T> {
    dims: WorldDims,
    /// `[coord][i]`, 0-based next states.
    columns: Vec<u32>,
    /// `[coord]`
    rewards: Vec<T>,
    discount: T,
    v_max: T,
}

impl<T: Scalar> WorldModel<T> {
    /// Time-indexed reading over a time-indexed dataset.
    pub fn nonstationary(d: &Dataset, skeleton: &MdpSpec<T>) -> Result<Self> {
        if d.kind != Kind::Nonstationary {
            return Err(Error::Dimension("time-indexed worlds need time-indexed data".into()));
        }
        let h = d.time_slices();
        if skeleton.horizon != Horizon::Finite(h) {
            return Err(Error::Dimension(format!(
                "dataset covers {h} steps, skeleton horizon is {:?}",
                skeleton.horizon
            )));
        }
        let dims = WorldDims::nonstationary(d.num_states, d.num_actions, h, d.n);
        Self::build(dims, d, skeleton)
    }

    /// Stationary reading: pooled samples per pair, `hbar` coordinates per pair.
    pub fn stationary(d: &Dataset, skeleton: &MdpSpec<T>, hbar: usize) -> Result<Self> {
        if skeleton.kind != Kind::Stationary {
            return Err(Error::Dimension("stationary worlds need a stationary skeleton".into()));
        }
        let pooled = d.pooled();
        let dims = WorldDims::stationary(d.num_states, d.num_actions, hbar, pooled.n);
        Self::build(dims, &pooled, skeleton)
    }

    fn build(dims: WorldDims, d: &Dataset, skeleton: &MdpSpec<T>) -> Result<Self> {
        dims.check_shape()?;
        if skeleton.num_states != dims.num_states || skeleton.num_actions != dims.num_actions {
            return Err(Error::Dimension("dataset and skeleton disagree on |S| or |A|".into()));
        }
        skeleton.ensure_valid()?;
        let k = dims.coordinates();
        let mut columns = Vec::with_capacity(k * dims.n);
        let mut rewards = Vec::with_capacity(k);
        for s in 0..dims.num_states {
            for a in 0..dims.num_actions {
                for t in 0..dims.slices {
                    columns.extend_from_slice(d.tuple(s, a, t));
                    rewards.push(skeleton.reward(s, a, t).clone());
                }
            }
        }
        Ok(WorldModel {
            dims,
            columns,
            rewards,
            discount: skeleton.discount.clone(),
            v_max: skeleton.v_max.clone(),
        })
    }

    pub fn dims(&self) -> &WorldDims {
        &self.dims
    }

    #[inline]
    fn next_state(&self, coord: usize, index0: u32) -> usize {
        self.columns[coord * self.dims.n + index0 as usize] as usize
    }

    /// `M_x`: time-indexed, one-hot rows.
    pub fn world_mdp(&self, x: &World) -> Result<MdpSpec<T>> {
        self.dims.check(x)?;
        let (ns, k) = (self.dims.num_states, self.dims.coordinates());
        let mut transitions = vec![T::zero(); k * ns];
        for (c, &i) in x.indices.iter().enumerate() {
            transitions[c * ns + self.next_state(c, i - 1)] = T::one();
        }
        Ok(MdpSpec {
            kind: Kind::Nonstationary,
            num_states: ns,
            num_actions: self.dims.num_actions,
            horizon: Horizon::Finite(self.dims.slices),
            discount: self.discount.clone(),
            v_max: self.v_max.clone(),
            transitions,
            rewards: self.rewards.clone(),
        })
    }

    /// The time-indexed empirical model over `slices` steps; averaging over
    /// every world reproduces its values.
    pub fn empirical_mdp(&self) -> MdpSpec<T> {
        let (ns, n, k) = (self.dims.num_states, self.dims.n, self.dims.coordinates());
        let mut transitions = vec![T::zero(); k * ns];
        for c in 0..k {
            for i in 0..n {
                let p = &mut transitions[c * ns + self.next_state(c, i as u32)];
                *p = p.clone() + T::one();
            }
        }
        let n_t = T::from_usize(n).expect("N is representable");
        for p in &mut transitions {
            *p = p.clone() / n_t.clone();
        }
        MdpSpec {
            kind: Kind::Nonstationary,
            num_states: ns,
            num_actions: self.dims.num_actions,
            horizon: Horizon::Finite(self.dims.slices),
            discount: self.discount.clone(),
            v_max: self.v_max.clone(),
            transitions,
            rewards: self.rewards.clone(),
        }
    }

    pub fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.num_states != self.dims.num_states {
            return Err(Error::IncompatiblePolicy("policy state count differs".into()));
        }
        if pi.actions.iter().any(|&a| a >= self.dims.num_actions) {
            return Err(Error::IncompatiblePolicy("action index out of range".into()));
        }
        if pi.kind == Kind::Nonstationary && pi.slices != self.dims.slices {
            return Err(Error::IncompatiblePolicy(format!(
                "policy covers {} steps, worlds cover {}",
                pi.slices, self.dims.slices
            )));
        }
        Ok(())
    }

    /// `V^pi_x` into `out` (`[t][s]`, `slices + 1` rows) for a 0-based world.
    fn value_into(&self, x0: &[u32], pi: &Policy, out: &mut [T]) {
        let (ns, na, h) = (self.dims.num_states, self.dims.num_actions, self.dims.slices);
        for v in &mut out[h * ns..] {
            *v = T::zero();
        }
        for t in (0..h).rev() {
            let (head, tail) = out.split_at_mut((t + 1) * ns);
            for s in 0..ns {
                let a = pi.action(s, t);
                let c = (s * na + a) * h + t;
                let next = self.next_state(c, x0[c]);
                head[t * ns + s] = self.rewards[c].clone() + self.discount.clone() * tail[next].clone();
            }
        }
    }

    /// `V^pi_x` by direct recursion on the induced deterministic model.
    pub fn world_value(&self, x: &World, pi: &Policy) -> Result<ValueTable<T>> {
        self.dims.check(x)?;
        self.check_policy(pi)?;
        let mut table = ValueTable::zeros(self.dims.num_states, self.dims.slices + 1);
        self.value_into(&x.zero_based(), pi, &mut table.values);
        Ok(table)
    }

    /// Successor of every coordinate under `x`; equal vectors mean equal `M_x`.
    pub fn induced_successors(&self, x: &World) -> Result<Vec<u32>> {
        self.dims.check(x)?;
        Ok(x.indices
            .iter()
            .enumerate()
            .map(|(c, &i)| self.next_state(c, i - 1) as u32)
            .collect())
    }
}

/// `M_x` built straight from a dataset. Stationary data uses the stationary
/// reading with `Hbar` equal to the skeleton's finite horizon.
pub fn world_mdp<T: Scalar>(x: &World, d: &Dataset, skeleton: &MdpSpec<T>) -> Result<MdpSpec<T>> {
    model_for(d, skeleton)?.world_mdp(x)
}

fn model_for<T: Scalar>(d: &Dataset, skeleton: &MdpSpec<T>) -> Result<WorldModel<T>> {
    match d.kind {
        Kind::Nonstationary => WorldModel::nonstationary(d, skeleton),
        Kind::Stationary => {
            let hbar = skeleton.horizon.finite().ok_or_else(|| {
                Error::Dimension("stationary worlds need a finite (truncated) horizon".into())
            })?;
            WorldModel::stationary(d, skeleton, hbar)
        }
    }
}

/// Mean of `V^pi_z` over an explicit collection of worlds.
pub fn eval_world_set<T: Scalar, I>(worlds: I, pi: &Policy, d: &Dataset, skeleton: &MdpSpec<T>) -> Result<ValueTable<T>>
where
    I: IntoIterator<Item = World>,
{
    let model = model_for(d, skeleton)?;
    model.check_policy(pi)?;
    let rows = model.dims.slices + 1;
    let mut acc = Sums::new(1, model.dims.num_states * rows);
    let mut scratch = vec![T::zero(); model.dims.num_states * rows];
    for x in worlds {
        model.dims.check(&x)?;
        model.value_into(&x.zero_based(), pi, &mut scratch);
        acc.add(0, &scratch);
        acc.count += 1;
    }
    if acc.count == 0 {
        return Err(Error::EmptyWorldSet);
    }
    Ok(acc.means(model.dims.num_states, rows).remove(0))
}

/// Per-policy compensated sums of value tables.
#[derive(Clone, Debug)]
struct Sums<T: Scalar> {
    width: usize,
    sums: Vec<CompensatedSum<T>>,
    count: u64,
}

impl<T: Scalar> Sums<T> {
    fn new(policies: usize, width: usize) -> Self {
        Sums {
            width,
            sums: vec![CompensatedSum::new(); policies * width],
            count: 0,
        }
    }

    fn add(&mut self, policy: usize, values: &[T]) {
        let base = policy * self.width;
        for (acc, v) in self.sums[base..base + self.width].iter_mut().zip(values) {
            acc.add(v.clone());
        }
    }

    fn merge(&mut self, other: Sums<T>) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.merge(b);
        }
        self.count += other.count;
    }

    fn means(&self, num_states: usize, rows: usize) -> Vec<ValueTable<T>> {
        let n = T::from_u64(self.count).expect("count is representable");
        self.sums
            .chunks(self.width)
            .map(|chunk| ValueTable {
                num_states,
                rows,
                values: chunk.iter().map(|s| s.value() / n.clone()).collect(),
                error_bound: 0.0,
            })
            .collect()
    }
}

/// Splits `0..total` into fixed chunks, folds each in parallel and merges in order.
pub(crate) fn chunked_fold<A, F, M>(total: u64, fold: F, merge: M) -> Option<A>
where
    A: Send,
    F: Fn(u64, u64) -> A + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunks = total.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| fold(c * CHUNK, ((c + 1) * CHUNK).min(total)))
        .collect();
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for p in it {
        merge(&mut acc, p);
    }
    Some(acc)
}

fn big(v: u64) -> BigUint {
    BigUint::from(v)
}

fn factorial(n: usize) -> BigUint {
    (1..=n as u64).fold(BigUint::one(), |acc, i| acc * big(i))
}

/// `n! / (n - m)!`, zero when `m > n`.
fn falling(n: usize, m: usize) -> BigUint {
    if m > n {
        return BigUint::zero();
    }
    ((n - m + 1) as u64..=n as u64).fold(BigUint::one(), |acc, i| acc * big(i))
}

fn within(count: &BigUint, cap: u64, what: &'static str) -> Result<u64> {
    match count.to_u64() {
        Some(c) if c <= cap => Ok(c),
        _ => Err(Error::CapExceeded {
            what,
            required: count.to_string(),
            cap,
        }),
    }
}

/// `N^k`.
pub fn count_worlds(dims: &WorldDims) -> BigUint {
    big(dims.n as u64).pow(dims.coordinates() as u32)
}

/// Number of batches. Time-indexed: `N!^(k-1)`. Stationary with
/// `N' = floor(N / Hbar)`: `(N! / (N - N' Hbar)!)^(|S||A|) / N'!`, which is
/// `N!^(|S||A|) / N'!` when `Hbar` divides `N`.
pub fn count_batches(dims: &WorldDims) -> BigUint {
    let per_block = falling(dims.n, dims.batch_size() * dims.block_len());
    let labelled = per_block.pow(dims.blocks() as u32);
    labelled / factorial(dims.batch_size())
}

/// Number of batches containing a fixed world (an unbiased one when stationary).
/// Time-indexed: `(N-1)!^(k-1)`; stationary: `((N-Hbar)! / (N - N' Hbar)!)^(|S||A|) / (N'-1)!`.
pub fn count_batches_containing(dims: &WorldDims) -> BigUint {
    let m = dims.batch_size();
    if m == 0 {
        return BigUint::zero();
    }
    let b = dims.block_len();
    let per_block = falling(dims.n - b, (m - 1) * b);
    per_block.pow(dims.blocks() as u32) / factorial(m - 1)
}

/// `(N! / (N - Hbar)!)^(|S||A|)`.
pub fn count_unbiased(dims: &WorldDims) -> BigUint {
    falling(dims.n, dims.slices).pow(dims.pairs() as u32)
}

/// Exact `|X_biased| / |X| = 1 - |X_unbiased| / N^k`.
pub fn biased_fraction_exact(dims: &WorldDims) -> BigRational {
    BigRational::one() - from_uint(&count_unbiased(dims)) / from_uint(&count_worlds(dims))
}

/// Product over coordinates of the number of distinct stored successors.
pub fn distinct_induced_count<T: Scalar>(model: &WorldModel<T>) -> BigUint {
    let n = model.dims.n;
    model
        .columns
        .chunks(n)
        .map(|col| big(col.iter().collect::<HashSet<_>>().len() as u64))
        .fold(BigUint::one(), |acc, c| acc * c)
}

/// Same count, by enumerating every world and hashing its successor vector.
pub fn distinct_induced_enumerated<T: Scalar>(model: &WorldModel<T>, cap: u64) -> Result<u64> {
    let total = within(&count_worlds(&model.dims), cap, "worlds")?;
    let k = model.dims.coordinates();
    let seen = chunked_fold(
        total,
        |lo, hi| {
            let mut set = HashSet::new();
            let mut x = decode(lo, model.dims.n as u64, k);
            for _ in lo..hi {
                let succ: Vec<u32> = (0..k).map(|c| model.next_state(c, x[c]) as u32).collect();
                set.insert(succ);
                step(&mut x, model.dims.n as u32);
            }
            set
        },
        |a, b| a.extend(b),
    )
    .unwrap_or_default();
    Ok(seen.len() as u64)
}

/// `index` in base `n`, most significant digit first.
fn decode(mut index: u64, n: u64, k: usize) -> Vec<u32> {
    let mut x = vec![0u32; k];
    for d in x.iter_mut().rev() {
        *d = (index % n) as u32;
        index /= n;
    }
    x
}

/// Lexicographic successor (odometer).
fn step(x: &mut [u32], n: u32) {
    for d in x.iter_mut().rev() {
        *d += 1;
        if *d < n {
            return;
        }
        *d = 0;
    }
}

/// True when some block of `x` repeats an index (stationary reading).
pub fn is_biased(dims: &WorldDims, x: &World) -> bool {
    is_biased0(dims, &x.indices)
}

fn is_biased0(dims: &WorldDims, x: &[u32]) -> bool {
    x.chunks(dims.slices).any(|block| {
        block
            .iter()
            .enumerate()
            .any(|(i, v)| block[..i].contains(v))
    })
}

fn keep(filter: WorldFilter, dims: &WorldDims, x0: &[u32]) -> bool {
    match filter {
        WorldFilter::All => true,
        WorldFilter::Unbiased => !is_biased0(dims, x0),
        WorldFilter::Biased => is_biased0(dims, x0),
    }
}

/// Every world in lexicographic order.
pub struct WorldIter {
    n: u32,
    remaining: u64,
    next: Vec<u32>,
}

impl Iterator for WorldIter {
    type Item = World;

    fn next(&mut self) -> Option<World> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let out = World::new(self.next.iter().map(|&i| i + 1).collect());
        step(&mut self.next, self.n);
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let r = self.remaining as usize;
        (r, Some(r))
    }
}

pub fn enumerate_worlds(dims: &WorldDims, cap: u64) -> Result<WorldIter> {
    dims.check_shape()?;
    let total = within(&count_worlds(dims), cap, "worlds")?;
    Ok(WorldIter {
        n: dims.n as u32,
        remaining: total,
        next: vec![0; dims.coordinates()],
    })
}

pub fn partition_biased(dims: &WorldDims, cap: u64) -> Result<WorldPartition> {
    let (biased, unbiased) = enumerate_worlds(dims, cap)?.partition(|x| is_biased(dims, x));
    Ok(WorldPartition { biased, unbiased })
}

/// Mean of `V^pi_x` over every world passing `filter`, for each policy.
pub fn average_over_worlds<T: Scalar>(
    model: &WorldModel<T>,
    policies: &[Policy],
    filter: WorldFilter,
    cap: u64,
) -> Result<Vec<ValueTable<T>>> {
    for pi in policies {
        model.check_policy(pi)?;
    }
    let dims = model.dims;
    let total = within(&count_worlds(&dims), cap, "worlds")?;
    let (k, rows) = (dims.coordinates(), dims.slices + 1);
    let width = dims.num_states * rows;
    let acc = chunked_fold(
        total,
        |lo, hi| {
            let mut acc = Sums::new(policies.len(), width);
            let mut scratch = vec![T::zero(); width];
            let mut x = decode(lo, dims.n as u64, k);
            for _ in lo..hi {
                if keep(filter, &dims, &x) {
                    for (p, pi) in policies.iter().enumerate() {
                        model.value_into(&x, pi, &mut scratch);
                        acc.add(p, &scratch);
                    }
                    acc.count += 1;
                }
                step(&mut x, dims.n as u32);
            }
            acc
        },
        |a, b| a.merge(b),
    )
    .ok_or(Error::EmptyWorldSet)?;
    if acc.count == 0 {
        return Err(Error::EmptyWorldSet);
    }
    Ok(acc.means(dims.num_states, rows))
}

/// `X'`: time-indexed, the `N` constant worlds; stationary, member `j` takes
/// indices `j*Hbar + 1 ..= (j+1)*Hbar` in every block.
pub fn canonical_batch(dims: &WorldDims) -> Batch {
    let (m, b, k) = (dims.batch_size(), dims.block_len(), dims.coordinates());
    let worlds = (0..m)
        .map(|j| World::new((0..k).map(|c| (j * b + c % b + 1) as u32).collect()))
        .collect();
    Batch { worlds }
}

/// Time-indexed: different at every coordinate. Stationary: index sets of
/// every block are disjoint.
pub fn is_disjoint(dims: &WorldDims, x: &World, y: &World) -> bool {
    let b = dims.block_len();
    x.indices
        .chunks(b)
        .zip(y.indices.chunks(b))
        .all(|(bx, by)| bx.iter().all(|v| !by.contains(v)))
}

/// Correct size, pairwise disjoint, valid members (unbiased when stationary).
pub fn is_batch(dims: &WorldDims, worlds: &[World]) -> bool {
    worlds.len() == dims.batch_size()
        && worlds.iter().all(|x| dims.check(x).is_ok())
        && (!dims.stationary || worlds.iter().all(|x| !is_biased(dims, x)))
        && worlds
            .iter()
            .enumerate()
            .all(|(i, x)| worlds[..i].iter().all(|y| is_disjoint(dims, x, y)))
}

/// Injective sequences of length `len` over `0..n`, lexicographic. With
/// `leaders`, only those whose every `group`-th entry increases.
fn arrangements(n: usize, len: usize, group: usize, leaders: bool) -> Vec<Vec<u32>> {
    fn rec(
        n: usize,
        len: usize,
        group: usize,
        leaders: bool,
        cur: &mut Vec<u32>,
        used: &mut [bool],
        out: &mut Vec<Vec<u32>>,
    ) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        let pos = cur.len();
        for v in 0..n {
            if used[v] {
                continue;
            }
            if leaders && pos % group == 0 && pos > 0 && v as u32 <= cur[pos - group] {
                continue;
            }
            used[v] = true;
            cur.push(v as u32);
            rec(n, len, group, leaders, cur, used, out);
            cur.pop();
            used[v] = false;
        }
    }
    let mut out = Vec::new();
    rec(n, len, group, leaders, &mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Canonical batch enumeration: each block picks an arrangement handing
/// `block_len` indices to every member; the first block is restricted to
/// arrangements whose member leaders increase, one representative per
/// member permutation.
pub struct BatchSpace {
    dims: WorldDims,
    first: Vec<Vec<u32>>,
    rest: Vec<Vec<u32>>,
    total: u64,
}

impl BatchSpace {
    pub fn new(dims: &WorldDims, cap: u64) -> Result<Self> {
        dims.check_shape()?;
        if dims.batch_size() == 0 {
            return Err(Error::InvalidParameter(format!(
                "N = {} is smaller than Hbar = {}; no batch fits",
                dims.n, dims.slices
            )));
        }
        let total = within(&count_batches(dims), cap, "batches")?;
        let len = dims.batch_size() * dims.block_len();
        let first = arrangements(dims.n, len, dims.block_len(), true);
        let rest = if dims.blocks() > 1 {
            arrangements(dims.n, len, dims.block_len(), false)
        } else {
            Vec::new()
        };
        Ok(BatchSpace {
            dims: *dims,
            first,
            rest,
            total,
        })
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Members of batch `index` as 0-based worlds.
    fn members0(&self, mut index: u64) -> Vec<Vec<u32>> {
        let (m, b, blocks) = (self.dims.batch_size(), self.dims.block_len(), self.dims.blocks());
        let mut choice = vec![0usize; blocks];
        for c in choice[1..].iter_mut().rev() {
            let r = self.rest.len() as u64;
            *c = (index % r) as usize;
            index /= r;
        }
        choice[0] = index as usize;
        let mut members = vec![Vec::with_capacity(blocks * b); m];
        for (blk, &ch) in choice.iter().enumerate() {
            let arr = if blk == 0 { &self.first[ch] } else { &self.rest[ch] };
            for (j, member) in members.iter_mut().enumerate() {
                member.extend_from_slice(&arr[j * b..(j + 1) * b]);
            }
        }
        members
    }

    pub fn batch(&self, index: u64) -> Batch {
        let mut worlds: Vec<World> = self
            .members0(index)
            .into_iter()
            .map(|x| World::new(x.into_iter().map(|i| i + 1).collect()))
            .collect();
        worlds.sort();
        Batch { worlds }
    }

    pub fn iter(&self) -> impl Iterator<Item = Batch> + '_ {
        (0..self.total).map(move |i| self.batch(i))
    }
}

pub fn enumerate_batches(dims: &WorldDims, cap: u64) -> Result<Vec<Batch>> {
    let space = BatchSpace::new(dims, cap)?;
    Ok(space.iter().collect())
}

/// Mean over batches of the member-averaged `V^pi_b`, for each policy.
pub fn average_over_batches<T: Scalar>(
    model: &WorldModel<T>,
    policies: &[Policy],
    cap: u64,
) -> Result<Vec<ValueTable<T>>> {
    for pi in policies {
        model.check_policy(pi)?;
    }
    let space = BatchSpace::new(&model.dims, cap)?;
    let dims = model.dims;
    let rows = dims.slices + 1;
    let width = dims.num_states * rows;
    let m = T::from_usize(dims.batch_size()).expect("batch size is representable");
    let acc = chunked_fold(
        space.len(),
        |lo, hi| {
            let mut acc = Sums::new(policies.len(), width);
            let mut scratch = vec![T::zero(); width];
            for index in lo..hi {
                let members = space.members0(index);
                for (p, pi) in policies.iter().enumerate() {
                    let mut batch_sum = vec![T::zero(); width];
                    for x in &members {
                        model.value_into(x, pi, &mut scratch);
                        for (b, v) in batch_sum.iter_mut().zip(&scratch) {
                            *b = b.clone() + v.clone();
                        }
                    }
                    for b in &mut batch_sum {
                        *b = b.clone() / m.clone();
                    }
                    acc.add(p, &batch_sum);
                }
                acc.count += 1;
            }
            acc
        },
        |a, b| a.merge(b),
    )
    .ok_or(Error::EmptyWorldSet)?;
    Ok(acc.means(dims.num_states, rows))
}

/// `max |V^pi_X - mean_b V^pi_b|` over `(s, t)`; the stationary reading
/// compares against `X_unbiased`.
pub fn batch_decomposition_check<T: Scalar>(model: &WorldModel<T>, pi: &Policy, caps: &EnumerationCaps) -> Result<f64> {
    let filter = if model.dims.stationary {
        WorldFilter::Unbiased
    } else {
        WorldFilter::All
    };
    let over_worlds = average_over_worlds(model, std::slice::from_ref(pi), filter, caps.worlds)?;
    let over_batches = average_over_batches(model, std::slice::from_ref(pi), caps.batches)?;
    Ok(over_worlds[0].max_abs_diff(&over_batches[0]))
}

/// Enumerated batch count and how many contain `x`.
pub fn count_batches_enumerated(dims: &WorldDims, x: &World, cap: u64) -> Result<(u64, u64)> {
    let space = BatchSpace::new(dims, cap)?;
    let containing = space.iter().filter(|b| b.worlds.contains(x)).count() as u64;
    Ok((space.len(), containing))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{evaluate_policy, SolveOptions};
    use crate::mdp::{random_mdp, GenSpec};
    use crate::sampling::sample_dataset;

    fn w(s: &str) -> World {
        World::parse(s).unwrap()
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(w("132").indices, vec![1, 3, 2]);
        assert_eq!(w("10,2").to_string(), "10,2");
        assert_eq!(w("132").to_string(), "132");
        assert!(World::parse("1a").is_err());
        assert!(World::parse("").is_err());
    }

    #[test]
    fn counts_match_small_cases() {
        let d = WorldDims::nonstationary(1, 1, 3, 2);
        assert_eq!(count_batches(&d), big(4));
        assert_eq!(count_batches_containing(&d), big(1));
        let one = WorldDims::nonstationary(2, 2, 3, 1);
        assert_eq!(count_batches(&one), big(1));
        let st = WorldDims::stationary(1, 1, 2, 3);
        assert_eq!(count_unbiased(&st), big(6));
    }

    #[test]
    fn canonical_batches_are_batches() {
        for dims in [
            WorldDims::nonstationary(2, 2, 3, 3),
            WorldDims::nonstationary(1, 1, 1, 1),
            WorldDims::stationary(2, 1, 2, 6),
        ] {
            let b = canonical_batch(&dims);
            assert_eq!(b.worlds.len(), dims.batch_size());
            assert!(is_batch(&dims, &b.worlds));
        }
        let dims = WorldDims::nonstationary(2, 2, 3, 3);
        let b = canonical_batch(&dims);
        assert_eq!(b.worlds[2].to_string(), "333333333333");
    }

    #[test]
    fn enumerated_batches_are_distinct_batches() {
        let dims = WorldDims::nonstationary(1, 1, 2, 3);
        let all = enumerate_batches(&dims, 100).unwrap();
        assert_eq!(all.len(), 6);
        let set: HashSet<_> = all.iter().map(|b| b.worlds.clone()).collect();
        assert_eq!(set.len(), 6);
        assert!(all.iter().all(|b| is_batch(&dims, &b.worlds)));
    }

    #[test]
    fn caps_fail_loudly() {
        let dims = WorldDims::nonstationary(2, 2, 3, 4);
        assert!(matches!(enumerate_worlds(&dims, 1000), Err(Error::CapExceeded { .. })));
        assert!(matches!(BatchSpace::new(&dims, 1000), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn full_average_reproduces_empirical_model() {
        let m = random_mdp(&GenSpec {
            kind: Kind::Nonstationary,
            states: 2,
            actions: 2,
            horizon: Horizon::Finite(2),
            gamma: 1.0,
            seed: 5,
            deterministic: false,
        })
        .unwrap();
        let d = sample_dataset(&m, 2, 9).unwrap();
        let model = WorldModel::nonstationary(&d, &m).unwrap();
        let hat = crate::cem::build_empirical_ns(&d, &m).unwrap().mdp;
        let policies: Vec<Policy> = crate::dp::enumerate_policies(&m, 100).unwrap().collect();
        let avg = average_over_worlds(&model, &policies, WorldFilter::All, 1 << 20).unwrap();
        for (pi, v) in policies.iter().zip(&avg) {
            let direct = evaluate_policy(&hat, pi, &SolveOptions::default()).unwrap();
            assert!(direct.max_abs_diff(v) < 1e-12);
        }
    }

    #[test]
    fn singleton_world_set_is_world_value() {
        let m = random_mdp(&GenSpec {
            kind: Kind::Nonstationary,
            states: 2,
            actions: 2,
            horizon: Horizon::Finite(3),
            gamma: 1.0,
            seed: 1,
            deterministic: false,
        })
        .unwrap();
        let d = sample_dataset(&m, 3, 2).unwrap();
        let pi = Policy::constant(Kind::Nonstationary, 2, 3, 1);
        let x = w("123123123123");
        let set = eval_world_set(vec![x.clone()], &pi, &d, &m).unwrap();
        let direct = evaluate_policy(&world_mdp(&x, &d, &m).unwrap(), &pi, &SolveOptions::default()).unwrap();
        assert_eq!(set, direct);
        assert!(matches!(eval_world_set(Vec::new(), &pi, &d, &m), Err(Error::EmptyWorldSet)));
    }
}
