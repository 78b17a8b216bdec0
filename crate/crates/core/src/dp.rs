//! Exact policy evaluation and optimal control for tabular MDPs.
//!
//! Finite horizons use backward induction from `V(., H) = 0`; infinite
//! horizons use value iteration stopped on a sup-norm change of at most
//! `tolerance`, reporting the error bound `tolerance * gamma / (1 - gamma)`.
//! Argmax ties always go to the lowest action index.

use crate::error::{Error, Result};
use crate::mdp::{Horizon, Kind, MdpSpec};
use crate::policy::{Policy, ValueTable};
use crate::scalar::Scalar;

pub const DEFAULT_POLICY_CAP: u64 = 1_000_000;

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-12,
            max_iterations: 10_000_000,
        }
    }
}

fn check_policy<T: Scalar>(m: &MdpSpec<T>, pi: &Policy) -> Result<()> {
    if pi.num_states != m.num_states {
        return Err(Error::IncompatiblePolicy(format!(
            "policy covers {} states, MDP has {}",
            pi.num_states, m.num_states
        )));
    }
    if pi.actions.iter().any(|&a| a >= m.num_actions) {
        return Err(Error::IncompatiblePolicy("action index out of range".into()));
    }
    if pi.kind == Kind::Nonstationary {
        match m.horizon {
            Horizon::Infinite => {
                return Err(Error::IncompatiblePolicy(
                    "time-indexed policy on an infinite horizon".into(),
                ))
            }
            Horizon::Finite(h) if h != pi.slices => {
                return Err(Error::IncompatiblePolicy(format!(
                    "policy covers {} steps, horizon is {h}",
                    pi.slices
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

#[inline]
fn backup<T: Scalar>(m: &MdpSpec<T>, next: &[T], s: usize, a: usize, t: usize) -> T {
    let mut acc = T::zero();
    for (p, v) in m.row(s, a, t).iter().zip(next) {
        if !p.is_zero() {
            acc = acc + p.clone() * v.clone();
        }
    }
    m.reward(s, a, t).clone() + m.discount.clone() * acc
}

fn check_model<T: Scalar>(m: &MdpSpec<T>) -> Result<()> {
    if m.horizon.is_infinite() && m.discount >= T::one() {
        return Err(Error::InvalidParameter(
            "infinite horizon requires discount < 1".into(),
        ));
    }
    m.ensure_valid()
}

/// `V^pi` on `m`.
pub fn evaluate_policy<T: Scalar>(
    m: &MdpSpec<T>,
    pi: &Policy,
    opts: &SolveOptions,
) -> Result<ValueTable<T>> {
    check_model(m)?;
    check_policy(m, pi)?;
    match m.horizon {
        Horizon::Finite(h) => Ok(evaluate_finite(m, pi, h)),
        Horizon::Infinite => evaluate_discounted(m, pi, opts),
    }
}

/// Backward-induction evaluation without validation; callers guarantee
/// compatibility. Used on hot paths over many induced models.
pub(crate) fn evaluate_finite<T: Scalar>(m: &MdpSpec<T>, pi: &Policy, h: usize) -> ValueTable<T> {
    let n = m.num_states;
    let mut table = ValueTable::zeros(n, h + 1);
    for t in (0..h).rev() {
        let (head, tail) = table.values.split_at_mut((t + 1) * n);
        let next = &tail[..n];
        for s in 0..n {
            head[t * n + s] = backup(m, next, s, pi.action(s, t), t);
        }
    }
    table
}

fn evaluate_discounted<T: Scalar>(
    m: &MdpSpec<T>,
    pi: &Policy,
    opts: &SolveOptions,
) -> Result<ValueTable<T>> {
    let n = m.num_states;
    let mut v = vec![T::zero(); n];
    for _ in 0..opts.max_iterations {
        let next: Vec<T> = (0..n).map(|s| backup(m, &v, s, pi.action(s, 0), 0)).collect();
        let delta = sup_diff(&next, &v);
        v = next;
        if delta <= opts.tolerance {
            return Ok(discounted_table(m, v, opts.tolerance));
        }
    }
    Err(Error::InvalidParameter(format!(
        "policy evaluation did not reach tolerance {} in {} iterations",
        opts.tolerance, opts.max_iterations
    )))
}

fn sup_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.clone() - y.clone()).abs().to_f64_lossy())
        .fold(0.0, f64::max)
}

fn discounted_table<T: Scalar>(m: &MdpSpec<T>, v: Vec<T>, tol: f64) -> ValueTable<T> {
    let gamma = m.discount.to_f64_lossy();
    ValueTable {
        num_states: m.num_states,
        rows: 1,
        values: v,
        error_bound: tol * gamma / (1.0 - gamma),
    }
}

fn greedy<T: Scalar>(m: &MdpSpec<T>, next: &[T], s: usize, t: usize) -> (usize, T) {
    let mut best_a = 0;
    let mut best = backup(m, next, s, 0, t);
    for a in 1..m.num_actions {
        let q = backup(m, next, s, a, t);
        if q > best {
            best = q;
            best_a = a;
        }
    }
    (best_a, best)
}

/// Optimal value table and the lowest-index greedy policy.
///
/// Finite horizons yield a time-indexed policy; infinite horizons a
/// stationary one.
pub fn optimal_policy<T: Scalar>(m: &MdpSpec<T>, opts: &SolveOptions) -> Result<(Policy, ValueTable<T>)> {
    check_model(m)?;
    match m.horizon {
        Horizon::Finite(h) => Ok(backward_induction(m, h)),
        Horizon::Infinite => value_iteration(m, opts),
    }
}

pub(crate) fn backward_induction<T: Scalar>(m: &MdpSpec<T>, h: usize) -> (Policy, ValueTable<T>) {
    let n = m.num_states;
    let mut table = ValueTable::zeros(n, h + 1);
    let mut actions = vec![0; n * h];
    for t in (0..h).rev() {
        let (head, tail) = table.values.split_at_mut((t + 1) * n);
        let next = &tail[..n];
        for s in 0..n {
            let (a, v) = greedy(m, next, s, t);
            actions[s * h + t] = a;
            head[t * n + s] = v;
        }
    }
    let pi = Policy {
        kind: Kind::Nonstationary,
        num_states: n,
        slices: h,
        actions,
    };
    (pi, table)
}

fn value_iteration<T: Scalar>(m: &MdpSpec<T>, opts: &SolveOptions) -> Result<(Policy, ValueTable<T>)> {
    let n = m.num_states;
    let mut v = vec![T::zero(); n];
    for _ in 0..opts.max_iterations {
        let next: Vec<T> = (0..n).map(|s| greedy(m, &v, s, 0).1).collect();
        let delta = sup_diff(&next, &v);
        v = next;
        if delta <= opts.tolerance {
            let actions = (0..n).map(|s| greedy(m, &v, s, 0).0).collect();
            return Ok((Policy::stationary(actions), discounted_table(m, v, opts.tolerance)));
        }
    }
    Err(Error::InvalidParameter(format!(
        "value iteration did not reach tolerance {} in {} iterations",
        opts.tolerance, opts.max_iterations
    )))
}

/// Lexicographic enumeration of every deterministic Markovian policy of a
/// given shape. The flattened `[s][t]` action vector is read as a base-`|A|`
/// numeral with the first coordinate most significant.
#[derive(Clone, Debug)]
pub struct PolicyIter {
    kind: Kind,
    num_states: usize,
    slices: usize,
    num_actions: usize,
    next: Option<Vec<usize>>,
    remaining: u64,
}

impl PolicyIter {
    pub fn new(kind: Kind, num_states: usize, num_actions: usize, slices: usize, cap: u64) -> Result<Self> {
        let slices = if kind == Kind::Stationary { 1 } else { slices };
        let len = num_states * slices;
        let count = (num_actions as f64).powi(len as i32);
        if count > cap as f64 {
            return Err(Error::CapExceeded {
                what: "policy enumeration",
                required: format!("{num_actions}^{len}"),
                cap,
            });
        }
        Ok(PolicyIter {
            kind,
            num_states,
            slices,
            num_actions,
            next: (num_actions > 0).then(|| vec![0; len]),
            remaining: (num_actions as u64).pow(len as u32),
        })
    }

    /// Policies not yet yielded.
    pub fn remaining(&self) -> u64 {
        self.remaining
    }
}

impl Iterator for PolicyIter {
    type Item = Policy;

    fn next(&mut self) -> Option<Policy> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carried = true;
        for digit in succ.iter_mut().rev() {
            *digit += 1;
            if *digit < self.num_actions {
                carried = false;
                break;
            }
            *digit = 0;
        }
        if !carried {
            self.next = Some(succ);
        }
        self.remaining = self.remaining.saturating_sub(1);
        Some(Policy {
            kind: self.kind,
            num_states: self.num_states,
            slices: self.slices,
            actions: current,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining as usize, Some(self.remaining as usize))
    }
}

/// All policies of `m`: time-indexed for finite horizons, stationary otherwise.
pub fn enumerate_policies<T: Scalar>(m: &MdpSpec<T>, cap: u64) -> Result<PolicyIter> {
    match m.horizon {
        Horizon::Finite(h) => PolicyIter::new(Kind::Nonstationary, m.num_states, m.num_actions, h, cap),
        Horizon::Infinite => PolicyIter::new(Kind::Stationary, m.num_states, m.num_actions, 1, cap),
    }
}
