//! Trajectory trees: one sampled successor per (node, action), so a single
//! tree scores every policy from the root.
//!
//! Trees are complete `|A|`-ary and stored heap-style: the child of node `n`
//! under action `a` is `n * |A| + 1 + a`. Tree `i` of a seeded run draws from
//! its own stream, so builds are order-independent.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::MdpSpec;
use crate::policy::Policy;
use crate::precise::{self, rational};
use crate::sampling::{draw_next, tuple_stream};
use crate::scalar::CompensatedSum;

pub const DEFAULT_NODE_CAP: u64 = 1_000_000;

/// Keeps tree streams apart from dataset streams under the same seed.
const TREE_STREAM_BASE: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrajectoryTree {
    pub root_state: usize,
    pub depth: usize,
    pub num_actions: usize,
    /// State at each node, heap order.
    pub states: Vec<u32>,
}

/// `(A^(H+1) - 1) / (A - 1)`, or `H + 1` when `A = 1`.
pub fn node_count(num_actions: usize, depth: usize) -> BigUint {
    if num_actions == 1 {
        return BigUint::from(depth as u64 + 1);
    }
    let a = BigUint::from(num_actions as u64);
    (a.pow(depth as u32 + 1) - 1u32) / (a - 1u32)
}

impl TrajectoryTree {
    #[inline]
    pub fn child(&self, node: usize, action: usize) -> usize {
        node * self.num_actions + 1 + action
    }

    /// First heap index at depth `t`.
    fn level_start(&self, t: usize) -> usize {
        if self.num_actions == 1 {
            t
        } else {
            (self.num_actions.pow(t as u32) - 1) / (self.num_actions - 1)
        }
    }
}

fn check(m: &MdpSpec<f64>, root: usize, cap: u64) -> Result<usize> {
    let h = m
        .horizon
        .finite()
        .ok_or_else(|| Error::InvalidParameter("trajectory trees need a finite horizon".into()))?;
    if root >= m.num_states {
        return Err(Error::OutOfRange(format!("root state {root}")));
    }
    let nodes = node_count(m.num_actions, h);
    if nodes.to_u64().is_none_or(|n| n > cap) {
        return Err(Error::CapExceeded {
            what: "tree nodes",
            required: nodes.to_string(),
            cap,
        });
    }
    Ok(h)
}

/// Unchecked build; `m` is valid and the size fits.
fn grow(m: &MdpSpec<f64>, h: usize, root: usize, seed: u64, index: u64) -> TrajectoryTree {
    let na = m.num_actions;
    let total = node_count(na, h).to_usize().expect("checked against cap");
    let mut tree = TrajectoryTree {
        root_state: root,
        depth: h,
        num_actions: na,
        states: vec![0; total],
    };
    tree.states[0] = root as u32;
    let mut rng = tuple_stream(seed, TREE_STREAM_BASE | index);
    for t in 0..h {
        for node in tree.level_start(t)..tree.level_start(t + 1) {
            let s = tree.states[node] as usize;
            for a in 0..na {
                let next = draw_next(m.row(s, a, t), rng.random::<f64>());
                let c = tree.child(node, a);
                tree.states[c] = next;
            }
        }
    }
    tree
}

/// Tree `0` of the stream keyed by `seed`.
pub fn build_tree(m: &MdpSpec<f64>, root: usize, seed: u64) -> Result<TrajectoryTree> {
    build_tree_indexed(m, root, seed, 0, DEFAULT_NODE_CAP)
}

pub fn build_tree_indexed(m: &MdpSpec<f64>, root: usize, seed: u64, index: u64, cap: u64) -> Result<TrajectoryTree> {
    m.ensure_valid()?;
    let h = check(m, root, cap)?;
    Ok(grow(m, h, root, seed, index))
}

/// Discounted reward along the path `pi` picks from the root.
pub fn eval_policy_on_tree(tree: &TrajectoryTree, m: &MdpSpec<f64>, pi: &Policy) -> f64 {
    let mut node = 0;
    let mut value = 0.0;
    let mut weight = 1.0;
    for t in 0..tree.depth {
        let s = tree.states[node] as usize;
        let a = pi.action(s, t);
        value += weight * m.reward(s, a, t);
        weight *= m.discount;
        node = tree.child(node, a);
    }
    value
}

/// `ceil(2 v_max^2 / eps^2 * ln(2 |class| / delta))`.
pub fn default_tree_count(v_max: f64, eps: f64, delta: f64, class_size: u64) -> Result<u64> {
    if !(eps > 0.0 && v_max > 0.0 && delta > 0.0 && delta < 1.0 && class_size > 0) {
        return Err(Error::InvalidParameter(
            "need eps > 0, v_max > 0, delta in (0, 1) and a nonempty class".into(),
        ));
    }
    let r = rational(v_max)? / rational(eps)?;
    let scale = BigRational::from_integer(BigInt::from(2)) * &r * &r;
    let arg = BigRational::from_integer(BigInt::from(2u64) * BigInt::from(class_size)) / rational(delta)?;
    let m = precise::ceil_scaled_ln(&scale, &arg, None)?;
    m.to_u64()
        .ok_or_else(|| Error::InvalidParameter("tree count overflows u64".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TtmSelection {
    pub index: usize,
    pub trees: u64,
    /// Mean tree value per policy, in class order.
    pub estimates: Vec<f64>,
}

/// Scores every policy on the same `trees` trees and returns the first
/// maximiser.
pub fn ttm_select(m: &MdpSpec<f64>, root: usize, policies: &[Policy], trees: u64, seed: u64) -> Result<TtmSelection> {
    ttm_select_capped(m, root, policies, trees, seed, DEFAULT_NODE_CAP)
}

pub fn ttm_select_capped(
    m: &MdpSpec<f64>,
    root: usize,
    policies: &[Policy],
    trees: u64,
    seed: u64,
    cap: u64,
) -> Result<TtmSelection> {
    m.ensure_valid()?;
    let h = check(m, root, cap)?;
    if trees == 0 || policies.is_empty() {
        return Err(Error::InvalidParameter("need at least one tree and one policy".into()));
    }
    for pi in policies {
        if pi.num_states != m.num_states || pi.actions.iter().any(|&a| a >= m.num_actions) {
            return Err(Error::IncompatiblePolicy("policy does not fit the MDP".into()));
        }
        if pi.kind == crate::mdp::Kind::Nonstationary && pi.slices != h {
            return Err(Error::IncompatiblePolicy("policy horizon differs from the MDP".into()));
        }
    }
    let per_tree: Vec<Vec<f64>> = (0..trees)
        .into_par_iter()
        .map(|i| {
            let tree = grow(m, h, root, seed, i);
            policies.iter().map(|pi| eval_policy_on_tree(&tree, m, pi)).collect()
        })
        .collect();
    let mut sums = vec![CompensatedSum::<f64>::new(); policies.len()];
    for row in &per_tree {
        for (acc, v) in sums.iter_mut().zip(row) {
            acc.add(*v);
        }
    }
    let estimates: Vec<f64> = sums.iter().map(|s| s.value() / trees as f64).collect();
    let mut index = 0;
    for (i, v) in estimates.iter().enumerate() {
        if *v > estimates[index] {
            index = i;
        }
    }
    Ok(TtmSelection {
        index,
        trees,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, GenSpec, Horizon, Kind};

    fn mdp(actions: usize, h: usize, deterministic: bool) -> MdpSpec<f64> {
        random_mdp(&GenSpec {
            kind: Kind::Nonstationary,
            states: 3,
            actions,
            horizon: Horizon::Finite(h),
            gamma: 1.0,
            seed: 11,
            deterministic,
        })
        .unwrap()
    }

    #[test]
    fn node_counts() {
        assert_eq!(node_count(2, 2), BigUint::from(7u32));
        assert_eq!(node_count(1, 4), BigUint::from(5u32));
        assert_eq!(node_count(3, 3), BigUint::from(40u32));
        assert_eq!(build_tree(&mdp(2, 2, false), 0, 1).unwrap().states.len(), 7);
    }

    #[test]
    fn single_action_tree_is_a_path() {
        let t = build_tree(&mdp(1, 4, false), 1, 3).unwrap();
        assert_eq!(t.states.len(), 5);
        assert_eq!(t.child(2, 0), 3);
    }

    #[test]
    fn deterministic_tree_follows_dynamics() {
        let m = mdp(2, 3, true);
        let t = build_tree(&m, 0, 9).unwrap();
        for node in 0..t.level_start(3) {
            let depth = (0..4usize).rposition(|d| t.level_start(d) <= node).unwrap();
            for a in 0..2 {
                let s = t.states[node] as usize;
                let expected = m.row(s, a, depth).iter().position(|&p| p == 1.0).unwrap();
                assert_eq!(t.states[t.child(node, a)] as usize, expected);
            }
        }
    }

    #[test]
    fn constant_rewards() {
        let mut m = mdp(2, 3, false);
        m.rewards.iter_mut().for_each(|r| *r = 1.0);
        let t = build_tree(&m, 2, 0).unwrap();
        let pi = Policy::constant(Kind::Nonstationary, 3, 3, 1);
        assert_eq!(eval_policy_on_tree(&t, &m, &pi), 3.0);
        m.rewards.iter_mut().for_each(|r| *r = 0.0);
        assert_eq!(eval_policy_on_tree(&t, &m, &pi), 0.0);
    }

    #[test]
    fn class_order_does_not_change_estimates() {
        let m = mdp(2, 2, false);
        let policies: Vec<Policy> = crate::dp::enumerate_policies(&m, 1 << 12).unwrap().take(20).collect();
        let a = ttm_select(&m, 0, &policies, 50, 4).unwrap();
        let rev: Vec<Policy> = policies.iter().rev().cloned().collect();
        let b = ttm_select(&m, 0, &rev, 50, 4).unwrap();
        let b_back: Vec<f64> = b.estimates.iter().rev().copied().collect();
        assert_eq!(a.estimates, b_back);
        let single = ttm_select(&m, 0, &policies[3..4], 5, 4).unwrap();
        assert_eq!(single.index, 0);
    }

    #[test]
    fn deterministic_mdp_one_tree_is_exact() {
        let m = mdp(2, 3, true);
        let policies: Vec<Policy> = crate::dp::enumerate_policies(&m, 1 << 12).unwrap().collect();
        let sel = ttm_select(&m, 0, &policies, 1, 0).unwrap();
        let opts = crate::dp::SolveOptions::default();
        let (_, v) = crate::dp::optimal_policy(&m, &opts).unwrap();
        assert!((sel.estimates[sel.index] - v.initial()[0]).abs() < 1e-12);
    }

    #[test]
    fn tree_count_formula() {
        // 2 * 4 * ln(2 * 16 / 0.2) = 8 ln 160 = 40.6
        assert_eq!(default_tree_count(2.0, 1.0, 0.2, 16).unwrap(), 41);
        assert!(default_tree_count(2.0, 0.0, 0.2, 16).is_err());
    }

    #[test]
    fn node_cap_enforced() {
        let m = mdp(3, 13, false);
        assert!(matches!(build_tree(&m, 0, 0), Err(Error::CapExceeded { .. })));
    }
}
