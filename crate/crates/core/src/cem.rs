//! Certainty equivalence: plan in the maximum-likelihood model built from a
//! dataset, for time-indexed (CEM-NS) and stationary (CEM-S) problems.

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive};

use crate::dp::{optimal_policy, SolveOptions};
use crate::error::{Error, Result};
use crate::mdp::{Horizon, Kind, MdpSpec};
use crate::policy::{Policy, ValueTable};
use crate::precise;
use crate::sampling::Dataset;
use crate::scalar::Scalar;

/// `M-hat`: skeleton rewards, horizon and discount with `T-hat = count / N`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalModel<T> {
    pub mdp: MdpSpec<T>,
    pub n: usize,
    pub dataset_digest: String,
    pub source_seed: u64,
}

fn check_dims<T: Scalar>(d: &Dataset, skeleton: &MdpSpec<T>) -> Result<()> {
    if d.num_states != skeleton.num_states || d.num_actions != skeleton.num_actions {
        return Err(Error::Dimension(format!(
            "dataset is {}x{}, skeleton is {}x{}",
            d.num_states, d.num_actions, skeleton.num_states, skeleton.num_actions
        )));
    }
    Ok(())
}

fn counts_to_rows<T: Scalar>(d: &Dataset) -> Vec<T> {
    let ns = d.num_states;
    let mut out = Vec::with_capacity(d.num_tuples() * ns);
    let mut counts = vec![0u64; ns];
    for tuple in d.samples.chunks(d.n) {
        counts.iter_mut().for_each(|c| *c = 0);
        for &x in tuple {
            counts[x as usize] += 1;
        }
        out.extend(counts.iter().map(|&c| T::from_ratio(c, d.n as u64)));
    }
    out
}

/// Time-indexed maximum-likelihood model from time-indexed data.
pub fn build_empirical_ns<T: Scalar>(d: &Dataset, skeleton: &MdpSpec<T>) -> Result<EmpiricalModel<T>> {
    if d.kind != Kind::Nonstationary {
        return Err(Error::Dimension("CEM-NS needs time-indexed data".into()));
    }
    check_dims(d, skeleton)?;
    let h = skeleton
        .horizon
        .finite()
        .ok_or_else(|| Error::Dimension("CEM-NS needs a finite-horizon skeleton".into()))?;
    if d.time_slices() != h {
        return Err(Error::Dimension(format!(
            "dataset covers {} steps, horizon is {h}",
            d.time_slices()
        )));
    }
    let skeleton = skeleton.to_nonstationary()?;
    let mdp = MdpSpec {
        transitions: counts_to_rows(d),
        ..skeleton
    };
    mdp.ensure_valid()?;
    Ok(EmpiricalModel {
        mdp,
        n: d.n,
        dataset_digest: d.digest(),
        source_seed: d.source_seed,
    })
}

/// Stationary maximum-likelihood model. Time-indexed data is pooled first.
pub fn build_empirical_s<T: Scalar>(d: &Dataset, skeleton: &MdpSpec<T>) -> Result<EmpiricalModel<T>> {
    if skeleton.kind != Kind::Stationary {
        return Err(Error::Dimension("CEM-S needs a stationary skeleton".into()));
    }
    check_dims(d, skeleton)?;
    let pooled;
    let d = if d.kind == Kind::Nonstationary {
        pooled = d.pooled();
        &pooled
    } else {
        d
    };
    let mdp = MdpSpec {
        transitions: counts_to_rows(d),
        ..skeleton.clone()
    };
    mdp.ensure_valid()?;
    Ok(EmpiricalModel {
        mdp,
        n: d.n,
        dataset_digest: d.digest(),
        source_seed: d.source_seed,
    })
}

/// CEM-NS: the lowest-index greedy optimal policy of `M-hat` and `V*` of `M-hat`.
pub fn cem_ns_solve<T: Scalar>(d: &Dataset, skeleton: &MdpSpec<T>) -> Result<(Policy, ValueTable<T>)> {
    let model = build_empirical_ns(d, skeleton)?;
    optimal_policy(&model.mdp, &SolveOptions::default())
}

/// CEM-S: stationary optimal policy of `M-hat` by value iteration. A
/// finite-horizon skeleton is solved by backward induction instead.
pub fn cem_s_solve<T: Scalar>(d: &Dataset, skeleton: &MdpSpec<T>) -> Result<(Policy, ValueTable<T>)> {
    let model = build_empirical_s(d, skeleton)?;
    optimal_policy(&model.mdp, &SolveOptions::default())
}

/// `ceil( max(ln(4 v_max / eps), 1) / (1 - gamma) )`, evaluated exactly.
///
/// The logarithm is floored at 1 so the horizon stays positive for inputs
/// with `4 v_max / eps < e`.
pub fn truncated_horizon(gamma: f64, v_max: f64, eps: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("discount {gamma} must lie in [0, 1)")));
    }
    if !(eps > 0.0 && eps < v_max) {
        return Err(Error::InvalidParameter(format!(
            "eps {eps} must lie in (0, v_max = {v_max})"
        )));
    }
    let scale = precise::rational(1.0)? / (precise::rational(1.0)? - precise::rational(gamma)?);
    let arg = precise::rational(4.0)? * precise::rational(v_max)? / precise::rational(eps)?;
    let h: BigInt = precise::ceil_scaled_ln(&scale, &arg, Some(&num_rational::BigRational::one()))?;
    h.to_usize()
        .ok_or_else(|| Error::InvalidParameter("truncated horizon overflows".into()))
}

/// `M_Hbar`: the stationary model cut to the finite horizon `Hbar`.
pub fn truncate_horizon(m: &MdpSpec<f64>, eps: f64) -> Result<(MdpSpec<f64>, usize)> {
    if m.kind != Kind::Stationary {
        return Err(Error::InvalidParameter("truncation applies to stationary models".into()));
    }
    let hbar = truncated_horizon(m.discount, m.v_max, eps)?;
    Ok((m.with_horizon(Horizon::Finite(hbar))?, hbar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::evaluate_policy;
    use crate::mdp::{random_mdp, GenSpec};
    use crate::sampling::sample_dataset;
    use num_rational::BigRational;

    fn ns_skeleton(seed: u64, deterministic: bool) -> MdpSpec<f64> {
        random_mdp(&GenSpec {
            kind: Kind::Nonstationary,
            states: 3,
            actions: 2,
            horizon: Horizon::Finite(3),
            gamma: 1.0,
            seed,
            deterministic,
        })
        .unwrap()
    }

    #[test]
    fn empirical_rows_are_multiples_of_one_over_n() {
        let m = ns_skeleton(1, false);
        let d = sample_dataset(&m, 7, 3).unwrap();
        let e = build_empirical_ns(&d, &m).unwrap();
        for p in &e.mdp.transitions {
            let scaled = p * 7.0;
            assert!((scaled - scaled.round()).abs() < 1e-12);
        }
        let exact = build_empirical_ns::<BigRational>(&d, &m.to_exact()).unwrap();
        for row in exact.mdp.transitions.chunks(3) {
            let total: BigRational = row.iter().cloned().sum();
            assert!(total.is_one());
        }
    }

    #[test]
    fn deterministic_model_is_recovered_exactly() {
        let m = ns_skeleton(2, true);
        let d = sample_dataset(&m, 5, 0).unwrap();
        let e = build_empirical_ns(&d, &m).unwrap();
        assert_eq!(e.mdp.transitions, m.transitions);
        let (pi, _) = cem_ns_solve(&d, &m).unwrap();
        let (pi_true, _) = optimal_policy(&m, &SolveOptions::default()).unwrap();
        assert_eq!(pi, pi_true);
    }

    #[test]
    fn single_sample_gives_deterministic_model() {
        let m = ns_skeleton(3, false);
        let d = sample_dataset(&m, 1, 4).unwrap();
        assert!(build_empirical_ns(&d, &m).unwrap().mdp.is_deterministic());
    }

    #[test]
    fn zero_reward_solution_is_action_zero() {
        let mut m = ns_skeleton(4, false);
        m.rewards.iter_mut().for_each(|r| *r = 0.0);
        let d = sample_dataset(&m, 3, 4).unwrap();
        let (pi, v) = cem_ns_solve(&d, &m).unwrap();
        assert!(pi.actions.iter().all(|&a| a == 0));
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let m = ns_skeleton(5, false);
        let d = sample_dataset(&m, 2, 0).unwrap();
        let mut other = ns_skeleton(5, false);
        other.horizon = Horizon::Finite(2);
        assert!(matches!(build_empirical_ns(&d, &other), Err(Error::Dimension(_))));
        assert!(build_empirical_ns(&d.pooled(), &m).is_err());
    }

    #[test]
    fn stationary_degenerate_column() {
        let skel = MdpSpec {
            kind: Kind::Stationary,
            num_states: 2,
            num_actions: 1,
            horizon: Horizon::Infinite,
            discount: 0.5,
            v_max: 2.0,
            transitions: vec![0.5; 4],
            rewards: vec![1.0, 0.0],
        };
        let d = Dataset::from_samples(Kind::Stationary, 2, 1, None, 3, vec![1, 1, 1, 0, 1, 0]).unwrap();
        let e = build_empirical_s(&d, &skel).unwrap();
        assert_eq!(e.mdp.row(0, 0, 0), &[0.0, 1.0]);
        assert_eq!(e.mdp.row(1, 0, 0), &[2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn deterministic_stationary_values_match_geometric_sums() {
        // two states: 0 -> 1 with reward 1, 1 -> 1 with reward 0.5
        let skel = MdpSpec {
            kind: Kind::Stationary,
            num_states: 2,
            num_actions: 1,
            horizon: Horizon::Infinite,
            discount: 0.5,
            v_max: 2.0,
            transitions: vec![0.5; 4],
            rewards: vec![1.0, 0.5],
        };
        let d = Dataset::from_samples(Kind::Stationary, 2, 1, None, 2, vec![1, 1, 1, 1]).unwrap();
        let (pi, v) = cem_s_solve(&d, &skel).unwrap();
        assert_eq!(pi.actions, vec![0, 0]);
        let v1: f64 = 0.5 / (1.0 - 0.5);
        let v0: f64 = 1.0 + 0.5 * v1;
        assert!((v.initial()[1] - v1).abs() < 1e-10);
        assert!((v.initial()[0] - v0).abs() < 1e-10);
    }

    #[test]
    fn empirical_means_pick_the_better_arm() {
        // state 0 has two actions; reaching state 1 pays 1 per step, state 2 pays 0.
        let skel = MdpSpec {
            kind: Kind::Stationary,
            num_states: 3,
            num_actions: 2,
            horizon: Horizon::Infinite,
            discount: 0.5,
            v_max: 2.0,
            transitions: vec![
                0.0, 0.5, 0.5, 0.0, 0.5, 0.5, // s0
                0.0, 1.0, 0.0, 0.0, 1.0, 0.0, // s1
                0.0, 0.0, 1.0, 0.0, 0.0, 1.0, // s2
            ],
            rewards: vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        };
        // action 0 reached state 1 in 1/4 samples, action 1 in 3/4
        let samples = vec![1, 2, 2, 2, 1, 1, 1, 2, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2, 2];
        let d = Dataset::from_samples(Kind::Stationary, 3, 2, None, 4, samples).unwrap();
        let (pi, _) = cem_s_solve(&d, &skel).unwrap();
        assert_eq!(pi.action(0, 0), 1);
    }

    #[test]
    fn truncated_horizon_values() {
        assert_eq!(truncated_horizon(0.9, 10.0, 1.0).unwrap(), 37);
        assert_eq!(truncated_horizon(0.5, 2.0, 1.0).unwrap(), 5);
        assert!(truncated_horizon(0.5, 2.0, 2.0).is_err());
        assert!(truncated_horizon(1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn truncation_loss_is_bounded() {
        let m = random_mdp(&GenSpec {
            kind: Kind::Stationary,
            states: 3,
            actions: 2,
            horizon: Horizon::Infinite,
            gamma: 0.7,
            seed: 2,
            deterministic: false,
        })
        .unwrap();
        let eps = 0.5;
        let (mh, hbar) = truncate_horizon(&m, eps).unwrap();
        assert!(0.7f64.powi(hbar as i32) * m.v_max <= eps / 4.0);
        let opts = SolveOptions { tolerance: 1e-14, ..Default::default() };
        for pi in crate::dp::enumerate_policies(&m, 100).unwrap() {
            let full = evaluate_policy(&m, &pi, &opts).unwrap();
            let cut = evaluate_policy(&mh, &pi, &opts).unwrap();
            for s in 0..3 {
                let (v, vh) = (full.initial()[s], cut.initial()[s]);
                assert!(vh <= v + 1e-12 && v - eps / 4.0 <= vh + 1e-12);
            }
        }
    }
}
