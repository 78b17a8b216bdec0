//! Sample-size formulas and tail bounds, evaluated exactly.
//!
//! Logarithms go through [`precise::ceil_scaled_ln`], so every returned
//! count is the true ceiling of the real-valued expression for the given
//! (binary floating-point) parameters.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::cem::truncated_horizon;
use crate::error::{Error, Result};
use crate::mdp::Horizon;
use crate::precise::{self, from_uint, rational, to_biguint};

/// Accuracy target, confidence and problem shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacParams {
    pub eps: f64,
    pub delta: f64,
    pub v_max: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: Horizon,
    pub gamma: f64,
}

impl PacParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::InvalidParameter(format!("v_max {} must be positive", self.v_max)));
        }
        if !(self.eps > 0.0 && self.eps < self.v_max) {
            return Err(Error::InvalidParameter(format!(
                "eps {} must lie in (0, v_max = {})",
                self.eps, self.v_max
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta {} must lie in (0, 1)", self.delta)));
        }
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidParameter("|S| and |A| must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!("gamma {} must lie in [0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// `|S| * |A|^(|S| * steps) / delta`, exactly.
    fn union_ratio(&self, steps: u64) -> Result<BigRational> {
        let count = from_uint(&BigUint::from(self.num_states as u64))
            * precise::pow_rational(self.num_actions as u64, self.num_states as u64 * steps);
        Ok(count / rational(self.delta)?)
    }

    /// `(v_max / eps)^2`, exactly.
    fn range_ratio_sq(&self) -> Result<BigRational> {
        let r = rational(self.v_max)? / rational(self.eps)?;
        Ok(&r * &r)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NsSampleSize {
    /// Samples per (s, a, t).
    #[serde(serialize_with = "precise::serialize_decimal")]
    pub n: BigUint,
    /// `n * |S| * |A| * H`.
    #[serde(serialize_with = "precise::serialize_decimal")]
    pub total: BigUint,
}

/// `N = ceil(2 v_max^2 / eps^2 * ln(|S| |A|^(|S| H) / delta))`.
pub fn cem_ns_sample_size(p: &PacParams) -> Result<NsSampleSize> {
    p.validate()?;
    let h = p
        .horizon
        .finite()
        .ok_or_else(|| Error::InvalidParameter("CEM-NS sample size needs a finite horizon".into()))?;
    let scale = BigRational::from_integer(BigInt::from(2)) * p.range_ratio_sq()?;
    let n = to_biguint(&precise::ceil_scaled_ln(&scale, &p.union_ratio(h as u64)?, None)?);
    let total = &n * BigUint::from((p.num_states * p.num_actions * h) as u64);
    Ok(NsSampleSize { n, total })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SSampleSize {
    pub hbar: usize,
    /// `ceil(32 v_max^2 / eps^2 * ln(|S| |A|^|S| / delta))`
    #[serde(serialize_with = "precise::serialize_decimal")]
    pub concentration_arm: BigUint,
    /// `ceil(8 |S| |A| (Hbar - 1) v_max / eps)`
    #[serde(serialize_with = "precise::serialize_decimal")]
    pub bias_arm: BigUint,
    /// `max(arms) * Hbar` samples per (s, a).
    #[serde(serialize_with = "precise::serialize_decimal")]
    pub n: BigUint,
    /// `n * |S| * |A|`.
    #[serde(serialize_with = "precise::serialize_decimal")]
    pub total: BigUint,
}

/// Stationary sample size with `Hbar` from the truncation rule.
pub fn cem_s_sample_size(p: &PacParams) -> Result<SSampleSize> {
    p.validate()?;
    if p.gamma >= 1.0 {
        return Err(Error::InvalidParameter("CEM-S sample size needs gamma < 1".into()));
    }
    let hbar = truncated_horizon(p.gamma, p.v_max, p.eps)?;
    cem_s_sample_size_at(p, hbar)
}

/// The same formula at an explicit `Hbar >= 1`.
pub fn cem_s_sample_size_at(p: &PacParams, hbar: usize) -> Result<SSampleSize> {
    p.validate()?;
    if hbar == 0 {
        return Err(Error::InvalidParameter("Hbar must be positive".into()));
    }
    let scale = BigRational::from_integer(BigInt::from(32)) * p.range_ratio_sq()?;
    let concentration_arm = to_biguint(&precise::ceil_scaled_ln(&scale, &p.union_ratio(1)?, None)?);
    let pairs = (p.num_states * p.num_actions) as u64;
    let bias = BigRational::from_integer(BigInt::from(8 * pairs * (hbar as u64 - 1)))
        * rational(p.v_max)?
        / rational(p.eps)?;
    let bias_arm = to_biguint(&bias.ceil().to_integer());
    let n = concentration_arm.clone().max(bias_arm.clone()) * BigUint::from(hbar as u64);
    let total = &n * BigUint::from(pairs);
    Ok(SSampleSize {
        hbar,
        concentration_arm,
        bias_arm,
        n,
        total,
    })
}

/// `exp(-2 m gap^2 / (hi - lo)^2)`.
pub fn hoeffding_dep_tail(m: u64, gap: f64, lo: f64, hi: f64) -> Result<f64> {
    if m == 0 || !(hi > lo) || !(gap > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need m >= 1, hi > lo and gap > 0 (m = {m}, gap = {gap}, range = [{lo}, {hi}])"
        )));
    }
    let w = hi - lo;
    Ok((-2.0 * m as f64 * gap * gap / (w * w)).exp())
}

/// `|S| |A| Hbar (Hbar - 1) v_max / N`.
pub fn biased_fraction_bound(pairs: usize, hbar: usize, n: usize, v_max: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    let num = (pairs as f64) * (hbar as f64) * (hbar.saturating_sub(1) as f64);
    Ok(num * v_max / n as f64)
}

/// Lossy view of a big count for reports.
pub fn approx(v: &BigUint) -> f64 {
    v.to_f64().unwrap_or(f64::INFINITY)
}

/// Exact `|S| |A|^(|S| H)`, the number of (state, time-indexed policy) pairs.
pub fn policy_union_size(num_states: usize, num_actions: usize, steps: usize) -> BigUint {
    let r = precise::pow_rational(num_actions as u64, (num_states * steps) as u64);
    let r = r * BigRational::from_integer(BigInt::from(num_states as u64));
    if r.is_zero() {
        return BigUint::zero();
    }
    debug_assert!(r.denom().is_one());
    to_biguint(&r.to_integer())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(eps: f64, delta: f64, v_max: f64) -> PacParams {
        PacParams {
            eps,
            delta,
            v_max,
            num_states: 2,
            num_actions: 2,
            horizon: Horizon::Finite(3),
            gamma: 1.0,
        }
    }

    #[test]
    fn ns_reference_value() {
        let r = cem_ns_sample_size(&ns(1.0, 0.1, 3.0)).unwrap();
        assert_eq!(r.n, BigUint::from(129u32));
        assert_eq!(r.total, BigUint::from(129u32 * 12));
    }

    #[test]
    fn ns_scale_invariance() {
        let a = cem_ns_sample_size(&ns(1.0, 0.1, 3.0)).unwrap();
        let b = cem_ns_sample_size(&ns(2.0, 0.1, 6.0)).unwrap();
        assert_eq!(a.n, b.n);
    }

    #[test]
    fn s_reference_value() {
        let p = PacParams {
            eps: 1.0,
            delta: 0.1,
            v_max: 2.0,
            num_states: 2,
            num_actions: 2,
            horizon: Horizon::Infinite,
            gamma: 0.5,
        };
        let r = cem_s_sample_size(&p).unwrap();
        assert_eq!(r.hbar, 5);
        assert_eq!(r.concentration_arm, BigUint::from(561u32));
        assert_eq!(r.bias_arm, BigUint::from(256u32));
        assert_eq!(r.n, BigUint::from(2805u32));
        let one = cem_s_sample_size_at(&p, 1).unwrap();
        assert!(one.bias_arm.is_zero());
        assert_eq!(one.n, BigUint::from(561u32));
    }

    #[test]
    fn tails() {
        assert!((hoeffding_dep_tail(10, 0.5, 0.0, 1.0).unwrap() - (-5.0f64).exp()).abs() < 1e-18);
        assert!((hoeffding_dep_tail(1, 2.0, 1.0, 3.0).unwrap() - (-2.0f64).exp()).abs() < 1e-18);
        assert!(hoeffding_dep_tail(5, 1e-9, 0.0, 1.0).unwrap() > 0.999_999);
        assert!(hoeffding_dep_tail(0, 0.5, 0.0, 1.0).is_err());
        assert!(hoeffding_dep_tail(1, 0.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn biased_fraction_values() {
        assert_eq!(biased_fraction_bound(4, 1, 10, 3.0).unwrap(), 0.0);
        assert_eq!(biased_fraction_bound(4, 3, 72, 3.0).unwrap(), 1.0);
        assert_eq!(biased_fraction_bound(4, 3, 144, 3.0).unwrap(), 0.5);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(cem_ns_sample_size(&ns(3.0, 0.1, 3.0)).is_err());
        assert!(cem_ns_sample_size(&ns(1.0, 1.0, 3.0)).is_err());
        let mut p = ns(1.0, 0.1, 3.0);
        p.horizon = Horizon::Infinite;
        assert!(cem_ns_sample_size(&p).is_err());
        p.gamma = 1.0;
        assert!(cem_s_sample_size(&p).is_err());
    }

    #[test]
    fn union_size() {
        assert_eq!(policy_union_size(2, 2, 3), BigUint::from(128u32));
    }
}
