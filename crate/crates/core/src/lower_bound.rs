//! The hard instance family behind the sample-complexity lower bound.
//!
//! `K` initial states each offer `L` deterministic zero-reward actions; action
//! `j` from `x_i` leads to `y_ij`. Every `y_ij` pays 1 and stays with
//! probability `p_ij`, otherwise falls into an absorbing zero-reward `z_ij`.
//! The base member has `p_ij = p` everywhere; member `(a, b)` raises pair
//! `(a, b)` to `p + alpha`. No discounting.
//!
//! State order: all `x_i`, then `y_ij` row-major, then `z_ij` row-major.
//! States with a single action in the construction repeat it `L` times.

use num_rational::BigRational;
use num_traits::One;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::{Horizon, Kind, MdpSpec};
use crate::precise::rational;
use crate::scalar::{CompensatedSum, Scalar};

pub const C1_PRIME: f64 = 20.0;
pub const C2_PRIME: f64 = 6.0;
/// Largest `l` whose binomial CDF is summed exactly.
pub const EXACT_CDF_CAP: u64 = 10_000;
const MC_REPLICATIONS: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LowerBoundFamily {
    pub initial_states: usize,
    pub actions: usize,
    pub p: f64,
    pub alpha: f64,
    pub horizon: usize,
}

/// Which member of the family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Member {
    Base,
    /// 0-based `(a, b)`.
    Modified(usize, usize),
}

impl LowerBoundFamily {
    pub fn validate(&self) -> Result<()> {
        if self.initial_states == 0 || self.actions == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter("K, L and H must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::InvalidParameter(format!("p = {} must lie in [0, 1)", self.p)));
        }
        if !(self.alpha >= 0.0 && self.alpha <= (1.0 - self.p) / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} must lie in [0, (1 - p) / 2]",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn pairs(&self) -> usize {
        self.initial_states * self.actions
    }

    pub fn num_states(&self) -> usize {
        self.initial_states + 2 * self.pairs()
    }

    pub fn initial_state(&self, i: usize) -> usize {
        i
    }

    pub fn secondary_state(&self, i: usize, j: usize) -> usize {
        self.initial_states + i * self.actions + j
    }

    pub fn terminal_state(&self, i: usize, j: usize) -> usize {
        self.initial_states + self.pairs() + i * self.actions + j
    }
}

pub fn build_family_member(f: &LowerBoundFamily, which: Member) -> Result<MdpSpec<f64>> {
    f.validate()?;
    if let Member::Modified(a, b) = which {
        if a >= f.initial_states || b >= f.actions {
            return Err(Error::OutOfRange(format!("member ({a}, {b})")));
        }
    }
    let (k, l) = (f.initial_states, f.actions);
    let ns = f.num_states();
    let mut transitions = vec![0.0; ns * l * ns];
    let mut rewards = vec![0.0; ns * l];
    let mut set = |s: usize, a: usize, next: usize, p: f64| transitions[(s * l + a) * ns + next] = p;
    for i in 0..k {
        for j in 0..l {
            set(f.initial_state(i), j, f.secondary_state(i, j), 1.0);
            let stay = if which == Member::Modified(i, j) { f.p + f.alpha } else { f.p };
            let (y, z) = (f.secondary_state(i, j), f.terminal_state(i, j));
            for a in 0..l {
                set(y, a, y, stay);
                set(y, a, z, 1.0 - stay);
                set(z, a, z, 1.0);
            }
        }
    }
    for i in 0..k {
        for j in 0..l {
            let y = f.secondary_state(i, j);
            rewards[y * l..(y + 1) * l].iter_mut().for_each(|r| *r = 1.0);
        }
    }
    let m = MdpSpec {
        kind: Kind::Stationary,
        num_states: ns,
        num_actions: l,
        horizon: Horizon::Finite(f.horizon),
        discount: 1.0,
        v_max: f.horizon as f64,
        transitions,
        rewards,
    };
    m.ensure_valid()?;
    Ok(m)
}

/// `(1 - q^H) / (1 - q)` as the geometric sum `sum_{t < H} q^t`.
pub fn geometric_value<T: Scalar>(q: &T, horizon: usize) -> T {
    let mut acc = T::zero();
    let mut pow = T::one();
    for _ in 0..horizon {
        acc = acc + pow.clone();
        pow = pow * q.clone();
    }
    acc
}

/// Optimal value at `(y_j, 0)`: stay probability `p + alpha` when `j` is the
/// modified pair, `p` otherwise.
pub fn closed_form_value<T: Scalar>(p: &T, alpha: &T, horizon: usize, modified: bool) -> T {
    if modified {
        geometric_value(&(p.clone() + alpha.clone()), horizon)
    } else {
        geometric_value(p, horizon)
    }
}

/// `(1 - q^H) / (1 - q)` for rational `q = a / b < 1`, as
/// `b (b^H - a^H) / (b^H (b - a))` with a single normalisation.
pub fn exact_geometric_value(q: &BigRational, horizon: usize) -> BigRational {
    let (a, b) = (q.numer(), q.denom());
    let bh = num_traits::pow(b.clone(), horizon);
    let ah = num_traits::pow(a.clone(), horizon);
    BigRational::new(b * (&bh - ah), bh * (b - a))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapCertificate {
    pub horizon: usize,
    pub eps: f64,
    pub p: f64,
    pub alpha: f64,
    /// `V_modified(y) - V_base(y)`, rounded.
    pub gap: f64,
    /// Exact rational test of `gap > 2 eps`.
    pub holds: bool,
}

/// Gap at `p = 1 - 1/H`, `alpha = 40 eps / H^2`, decided exactly.
pub fn gap_certificate(horizon: usize, eps: f64) -> Result<GapCertificate> {
    if horizon <= 200 {
        return Err(Error::InvalidParameter(format!("H = {horizon} must exceed 200")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must lie in (0, 1)")));
    }
    let h = BigRational::from_integer(horizon.into());
    let p = BigRational::one() - h.recip();
    let e = rational(eps)?;
    let alpha = BigRational::from_integer(40.into()) * &e / (&h * &h);
    let gap = exact_geometric_value(&(&p + &alpha), horizon) - exact_geometric_value(&p, horizon);
    let two_eps = BigRational::from_integer(2.into()) * &e;
    Ok(GapCertificate {
        horizon,
        eps,
        p: p.to_f64_lossy(),
        alpha: alpha.to_f64_lossy(),
        gap: gap.to_f64_lossy(),
        holds: gap > two_eps,
    })
}

fn check_bernoulli(p: f64, alpha: f64) -> Result<()> {
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must lie in (1/2, 1)")));
    }
    if !(alpha >= 0.0 && alpha <= (1.0 - p) / 2.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} must lie in [0, (1 - p) / 2]")));
    }
    Ok(())
}

/// `ln[(1 + alpha/p)^s (1 - alpha/(1-p))^(l-s)]`.
pub fn log_likelihood_ratio(s: u64, l: u64, p: f64, alpha: f64) -> Result<f64> {
    if s > l {
        return Err(Error::InvalidParameter(format!("s = {s} exceeds l = {l}")));
    }
    if !(p > 0.0 && p < 1.0) || !(alpha >= 0.0 && alpha <= (1.0 - p) / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "need p in (0, 1) and alpha in [0, (1 - p) / 2], got p = {p}, alpha = {alpha}"
        )));
    }
    Ok(s as f64 * (alpha / p).ln_1p() + (l - s) as f64 * (-alpha / (1.0 - p)).ln_1p())
}

pub fn likelihood_ratio(s: u64, l: u64, p: f64, alpha: f64) -> Result<f64> {
    Ok(log_likelihood_ratio(s, l, p, alpha)?.exp())
}

/// `theta = exp(-c1 alpha^2 l / (p (1 - p)))`.
pub fn theta(l: u64, p: f64, alpha: f64, c1: f64) -> f64 {
    (-c1 * alpha * alpha * l as f64 / (p * (1.0 - p))).exp()
}

/// `ln theta`, kept separate so tiny thetas do not underflow.
pub fn log_theta(l: u64, p: f64, alpha: f64, c1: f64) -> f64 {
    -c1 * alpha * alpha * l as f64 / (p * (1.0 - p))
}

/// `Delta = sqrt(2 p (1 - p) l ln(c2 / (2 theta)))`.
pub fn deviation(l: u64, p: f64, alpha: f64, c1: f64, c2: f64) -> f64 {
    let log_arg = (c2 / 2.0).ln() - log_theta(l, p, alpha, c1);
    (2.0 * p * (1.0 - p) * l as f64 * log_arg.max(0.0)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMethod {
    ExactCdf,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChernoffReport {
    pub l: u64,
    pub p: f64,
    pub alpha: f64,
    pub theta: f64,
    pub delta_cap: f64,
    /// `P(s <= p l + Delta)` for `s ~ Binomial(l, p)`.
    pub probability: f64,
    pub method: ProbabilityMethod,
    /// Zero for the exact method.
    pub std_error: f64,
    /// `1 - 2 theta / c2`.
    pub bound: f64,
}

/// `P(Binomial(l, p) <= k)` by log-space summation of the smaller tail.
pub fn binomial_cdf(l: u64, p: f64, k: u64) -> f64 {
    if k >= l {
        return 1.0;
    }
    let mut ln_fact = Vec::with_capacity(l as usize + 1);
    let mut acc = 0.0f64;
    ln_fact.push(0.0);
    for i in 1..=l {
        acc += (i as f64).ln();
        ln_fact.push(acc);
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let ln_pmf = |j: u64| ln_fact[l as usize] - ln_fact[j as usize] - ln_fact[(l - j) as usize] + j as f64 * lp + (l - j) as f64 * lq;
    let sum = |range: std::ops::RangeInclusive<u64>| {
        let mut s = CompensatedSum::<f64>::new();
        for j in range {
            s.add(ln_pmf(j).exp());
        }
        s.value()
    };
    let mean = l as f64 * p;
    if (k as f64) < mean {
        sum(0..=k).min(1.0)
    } else {
        (1.0 - sum(k + 1..=l)).max(0.0)
    }
}

/// Event `s <= p l + Delta` for `s ~ Binomial(l, p)`, against its lower bound.
pub fn chernoff_event_probability(l: u64, p: f64, alpha: f64, c1: f64, c2: f64, seed: u64) -> Result<ChernoffReport> {
    check_bernoulli(p, alpha)?;
    if l == 0 {
        return Err(Error::InvalidParameter("l must be positive".into()));
    }
    let th = theta(l, p, alpha, c1);
    let delta_cap = deviation(l, p, alpha, c1, c2);
    let threshold = p * l as f64 + delta_cap;
    let k = threshold.floor().min(l as f64) as u64;
    let (probability, method, std_error) = if l <= EXACT_CDF_CAP {
        (binomial_cdf(l, p, k), ProbabilityMethod::ExactCdf, 0.0)
    } else {
        let dist = Binomial::new(l, p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hits = (0..MC_REPLICATIONS).filter(|_| dist.sample(&mut rng) <= k).count() as f64;
        let est = hits / MC_REPLICATIONS as f64;
        (est, ProbabilityMethod::MonteCarlo, (est * (1.0 - est) / MC_REPLICATIONS as f64).sqrt())
    };
    Ok(ChernoffReport {
        l,
        p,
        alpha,
        theta: th,
        delta_cap,
        probability,
        method,
        std_error,
        bound: 1.0 - 2.0 * th / c2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleFloor {
    /// `H^3 / (64000 eps^2) ln(1 / (6 delta))`; negative means the bound is vacuous.
    pub per_pair: f64,
    /// `K L * per_pair`.
    pub total: f64,
}

pub fn sample_floor(horizon: usize, eps: f64, delta: f64, pairs: usize) -> Result<SampleFloor> {
    if horizon <= 200 {
        return Err(Error::InvalidParameter(format!("H = {horizon} must exceed 200")));
    }
    if !(eps > 0.0 && eps < 1.0) || !(delta > 0.0 && delta < 0.5) || pairs == 0 {
        return Err(Error::InvalidParameter(
            "need eps in (0, 1), delta in (0, 1/2) and at least one pair".into(),
        ));
    }
    let h = horizon as f64;
    let per_pair = h * h * h / (64000.0 * eps * eps) * (1.0 / (6.0 * delta)).ln();
    Ok(SampleFloor {
        per_pair,
        total: per_pair * pairs as f64,
    })
}
