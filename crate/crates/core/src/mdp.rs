//! Tabular MDPs: representation, validation, JSON format and a random generator.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on transition-row mass.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Stationary,
    Nonstationary,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Stationary => f.write_str("stationary"),
            Kind::Nonstationary => f.write_str("nonstationary"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl Horizon {
    pub fn finite(&self) -> Option<usize> {
        match self {
            Horizon::Finite(h) => Some(*h),
            Horizon::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Horizon::Infinite)
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Finite(h) => write!(f, "{h}"),
            Horizon::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Horizon::Finite(h) => s.serialize_u64(*h as u64),
            Horizon::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match Value::deserialize(d)? {
            Value::Number(n) => n
                .as_u64()
                .map(|h| Horizon::Finite(h as usize))
                .ok_or_else(|| D::Error::custom("horizon must be a positive integer or \"inf\"")),
            Value::String(s) if s == "inf" => Ok(Horizon::Infinite),
            other => Err(D::Error::custom(format!("bad horizon {other}"))),
        }
    }
}

/// One failed invariant, naming the offending coordinate where there is one.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyStateOrActionSet,
    ZeroHorizon,
    NonstationaryInfiniteHorizon,
    DiscountOutOfRange { gamma: f64 },
    UndiscountedInfiniteHorizon,
    ShapeMismatch { field: &'static str, expected: usize, found: usize },
    RowSum { s: usize, a: usize, t: Option<usize>, sum: f64 },
    BadProbability { s: usize, a: usize, t: Option<usize>, next: usize, p: f64 },
    NonFiniteReward { s: usize, a: usize, t: Option<usize> },
    BadValueCeiling { v_max: f64, limit: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let coord = |s: &usize, a: &usize, t: &Option<usize>| match t {
            Some(t) => format!("({s},{a},{t})"),
            None => format!("({s},{a})"),
        };
        match self {
            Violation::EmptyStateOrActionSet => f.write_str("state and action sets must be nonempty"),
            Violation::ZeroHorizon => f.write_str("horizon must be positive"),
            Violation::NonstationaryInfiniteHorizon => {
                f.write_str("nonstationary MDPs need a finite horizon")
            }
            Violation::DiscountOutOfRange { gamma } => write!(f, "discount {gamma} outside [0,1]"),
            Violation::UndiscountedInfiniteHorizon => {
                f.write_str("discount 1 is only allowed with a finite horizon")
            }
            Violation::ShapeMismatch { field, expected, found } => {
                write!(f, "{field} has {found} entries, expected {expected}")
            }
            Violation::RowSum { s, a, t, sum } => {
                write!(f, "transition row {} sums to {sum}", coord(s, a, t))
            }
            Violation::BadProbability { s, a, t, next, p } => {
                write!(f, "transition {} -> {next} has probability {p}", coord(s, a, t))
            }
            Violation::NonFiniteReward { s, a, t } => {
                write!(f, "reward at {} is not finite", coord(s, a, t))
            }
            Violation::BadValueCeiling { v_max, limit } => {
                write!(f, "v_max {v_max} must be positive and at most {limit}")
            }
        }
    }
}

/// Tabular MDP `(S, A, T, R, H, gamma)` with a declared value ceiling.
///
/// Transitions are stored flat as `[s][a][t][s']` and rewards as `[s][a][t]`;
/// stationary models have a single time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpSpec<T> {
    pub kind: Kind,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: Horizon,
    pub discount: T,
    pub v_max: T,
    pub transitions: Vec<T>,
    pub rewards: Vec<T>,
}

impl<T: Scalar> MdpSpec<T> {
    /// Number of time slices carried by the tensors (1 when stationary).
    pub fn time_slices(&self) -> usize {
        match self.kind {
            Kind::Stationary => 1,
            Kind::Nonstationary => self.horizon.finite().unwrap_or(0),
        }
    }

    #[inline]
    pub fn tuple_index(&self, s: usize, a: usize, t: usize) -> usize {
        let t = if self.kind == Kind::Stationary { 0 } else { t };
        (s * self.num_actions + a) * self.time_slices() + t
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, t: usize, next: usize) -> &T {
        &self.transitions[self.tuple_index(s, a, t) * self.num_states + next]
    }

    pub fn row(&self, s: usize, a: usize, t: usize) -> &[T] {
        let base = self.tuple_index(s, a, t) * self.num_states;
        &self.transitions[base..base + self.num_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize, t: usize) -> &T {
        &self.rewards[self.tuple_index(s, a, t)]
    }

    pub fn num_tuples(&self) -> usize {
        self.num_states * self.num_actions * self.time_slices()
    }

    /// Checks every invariant and lists what is wrong. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.num_states == 0 || self.num_actions == 0 {
            out.push(Violation::EmptyStateOrActionSet);
            return out;
        }
        if self.horizon == Horizon::Finite(0) {
            out.push(Violation::ZeroHorizon);
        }
        if self.kind == Kind::Nonstationary && self.horizon.is_infinite() {
            out.push(Violation::NonstationaryInfiniteHorizon);
            return out;
        }
        let gamma = self.discount.to_f64_lossy();
        if !(0.0..=1.0).contains(&gamma) {
            out.push(Violation::DiscountOutOfRange { gamma });
        }
        if self.horizon.is_infinite() && gamma >= 1.0 {
            out.push(Violation::UndiscountedInfiniteHorizon);
        }
        let tuples = self.num_tuples();
        if self.transitions.len() != tuples * self.num_states {
            out.push(Violation::ShapeMismatch {
                field: "transitions",
                expected: tuples * self.num_states,
                found: self.transitions.len(),
            });
        }
        if self.rewards.len() != tuples {
            out.push(Violation::ShapeMismatch {
                field: "rewards",
                expected: tuples,
                found: self.rewards.len(),
            });
        }
        if !out.iter().all(|v| matches!(v, Violation::DiscountOutOfRange { .. })) {
            return out;
        }
        let slices = self.time_slices();
        let t_label = |t: usize| (self.kind == Kind::Nonstationary).then_some(t);
        let mut rewards_unit = true;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for t in 0..slices {
                    let mut sum = T::zero();
                    for (next, p) in self.row(s, a, t).iter().enumerate() {
                        let pf = p.to_f64_lossy();
                        if !(pf.is_finite() && (0.0..=1.0 + ROW_SUM_TOLERANCE).contains(&pf)) {
                            out.push(Violation::BadProbability { s, a, t: t_label(t), next, p: pf });
                        }
                        sum = sum + p.clone();
                    }
                    let sum = sum.to_f64_lossy();
                    if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
                        out.push(Violation::RowSum { s, a, t: t_label(t), sum });
                    }
                    let r = self.reward(s, a, t).to_f64_lossy();
                    if !r.is_finite() {
                        out.push(Violation::NonFiniteReward { s, a, t: t_label(t) });
                    }
                    rewards_unit &= (0.0..=1.0).contains(&r);
                }
            }
        }
        let v_max = self.v_max.to_f64_lossy();
        let limit = if rewards_unit { return_ceiling(self.horizon, gamma) } else { f64::INFINITY };
        if !(v_max > 0.0 && v_max <= limit * (1.0 + 1e-12)) {
            out.push(Violation::BadValueCeiling { v_max, limit });
        }
        out
    }

    /// Returns `Err` listing all violations unless the model is valid.
    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMdp(v))
        }
    }

    /// Divides every transition row by its mass. Never applied implicitly.
    pub fn renormalize(&mut self) {
        let n = self.num_states;
        for row in self.transitions.chunks_mut(n) {
            let mut sum = T::zero();
            for p in row.iter() {
                sum = sum + p.clone();
            }
            if !sum.is_zero() {
                for p in row.iter_mut() {
                    *p = p.clone() / sum.clone();
                }
            }
        }
    }

    /// Re-expresses the model with an explicit time index over a finite horizon.
    pub fn to_nonstationary(&self) -> Result<MdpSpec<T>> {
        let h = self.horizon.finite().ok_or_else(|| {
            Error::InvalidParameter("a time-indexed copy needs a finite horizon".into())
        })?;
        if self.kind == Kind::Nonstationary {
            return Ok(self.clone());
        }
        let (ns, na) = (self.num_states, self.num_actions);
        let mut transitions = Vec::with_capacity(ns * na * h * ns);
        let mut rewards = Vec::with_capacity(ns * na * h);
        for s in 0..ns {
            for a in 0..na {
                for _ in 0..h {
                    transitions.extend_from_slice(self.row(s, a, 0));
                    rewards.push(self.reward(s, a, 0).clone());
                }
            }
        }
        Ok(MdpSpec {
            kind: Kind::Nonstationary,
            transitions,
            rewards,
            ..self.clone()
        })
    }

    /// Same dynamics, different horizon. Only meaningful for stationary models.
    pub fn with_horizon(&self, horizon: Horizon) -> Result<MdpSpec<T>> {
        if self.kind != Kind::Stationary {
            return Err(Error::InvalidParameter(
                "changing the horizon of a time-indexed model".into(),
            ));
        }
        // With rewards in [0, 1] the ceiling of the new horizon stays valid,
        // and a shorter horizon may lower it.
        let unit = self.rewards.iter().all(|r| *r >= T::zero() && *r <= T::one());
        let ceiling = T::from_f64_exact(return_ceiling(horizon, self.discount.to_f64_lossy()));
        let v_max = if unit && self.v_max > ceiling { ceiling } else { self.v_max.clone() };
        Ok(MdpSpec {
            horizon,
            v_max,
            ..self.clone()
        })
    }

    /// Converts every entry through `f`.
    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(&T) -> U) -> MdpSpec<U> {
        MdpSpec {
            kind: self.kind,
            num_states: self.num_states,
            num_actions: self.num_actions,
            horizon: self.horizon,
            discount: f(&self.discount),
            v_max: f(&self.v_max),
            transitions: self.transitions.iter().map(&f).collect(),
            rewards: self.rewards.iter().map(&f).collect(),
        }
    }

    /// True when every row puts all mass on a single successor.
    pub fn is_deterministic(&self) -> bool {
        self.transitions
            .chunks(self.num_states)
            .all(|row| row.iter().filter(|p| !p.is_zero()).count() == 1)
    }
}

/// Largest discounted return attainable with per-step rewards in `[0, 1]`.
pub fn return_ceiling(horizon: Horizon, gamma: f64) -> f64 {
    match horizon {
        Horizon::Finite(h) if gamma >= 1.0 => h as f64,
        Horizon::Finite(h) => (h as f64).min(1.0 / (1.0 - gamma)),
        Horizon::Infinite => 1.0 / (1.0 - gamma),
    }
}

impl MdpSpec<f64> {
    /// Exact rational copy; every float converts to its binary value.
    pub fn to_exact(&self) -> MdpSpec<num_rational::BigRational> {
        self.map_scalar(|x| num_rational::BigRational::from_f64_exact(*x))
    }

    pub fn to_json_value(&self) -> Value {
        let (ns, na) = (self.num_states, self.num_actions);
        let slices = self.time_slices();
        let mut t_arr = Vec::with_capacity(ns);
        let mut r_arr = Vec::with_capacity(ns);
        for s in 0..ns {
            let mut t_s = Vec::with_capacity(na);
            let mut r_s = Vec::with_capacity(na);
            for a in 0..na {
                match self.kind {
                    Kind::Stationary => {
                        t_s.push(Value::from(self.row(s, a, 0).to_vec()));
                        r_s.push(Value::from(*self.reward(s, a, 0)));
                    }
                    Kind::Nonstationary => {
                        let rows: Vec<Value> =
                            (0..slices).map(|t| Value::from(self.row(s, a, t).to_vec())).collect();
                        let rs: Vec<f64> = (0..slices).map(|t| *self.reward(s, a, t)).collect();
                        t_s.push(Value::Array(rows));
                        r_s.push(Value::from(rs));
                    }
                }
            }
            t_arr.push(Value::Array(t_s));
            r_arr.push(Value::Array(r_s));
        }
        serde_json::json!({
            "kind": self.kind,
            "S": ns,
            "A": na,
            "H": self.horizon,
            "gamma": self.discount,
            "v_max": self.v_max,
            "T": t_arr,
            "R": r_arr,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("MDP serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("MDP serializes")
    }

    /// Parses the MDP JSON format. The result is not validated.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            kind: Kind,
            #[serde(rename = "S")]
            s: usize,
            #[serde(rename = "A")]
            a: usize,
            #[serde(rename = "H")]
            h: Horizon,
            gamma: f64,
            v_max: f64,
            #[serde(rename = "T")]
            t: Value,
            #[serde(rename = "R")]
            r: Value,
        }
        let raw: Raw = serde_json::from_str(text)?;
        let depth_t = if raw.kind == Kind::Stationary { 3 } else { 4 };
        let mut transitions = Vec::new();
        flatten(&raw.t, depth_t, &mut transitions)?;
        let mut rewards = Vec::new();
        flatten(&raw.r, depth_t - 1, &mut rewards)?;
        Ok(MdpSpec {
            kind: raw.kind,
            num_states: raw.s,
            num_actions: raw.a,
            horizon: raw.h,
            discount: raw.gamma,
            v_max: raw.v_max,
            transitions,
            rewards,
        })
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

fn flatten(v: &Value, depth: usize, out: &mut Vec<f64>) -> Result<()> {
    if depth == 0 {
        let x = v
            .as_f64()
            .ok_or_else(|| Error::Format(format!("expected a number, found {v}")))?;
        out.push(x);
        return Ok(());
    }
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Format(format!("expected a nested array, found {v}")))?;
    for item in arr {
        flatten(item, depth - 1, out)?;
    }
    Ok(())
}

/// Parameters for [`random_mdp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub kind: Kind,
    pub states: usize,
    pub actions: usize,
    pub horizon: Horizon,
    pub gamma: f64,
    pub seed: u64,
    /// One-hot transition rows instead of flat-simplex draws.
    #[serde(default)]
    pub deterministic: bool,
}

/// Random MDP with rewards uniform on `[0, 1]` and transition rows drawn
/// uniformly from the simplex. `v_max` is set to `min(H, 1/(1-gamma))`.
pub fn random_mdp(spec: &GenSpec) -> Result<MdpSpec<f64>> {
    if spec.kind == Kind::Nonstationary && spec.horizon.is_infinite() {
        return Err(Error::InvalidParameter(
            "nonstationary MDPs need a finite horizon".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let slices = match spec.kind {
        Kind::Stationary => 1,
        Kind::Nonstationary => spec.horizon.finite().unwrap_or(1),
    };
    let ns = spec.states;
    let tuples = ns * spec.actions * slices;
    let mut transitions = Vec::with_capacity(tuples * ns);
    let mut rewards = Vec::with_capacity(tuples);
    for _ in 0..tuples {
        if spec.deterministic {
            let next = rng.random_range(0..ns);
            transitions.extend((0..ns).map(|j| if j == next { 1.0 } else { 0.0 }));
        } else {
            transitions.extend(flat_simplex(&mut rng, ns));
        }
        rewards.push(rng.random::<f64>());
    }
    let m = MdpSpec {
        kind: spec.kind,
        num_states: ns,
        num_actions: spec.actions,
        horizon: spec.horizon,
        discount: spec.gamma,
        v_max: return_ceiling(spec.horizon, spec.gamma),
        transitions,
        rewards,
    };
    m.ensure_valid()?;
    Ok(m)
}

/// Uniform draw from the probability simplex via normalized exponentials.
///
/// The last coordinate absorbs the rounding residue so the row sums to 1
/// within one ulp of each entry.
fn flat_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = draws.iter().sum();
    let mut row: Vec<f64> = draws.iter().map(|d| d / total).collect();
    let head: f64 = row[..n - 1].iter().sum();
    row[n - 1] = (1.0 - head).max(0.0);
    row
}
