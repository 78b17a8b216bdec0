//! Deterministic Markovian policies and per-(state, time) value tables.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::Kind;
use crate::scalar::Scalar;

/// Deterministic Markovian policy, stored as `[s][t]` (one slice when stationary).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Policy {
    pub kind: Kind,
    pub num_states: usize,
    /// Number of decision epochs covered (1 for stationary policies).
    pub slices: usize,
    pub actions: Vec<usize>,
}

impl Policy {
    pub fn stationary(actions: Vec<usize>) -> Self {
        Policy {
            kind: Kind::Stationary,
            num_states: actions.len(),
            slices: 1,
            actions,
        }
    }

    /// Builds a nonstationary policy from an `[s][t]` table.
    pub fn nonstationary(table: Vec<Vec<usize>>) -> Result<Self> {
        let num_states = table.len();
        let slices = table.first().map_or(0, |r| r.len());
        if table.iter().any(|r| r.len() != slices) || slices == 0 {
            return Err(Error::Dimension("ragged or empty policy table".into()));
        }
        Ok(Policy {
            kind: Kind::Nonstationary,
            num_states,
            slices,
            actions: table.into_iter().flatten().collect(),
        })
    }

    /// Constant policy.
    pub fn constant(kind: Kind, num_states: usize, slices: usize, action: usize) -> Self {
        let slices = if kind == Kind::Stationary { 1 } else { slices };
        Policy {
            kind,
            num_states,
            slices,
            actions: vec![action; num_states * slices],
        }
    }

    #[inline]
    pub fn action(&self, s: usize, t: usize) -> usize {
        match self.kind {
            Kind::Stationary => self.actions[s],
            Kind::Nonstationary => self.actions[s * self.slices + t],
        }
    }

    /// Short content hash used in trial reports.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.to_string().as_bytes());
        for a in &self.actions {
            h.update((*a as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_json_value(&self) -> Value {
        let actions = match self.kind {
            Kind::Stationary => Value::from(self.actions.clone()),
            Kind::Nonstationary => Value::Array(
                self.actions
                    .chunks(self.slices)
                    .map(|c| Value::from(c.to_vec()))
                    .collect(),
            ),
        };
        serde_json::json!({ "kind": self.kind, "actions": actions })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            kind: Kind,
            actions: Value,
        }
        let raw: Raw = serde_json::from_str(text)?;
        match raw.kind {
            Kind::Stationary => Ok(Policy::stationary(serde_json::from_value(raw.actions)?)),
            Kind::Nonstationary => Policy::nonstationary(serde_json::from_value(raw.actions)?),
        }
    }
}

/// `V(s, t)` for `t = 0..=H`, with `V(., H) = 0`; infinite-horizon tables have a
/// single row and carry the value-iteration error bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable<T> {
    pub num_states: usize,
    pub rows: usize,
    pub values: Vec<T>,
    /// Sup-norm bound on the distance to the true values (0 when exact).
    pub error_bound: f64,
}

impl<T: Scalar> ValueTable<T> {
    pub fn zeros(num_states: usize, rows: usize) -> Self {
        ValueTable {
            num_states,
            rows,
            values: vec![T::zero(); num_states * rows],
            error_bound: 0.0,
        }
    }

    #[inline]
    pub fn get(&self, s: usize, t: usize) -> &T {
        &self.values[t * self.num_states + s]
    }

    #[inline]
    pub fn set(&mut self, s: usize, t: usize, v: T) {
        self.values[t * self.num_states + s] = v;
    }

    /// Values at the first decision epoch.
    pub fn initial(&self) -> &[T] {
        &self.values[..self.num_states]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "value tables differ in shape");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.clone() - b.clone()).abs().to_f64_lossy())
            .fold(0.0, f64::max)
    }

    pub fn to_f64(&self) -> ValueTable<f64> {
        ValueTable {
            num_states: self.num_states,
            rows: self.rows,
            values: self.values.iter().map(|v| v.to_f64_lossy()).collect(),
            error_bound: self.error_bound,
        }
    }
}

#[derive(Serialize)]
struct ValueTableJson<'a> {
    /// `values[t][s]`
    values: Vec<&'a [f64]>,
    error_bound: f64,
}

impl ValueTable<f64> {
    pub fn to_json(&self) -> String {
        let rows = self.values.chunks(self.num_states).collect();
        serde_json::to_string(&ValueTableJson {
            values: rows,
            error_bound: self.error_bound,
        })
        .expect("values serialize")
    }
}
