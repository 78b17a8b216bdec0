//! Scalar abstraction shared by the dynamic-programming and world-averaging code.
//!
//! Everything that only needs field arithmetic (backward induction, policy
//! evaluation, empirical models, world averages) is written against
//! [`Scalar`], so the same code runs over `f64` for speed and over
//! [`BigRational`](num_rational::BigRational) when an identity must be
//! checked exactly.

use std::fmt::Debug;

use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Ordered field element usable by the solvers.
pub trait Scalar:
    Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// `num / den` in this scalar type. Exact for rationals.
    fn from_ratio(num: u64, den: u64) -> Self {
        let n = Self::from_u64(num).expect("u64 is representable");
        let d = Self::from_u64(den).expect("u64 is representable");
        n / d
    }

    /// Conversion from a 64-bit float; rationals take the exact binary value.
    fn from_f64_exact(v: f64) -> Self {
        Self::from_f64(v).expect("finite float")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

impl<T> Scalar for T where
    T: Clone
        + Debug
        + PartialOrd
        + Num
        + Signed
        + FromPrimitive
        + ToPrimitive
        + Send
        + Sync
        + 'static
{
}

/// Neumaier-compensated running sum.
///
/// For exact scalar types the compensation term stays identically zero, so
/// the same accumulator serves both the float and the rational paths.
#[derive(Clone, Debug)]
pub struct CompensatedSum<T: Scalar> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum.clone() + x.clone();
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp.clone() + ((self.sum.clone() - t.clone()) + x);
        } else {
            self.comp = self.comp.clone() + ((x - t.clone()) + self.sum.clone());
        }
        self.sum = t;
    }

    /// Folds another partial sum into this one.
    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum.clone());
        self.add(other.comp.clone());
    }

    pub fn value(&self) -> T {
        self.sum.clone() + self.comp.clone()
    }
}
