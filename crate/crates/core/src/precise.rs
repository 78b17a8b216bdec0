//! Certified natural logarithms of rationals and exact ceilings of
//! `c * ln(x)`.
//!
//! `ln` is evaluated in binary fixed point through `ln x = k ln 2 + 2 atanh(z)`
//! with `z = (y - 1) / (y + 1)`, `y = x / 2^k` in `[1, 2)`, and the result is
//! returned as a rational interval that provably contains the true value.
//! Ceilings are taken on both interval ends and the precision doubled until
//! they agree.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

const GUARD_BITS: u32 = 64;
const START_PRECISION: u32 = 128;
const MAX_PRECISION: u32 = 1 << 15;

/// Exact rational value of a finite float.
pub fn rational(v: f64) -> Result<BigRational> {
    BigRational::from_float(v).ok_or_else(|| Error::InvalidParameter(format!("{v} is not finite")))
}

pub fn from_uint(v: &BigUint) -> BigRational {
    BigRational::from_integer(BigInt::from_biguint(Sign::Plus, v.clone()))
}

/// `sum_j z^(2j+1) / (2j+1)` in fixed point with `w` fractional bits, for a
/// rational `0 <= z <= 1/3`. Returns the truncated value and an error bound
/// in units of `2^-w`.
fn atanh_fixed(z: &BigRational, w: u32) -> (BigInt, u64) {
    let one = BigInt::one() << w;
    let z_fp: BigInt = (z.numer() * &one).div_floor(z.denom());
    let z2: BigInt = (&z_fp * &z_fp) >> w;
    let mut pow = z_fp;
    let mut sum = BigInt::zero();
    let mut terms: u64 = 0;
    let mut j: u64 = 0;
    while !pow.is_zero() {
        sum += &pow / BigInt::from(2 * j + 1);
        pow = (&pow * &z2) >> w;
        j += 1;
        terms += 1;
    }
    // Each truncation costs < 1 ulp and the power recursion contracts by z^2 <= 1/9;
    // the untaken tail is below a few ulps once the power underflows.
    (sum, 10 * (terms + 2))
}

/// Interval `[lo, hi]` containing `ln x` with width about `2^-prec`.
pub fn ln_bounds(x: &BigRational, prec: u32) -> Result<(BigRational, BigRational)> {
    if !x.is_positive() {
        return Err(Error::InvalidParameter("logarithm of a non-positive number".into()));
    }
    if x.is_one() {
        return Ok((BigRational::zero(), BigRational::zero()));
    }
    let w = prec + GUARD_BITS;
    let num = x.numer().magnitude().clone();
    let den = x.denom().magnitude().clone();
    // 2^k <= x < 2^(k+1)
    let mut k: i64 = num.bits() as i64 - den.bits() as i64;
    let pow2 = |e: i64| -> (BigUint, BigUint) {
        if e >= 0 {
            (num.clone(), &den << (e as u64))
        } else {
            (&num << ((-e) as u64), den.clone())
        }
    };
    loop {
        let (n, d) = pow2(k);
        if n < d {
            k -= 1;
        } else if n >= (&d << 1u8) {
            k += 1;
        } else {
            break;
        }
    }
    let (n, d) = pow2(k);
    let n = BigInt::from_biguint(Sign::Plus, n);
    let d = BigInt::from_biguint(Sign::Plus, d);
    let z = BigRational::new(&n - &d, &n + &d);
    let (at_y, err_y) = atanh_fixed(&z, w);
    let mut value = at_y << 1u8;
    let mut err: BigInt = BigInt::from(2 * err_y);
    if k != 0 {
        let (at2, err2) = atanh_fixed(&BigRational::new(BigInt::one(), BigInt::from(3)), w);
        let ln2 = at2 << 1u8;
        value += &ln2 * BigInt::from(k);
        err += BigInt::from(2 * err2) * BigInt::from(k.unsigned_abs());
    }
    let scale = BigInt::one() << w;
    let lo = BigRational::new(&value - &err, scale.clone());
    let hi = BigRational::new(&value + &err, scale);
    Ok((lo, hi))
}

fn ceil_int(r: &BigRational) -> BigInt {
    r.ceil().to_integer()
}

/// `ceil(c * max(ln x, floor))` exactly, for `c >= 0` and `x > 0`.
pub fn ceil_scaled_ln(c: &BigRational, x: &BigRational, floor: Option<&BigRational>) -> Result<BigInt> {
    if c.is_negative() {
        return Err(Error::InvalidParameter("negative scale".into()));
    }
    if c.is_zero() {
        return Ok(BigInt::zero());
    }
    let mut prec = START_PRECISION;
    loop {
        let (mut lo, mut hi) = ln_bounds(x, prec)?;
        if let Some(f) = floor {
            if &hi <= f {
                return Ok(ceil_int(&(c * f)));
            }
            if &lo >= f {
                // entire interval above the floor
            } else if prec < MAX_PRECISION {
                prec *= 2;
                continue;
            } else {
                lo = f.clone();
                hi = hi.max(f.clone());
            }
        }
        let a = ceil_int(&(c * &lo));
        let b = ceil_int(&(c * &hi));
        if a == b || prec >= MAX_PRECISION {
            return Ok(b);
        }
        prec *= 2;
    }
}

pub fn to_biguint(v: &BigInt) -> BigUint {
    v.to_biguint().unwrap_or_default()
}

/// Serializes a big count as its exact decimal string.
pub fn serialize_decimal<S: serde::Serializer>(v: &BigUint, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Lossy conversion for reporting.
pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Integer `b^e` as a rational.
pub fn pow_rational(b: u64, e: u64) -> BigRational {
    let mut acc = BigUint::one();
    let base = BigUint::from(b);
    for _ in 0..e {
        acc *= &base;
    }
    from_uint(&acc)
}
