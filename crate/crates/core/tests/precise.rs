use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use pacrl::precise::{ceil_scaled_ln, ln_bounds, rational};
use proptest::prelude::*;

fn ratio(a: i64, b: i64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

proptest! {
    #[test]
    fn ln_interval_brackets_float_ln(a in 1i64..1_000_000, b in 1i64..1_000_000) {
        let (lo, hi) = ln_bounds(&ratio(a, b), 128).unwrap();
        let want = (a as f64 / b as f64).ln();
        let slack = 1e-12 * want.abs().max(1.0);
        prop_assert!(lo <= hi);
        prop_assert!(lo.to_f64().unwrap() <= want + slack);
        prop_assert!(hi.to_f64().unwrap() >= want - slack);
        prop_assert!((&hi - &lo).to_f64().unwrap() < 1e-30);
    }

    /// `n = ceil(c ln x)` iff `exp((n - 1) / c) < x <= exp(n / c)`; checked in
    /// floating point away from ties.
    #[test]
    fn ceiling_matches_exp_oracle(c in 0.01f64..500.0, x in 1.0001f64..1e12) {
        let n = ceil_scaled_ln(&rational(c).unwrap(), &rational(x).unwrap(), None).unwrap();
        let n = n.to_f64().unwrap();
        let exact = c * x.ln();
        prop_assume!((exact - exact.round()).abs() > 1e-6 * exact.abs().max(1.0));
        prop_assert_eq!(n, exact.ceil());
        prop_assert!(((n - 1.0) / c).exp() < x);
        prop_assert!(x <= (n / c).exp() * (1.0 + 1e-12));
    }

    #[test]
    fn floor_clamps_small_logarithms(c in 0.1f64..100.0, x in 1.0f64..2.7) {
        let one = BigRational::from_integer(BigInt::from(1));
        let n = ceil_scaled_ln(&rational(c).unwrap(), &rational(x).unwrap(), Some(&one)).unwrap();
        prop_assert_eq!(n.to_f64().unwrap(), c.ceil());
    }
}

#[test]
fn exact_integer_ties_are_not_rounded_up() {
    // c ln x is an integer exactly when x = 1 or c = 0.
    let one = ratio(1, 1);
    assert_eq!(ceil_scaled_ln(&ratio(7, 1), &one, None).unwrap(), BigInt::from(0));
    assert_eq!(ceil_scaled_ln(&ratio(0, 1), &ratio(10, 1), None).unwrap(), BigInt::from(0));
    // ln 2 = 0.693147180559945309..., so 10^6 ln 2 = 693147.18...
    assert_eq!(ceil_scaled_ln(&ratio(1_000_000, 1), &ratio(2, 1), None).unwrap(), BigInt::from(693_148));
    // ln 1/2 is negative.
    assert_eq!(ceil_scaled_ln(&ratio(10, 1), &ratio(1, 2), None).unwrap(), BigInt::from(-6));
}

#[test]
fn rejects_non_positive_arguments() {
    assert!(ln_bounds(&ratio(0, 1), 64).is_err());
    assert!(ceil_scaled_ln(&ratio(-1, 1), &ratio(2, 1), None).is_err());
}
