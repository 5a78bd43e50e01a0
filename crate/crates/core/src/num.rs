//! Scalar abstractions shared by the numeric kernels.
//!
//! Image kernels (smoothing, gradients, resampling, color conversion) are
//! generic over [`Real`], which is implemented for `f32` and `f64`. Error
//! rates are never floating point: they are exact [`Rate`] rationals over
//! integer counts.

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Float, FloatConst, FromPrimitive, NumCast, ToPrimitive, Zero};

/// Floating point scalar used by the image kernels: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Coordinate scalar for boxes: integer pixel lattices and real boxes alike.
pub trait Coord: Copy + PartialOrd + num_traits::Num + NumCast + Debug + Send + Sync + 'static {}

impl<T> Coord for T where T: Copy + PartialOrd + num_traits::Num + NumCast + Debug + Send + Sync + 'static {}

/// Rounds half away from zero and clamps into `0..=255`.
pub fn to_u8<R: Real>(v: R) -> u8 {
    let r = v.round(); // Float::round rounds half away from zero
    if r <= R::zero() {
        0
    } else if r >= R::lit(255.0) {
        255
    } else {
        r.to_u8().unwrap_or(255)
    }
}

/// Exact error rate: `errors / samples` over integer counts.
pub type Rate = Ratio<u64>;

/// Integer percentage of `num / den`, rounded half away from zero.
///
/// Both operands are non-negative so "away from zero" is "half up".
pub fn percent_half_away(num: u64, den: u64) -> u64 {
    assert!(den > 0, "percentage of an empty count");
    let n = (num as u128) * 200 + (den as u128);
    (n / (2 * (den as u128))) as u64
}

/// Formats a rate the way reports display it, e.g. `15/16` -> `"94%"`.
pub fn format_percent(rate: &Rate) -> String {
    format!("{}%", percent_half_away(*rate.numer(), *rate.denom()))
}

/// Exact `a/b` string for JSON output (reduced form).
pub fn format_ratio(rate: &Rate) -> String {
    format!("{}/{}", rate.numer(), rate.denom())
}

/// Unweighted mean of exact rates.
pub fn mean_rate(rates: &[Rate]) -> Option<BigRational> {
    if rates.is_empty() {
        return None;
    }
    let mut acc = BigRational::zero();
    for r in rates {
        acc += BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()));
    }
    Some(acc / BigRational::from_integer(BigInt::from(rates.len())))
}

/// Integer percentage of a big rational (non-negative), half away from zero.
pub fn big_percent(r: &BigRational) -> BigInt {
    let scaled = r * BigRational::from_integer(BigInt::from(100));
    let two = BigInt::from(2);
    (scaled.numer() * &two + scaled.denom()) / (scaled.denom() * &two)
}

/// The decimal a user wrote for `x`: its shortest round-trip representation
/// as an exact rational (`0.9` is 9/10, not the nearest binary fraction).
pub fn decimal_ratio(x: f64) -> BigRational {
    assert!(x.is_finite(), "threshold must be finite");
    let text = format!("{}", x.abs());
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
    let scale = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(digits, scale);
    if x < 0.0 {
        -r
    } else {
        r
    }
}

fn rate_big(rate: &Rate) -> BigRational {
    BigRational::new(BigInt::from(*rate.numer()), BigInt::from(*rate.denom()))
}

/// Exact `rate <= threshold`, with the threshold read as a decimal.
pub fn rate_at_most(rate: &Rate, threshold: f64) -> bool {
    rate_big(rate) <= decimal_ratio(threshold)
}

/// Exact `rate >= threshold`, with the threshold read as a decimal.
pub fn rate_at_least(rate: &Rate, threshold: f64) -> bool {
    rate_big(rate) >= decimal_ratio(threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentages_round_half_away() {
        assert_eq!(percent_half_away(15, 16), 94);
        assert_eq!(percent_half_away(2, 16), 13);
        assert_eq!(percent_half_away(4, 16), 25);
        assert_eq!(percent_half_away(1, 8), 13);
        assert_eq!(percent_half_away(0, 16), 0);
        assert_eq!(percent_half_away(16, 16), 100);
        assert_eq!(percent_half_away(1, 200), 1);
        assert_eq!(percent_half_away(1, 201), 0);
    }

    #[test]
    fn to_u8_rounds_half_away_and_clamps() {
        assert_eq!(to_u8(2.5f64), 3);
        assert_eq!(to_u8(2.4999f32), 2);
        assert_eq!(to_u8(-3.0f64), 0);
        assert_eq!(to_u8(300.0f64), 255);
        assert_eq!(to_u8(254.5f64), 255);
    }

    #[test]
    fn mean_of_rates_is_exact() {
        let m = mean_rate(&[Rate::new(1, 1), Rate::new(0, 16)]).unwrap();
        assert_eq!(big_percent(&m), BigInt::from(50));
        let m = mean_rate(&[
            Rate::new(98, 100),
            Rate::new(70, 100),
            Rate::new(94, 100),
            Rate::new(100, 100),
            Rate::new(100, 100),
        ])
        .unwrap();
        assert_eq!(m, BigRational::new(BigInt::from(462), BigInt::from(500)));
    }

    #[test]
    fn threshold_comparisons() {
        assert!(rate_at_most(&Rate::new(3, 16), 3.0 / 16.0));
        assert!(!rate_at_most(&Rate::new(4, 16), 3.0 / 16.0));
        assert!(rate_at_least(&Rate::new(15, 16), 0.9));
        assert!(!rate_at_least(&Rate::new(14, 16), 0.9));
        // 0.9 * 10.0 is 9.000000000000002 in floating point
        assert!(rate_at_least(&Rate::new(9, 10), 0.9));
        assert!(rate_at_most(&Rate::new(1, 2), 0.5));
        assert_eq!(decimal_ratio(1e-4), BigRational::new(BigInt::from(1), BigInt::from(10_000)));
        assert_eq!(decimal_ratio(-2.5), BigRational::new(BigInt::from(-5), BigInt::from(2)));
    }
}
