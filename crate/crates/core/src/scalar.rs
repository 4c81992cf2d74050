//! Scalar abstraction shared by the polynomial IR, the oracles and the LP
//! routine. Implemented for `f32`, `f64` and exact big rationals.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, Signed, ToPrimitive, Zero};

/// Ordered field with enough structure for exact or floating evaluation.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + FromPrimitive + Send + Sync + 'static
{
    /// Convert an exact rational coefficient into this scalar.
    fn from_rational(r: &BigRational) -> Self;

    /// Lossy conversion to `f64` for reporting.
    fn to_f64(&self) -> f64;

    /// Pivot/feasibility tolerance. Zero for exact arithmetic.
    fn tolerance() -> Self;

    fn is_exact() -> bool {
        false
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite value")
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

fn rational_to_f64(r: &BigRational) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // very large numerator/denominator: scale down first
            let shift = r.denom().bits().max(r.numer().bits()).saturating_sub(1000);
            let n = (r.numer() >> shift).to_f64().unwrap_or(f64::NAN);
            let d = (r.denom() >> shift).to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

impl Scalar for f64 {
    fn from_rational(r: &BigRational) -> Self {
        rational_to_f64(r)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn from_rational(r: &BigRational) -> Self {
        rational_to_f64(r) as f32
    }
    fn to_f64(&self) -> f64 {
        *self as f64
    }
    fn tolerance() -> Self {
        1e-5
    }
}

impl Scalar for BigRational {
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }
    fn tolerance() -> Self {
        BigRational::zero()
    }
    fn is_exact() -> bool {
        true
    }
}

/// Exact rational from a ratio of integers.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact rational from a decimal-representable `f64` (exact binary expansion).
pub fn rational_from_f64(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(BigRational::zero)
}

/// Exact rational parsed from a decimal literal such as `0.05` or `1e-3`.
pub fn rational_from_decimal(text: &str) -> Option<BigRational> {
    let text = text.trim();
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    if neg {
        r = -r;
    }
    Some(r)
}

pub fn rational_one() -> BigRational {
    BigRational::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(rational_from_decimal("0.05").unwrap(), ratio(1, 20));
        assert_eq!(rational_from_decimal("1e-3").unwrap(), ratio(1, 1000));
        assert_eq!(rational_from_decimal("-2.5").unwrap(), ratio(-5, 2));
        assert_eq!(rational_from_decimal("3").unwrap(), ratio(3, 1));
        assert!(rational_from_decimal("abc").is_none());
        assert!(rational_from_decimal(".").is_none());
    }

    #[test]
    fn conversions() {
        assert_eq!(f64::from_rational(&ratio(1, 4)), 0.25);
        assert_eq!(Scalar::to_f64(&ratio(3, 8)), 0.375);
        assert!(BigRational::is_exact());
        assert!(!f64::is_exact());
    }
}
