//! Exact rational scalar used everywhere, plus the "p/q" text form used by
//! all file formats.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::str::FromStr;

pub type Rat = BigRational;

pub fn rat(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn frac(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Renders a rational as `"p"` when integral, else `"p/q"`.
pub fn to_pq(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `"p"` or `"p/q"`. Rejects zero denominators.
pub fn from_pq(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    match s.split_once('/') {
        None => BigInt::from_str(s)
            .map(Rat::from_integer)
            .map_err(|e| format!("bad integer {s:?}: {e}")),
        Some((p, q)) => {
            let p = BigInt::from_str(p.trim()).map_err(|e| format!("bad numerator {p:?}: {e}"))?;
            let q = BigInt::from_str(q.trim()).map_err(|e| format!("bad denominator {q:?}: {e}"))?;
            if q.is_zero() {
                return Err(format!("zero denominator in {s:?}"));
            }
            Ok(Rat::new(p, q))
        }
    }
}

pub fn to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Largest rational p/q <= x with q <= max_denom, by flooring against max_denom.
/// Good enough for parameter rounding; exact continued fractions are not needed.
pub fn floor_to_denom(x: &Rat, max_denom: i64) -> Rat {
    let d = BigInt::from(max_denom);
    let scaled = x * Rat::from_integer(d.clone());
    Rat::new(scaled.floor().to_integer(), d)
}

/// Under-approximation of sqrt(n) as a rational with `digits` decimal digits.
pub fn sqrt_lower(n: u64, digits: u32) -> Rat {
    let scale = BigInt::from(10u32).pow(digits);
    let target = BigInt::from(n) * &scale * &scale;
    let root = target.sqrt(); // floor sqrt
    Rat::new(root, scale)
}

pub fn is_nonneg(r: &Rat) -> bool {
    !r.is_negative()
}
