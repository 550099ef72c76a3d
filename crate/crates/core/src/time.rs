//! Integer nanosecond time and exact rational scale factors.
//!
//! Trace documents carry fractional microseconds; everything downstream of the
//! parser works on `u64` nanoseconds so that simulation ordering never depends
//! on floating-point rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Time in integer nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_MICRO: u64 = 1_000;

/// Converts a microsecond value to nanoseconds, rounding half-up.
///
/// Returns `None` for negative, non-finite or out-of-range inputs.
pub fn micros_to_nanos(us: f64) -> Option<Nanos> {
    if !us.is_finite() || us < 0.0 {
        return None;
    }
    let ns = us * NANOS_PER_MICRO as f64;
    if ns >= u64::MAX as f64 {
        return None;
    }
    Some((ns + 0.5).floor() as u64)
}

pub fn nanos_to_micros(ns: Nanos) -> f64 {
    ns as f64 / NANOS_PER_MICRO as f64
}

/// Divides `num` by `den` rounding half-up. `den` must be non-zero.
pub(crate) fn div_round_half_up(num: u128, den: u128) -> u128 {
    (num + den / 2) / den
}

/// A non-negative exact rational number, used for duration scale factors.
///
/// Deserializes from a JSON number (`0.5`, `2`) or a string (`"1/3"`,
/// `"0.25"`); decimals are converted digit-by-digit so `0.1` is exactly 1/10.
#[derive(Debug, Clone, Copy)]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, RatioError> {
        if den == 0 {
            return Err(RatioError::ZeroDenominator);
        }
        let g = gcd(num, den);
        Ok(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(n: u64) -> Self {
        Ratio { num: n, den: 1 }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn is_one(&self) -> bool {
        self.num == self.den
    }

    /// `value * self`, rounded half-up to the nearest nanosecond.
    pub fn scale(&self, value: Nanos) -> Nanos {
        let scaled = div_round_half_up(value as u128 * self.num as u128, self.den as u128);
        scaled.min(u64::MAX as u128) as u64
    }

    pub fn mul(&self, other: &Ratio) -> Ratio {
        let num = self.num as u128 * other.num as u128;
        let den = self.den as u128 * other.den as u128;
        let g = gcd128(num, den);
        let (num, den) = (num / g, den / g);
        if num <= u64::MAX as u128 && den <= u64::MAX as u128 {
            Ratio {
                num: num as u64,
                den: den as u64,
            }
        } else {
            Ratio::from_f64(num as f64 / den as f64).unwrap_or(Ratio::ZERO)
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Best-effort conversion of a float through its shortest decimal form.
    pub fn from_f64(v: f64) -> Result<Self, RatioError> {
        if !v.is_finite() || v < 0.0 {
            return Err(RatioError::Invalid(v.to_string()));
        }
        format!("{v}").parse()
    }
}

impl PartialEq for Ratio {
    fn eq(&self, other: &Self) -> bool {
        self.num as u128 * other.den as u128 == other.num as u128 * self.den as u128
    }
}

impl Eq for Ratio {}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RatioError {
    #[error("ratio has a zero denominator")]
    ZeroDenominator,
    #[error("invalid ratio literal {0:?}")]
    Invalid(String),
}

impl FromStr for Ratio {
    type Err = RatioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let invalid = || RatioError::Invalid(s.to_string());
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| invalid())?;
            let d: u64 = d.trim().parse().map_err(|_| invalid())?;
            return Ratio::new(n, d);
        }
        // Plain decimal, possibly with an exponent.
        let (mantissa, exp) = match s.find(['e', 'E']) {
            Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| invalid())?),
            None => (s, 0),
        };
        let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(invalid());
        }
        if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
            return Err(invalid());
        }
        let digits = format!("{int_part}{frac_part}");
        let digits = digits.trim_start_matches('0');
        let mut num: u128 = if digits.is_empty() {
            0
        } else {
            digits.parse().map_err(|_| invalid())?
        };
        let mut den: u128 = 1;
        let scale = exp - frac_part.len() as i32;
        for _ in 0..scale.unsigned_abs() {
            if scale > 0 {
                num = num.checked_mul(10).ok_or_else(invalid)?;
            } else {
                den = den.checked_mul(10).ok_or_else(invalid)?;
            }
        }
        let g = gcd128(num, den);
        let (num, den) = (num / g, den / g);
        if num > u64::MAX as u128 || den > u64::MAX as u128 {
            return Err(invalid());
        }
        Ratio::new(num as u64, den as u64)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            serializer.serialize_u64(self.num)
        } else {
            serializer.collect_str(self)
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(n) => Ok(Ratio::integer(n)),
            Raw::Float(f) => Ratio::from_f64(f).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

fn gcd128(a: u128, b: u128) -> u128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd128(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_conversion() {
        assert_eq!(micros_to_nanos(12.5), Some(12_500));
        assert_eq!(micros_to_nanos(0.0005), Some(1));
        assert_eq!(micros_to_nanos(0.0004), Some(0));
        assert_eq!(micros_to_nanos(-1.0), None);
        assert_eq!(micros_to_nanos(f64::NAN), None);
    }

    #[test]
    fn ratio_literals() {
        assert_eq!("1/3".parse::<Ratio>().unwrap(), Ratio::new(1, 3).unwrap());
        assert_eq!("0.1".parse::<Ratio>().unwrap(), Ratio::new(1, 10).unwrap());
        assert_eq!("2.5e-1".parse::<Ratio>().unwrap(), Ratio::new(1, 4).unwrap());
        assert_eq!("3".parse::<Ratio>().unwrap(), Ratio::integer(3));
        assert!("1/0".parse::<Ratio>().is_err());
        assert!("-1".parse::<Ratio>().is_err());
        assert!("abc".parse::<Ratio>().is_err());
    }

    #[test]
    fn scale_rounds_half_up() {
        let third = Ratio::new(1, 3).unwrap();
        assert_eq!(third.scale(30_000), 10_000);
        assert_eq!(third.scale(2), 1); // 0.666 -> 1
        assert_eq!(Ratio::new(1, 2).unwrap().scale(3), 2); // 1.5 -> 2
        assert_eq!(Ratio::ONE.scale(12_345), 12_345);
    }

    #[test]
    fn serde_accepts_numbers_and_strings() {
        let r: Ratio = serde_json::from_str("0.5").unwrap();
        assert_eq!(r, Ratio::new(1, 2).unwrap());
        let r: Ratio = serde_json::from_str("\"1/3\"").unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), "\"1/3\"");
        let r: Ratio = serde_json::from_str("4").unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), "4");
    }
}
