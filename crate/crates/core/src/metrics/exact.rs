use std::fmt;
use std::ops::{Add, Sub};

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{Serialize, Serializer};

/// An exact rational quantity (rates, averages, dollars). Serializes as a
/// JSON number; displays rounded half away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Exact(pub Ratio<i128>);

impl Exact {
    pub fn zero() -> Self {
        Exact(Ratio::zero())
    }

    pub fn from_int(n: i128) -> Self {
        Exact(Ratio::from_integer(n))
    }

    /// `num / den`; panics on a zero denominator.
    pub fn ratio(num: i128, den: i128) -> Self {
        Exact(Ratio::new(num, den))
    }

    /// Parses a plain or scientific decimal literal exactly.
    pub fn parse_decimal(text: &str) -> Option<Self> {
        let text = text.trim();
        let (mantissa, exp) = match text.find(['e', 'E']) {
            Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
            None => (text, 0),
        };
        let (neg, digits) = match mantissa.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
        };
        let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
        if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
            return None;
        }
        let mut num: i128 = format!("{int}{frac}").trim_start_matches('0').parse().unwrap_or(0);
        if neg {
            num = -num;
        }
        let scale = exp - frac.len() as i32;
        let pow = 10i128.checked_pow(scale.unsigned_abs())?;
        Some(if scale >= 0 { Exact(Ratio::from_integer(num.checked_mul(pow)?)) } else { Exact(Ratio::new(num, pow)) })
    }

    /// Exact value of a finite float via its shortest decimal form, so
    /// `0.08` becomes 8/100 rather than the nearest binary fraction.
    pub fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() {
            return None;
        }
        Self::parse_decimal(&format!("{value:e}"))
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    pub fn is_negative(self) -> bool {
        self.0.is_negative()
    }

    /// Rounded to `decimals` places, halves away from zero.
    pub fn round(self, decimals: u32) -> Exact {
        let scale = 10i128.pow(decimals);
        let scaled = self.0.abs() * Ratio::from_integer(scale);
        let half = Ratio::new(1, 2);
        let mut units = (scaled + half).floor().to_integer();
        if self.0.is_negative() {
            units = -units;
        }
        Exact(Ratio::new(units, scale))
    }

    /// Fixed-point text with `decimals` places, halves away from zero.
    pub fn fixed(self, decimals: u32) -> String {
        let scale = 10i128.pow(decimals);
        let units = (self.round(decimals).0 * Ratio::from_integer(scale)).to_integer();
        let sign = if units < 0 { "-" } else { "" };
        let units = units.unsigned_abs();
        let scale = scale as u128;
        if decimals == 0 {
            format!("{sign}{units}")
        } else {
            format!("{sign}{}.{:0width$}", units / scale, units % scale, width = decimals as usize)
        }
    }

    /// Like [`Exact::fixed`] with an explicit `+` on positive values.
    pub fn signed(self, decimals: u32) -> String {
        let text = self.fixed(decimals);
        if self.round(decimals).0 > Ratio::zero() {
            format!("+{text}")
        } else {
            text
        }
    }
}

impl Add for Exact {
    type Output = Exact;
    fn add(self, rhs: Exact) -> Exact {
        Exact(self.0 + rhs.0)
    }
}

impl Sub for Exact {
    type Output = Exact;
    fn sub(self, rhs: Exact) -> Exact {
        Exact(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Exact {
    fn sum<I: Iterator<Item = Exact>>(iter: I) -> Exact {
        iter.fold(Exact::zero(), Add::add)
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f.precision() {
            Some(p) => f.write_str(&self.fixed(p as u32)),
            None => write!(f, "{}", self.to_f64()),
        }
    }
}

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}
