//! Exact arbitrary-precision rationals with a stable `"num/den"` wire form.
//!
//! Every quantity in the simulator (times, clock rates, protocol constants,
//! agreement values) is a [`Rat`]. Nothing in the pipeline rounds: trace
//! comparisons and indistinguishability checks rely on bit-exact equality.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An exact rational number. Serializes as the string `"num/den"` in lowest
/// terms (denominator always positive, integers as `"num/1"`).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rat(BigRational);

impl Rat {
    pub fn zero() -> Self {
        Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Rat(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(n)))
    }

    /// `num/den`, panics if `den == 0`.
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational with zero denominator");
        Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn abs(&self) -> Rat {
        Rat(self.0.abs())
    }

    pub fn min(self, other: Rat) -> Rat {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Rat) -> Rat {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Smallest integer `k` with `k >= self`.
    pub fn ceil_int(&self) -> BigInt {
        self.0.ceil().to_integer()
    }

    /// Decimal approximation for human-readable reports; never fed back into
    /// the exact pipeline.
    pub fn to_f64_lossy(&self) -> f64 {
        let num = self.0.numer();
        let den = self.0.denom();
        str::parse::<f64>(&num.to_string()).unwrap_or(f64::NAN)
            / str::parse::<f64>(&den.to_string()).unwrap_or(f64::NAN)
    }

    pub fn inner(&self) -> &BigRational {
        &self.0
    }
}

impl From<BigRational> for Rat {
    fn from(r: BigRational) -> Self {
        Rat(r)
    }
}

impl From<u64> for Rat {
    fn from(n: u64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(n)))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseRatError {
    #[error("empty rational literal")]
    Empty,
    #[error("invalid integer part in rational literal: {0}")]
    BadInt(String),
    #[error("zero denominator in rational literal")]
    ZeroDenominator,
}

impl FromStr for Rat {
    type Err = ParseRatError;

    /// Accepts `"num/den"` or a bare integer `"num"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ParseRatError::Empty);
        }
        let (num_str, den_str) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s, "1"),
        };
        let num = BigInt::from_str(num_str)
            .map_err(|_| ParseRatError::BadInt(num_str.to_string()))?;
        let den = BigInt::from_str(den_str)
            .map_err(|_| ParseRatError::BadInt(den_str.to_string()))?;
        if den.is_zero() {
            return Err(ParseRatError::ZeroDenominator);
        }
        Ok(Rat(BigRational::new(num, den)))
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl fmt::Debug for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait for Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat((self.0).$method(rhs.0))
            }
        }
        impl $trait for &Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat((&self.0).$method(&rhs.0))
            }
        }
        impl $trait<&Rat> for Rat {
            type Output = Rat;
            fn $method(self, rhs: &Rat) -> Rat {
                Rat((self.0).$method(&rhs.0))
            }
        }
        impl $trait<Rat> for &Rat {
            type Output = Rat;
            fn $method(self, rhs: Rat) -> Rat {
                Rat((&self.0).$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);

impl Div for Rat {
    type Output = Rat;
    fn div(self, rhs: Rat) -> Rat {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rat(self.0 / rhs.0)
    }
}

impl Div for &Rat {
    type Output = Rat;
    fn div(self, rhs: &Rat) -> Rat {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rat(&self.0 / &rhs.0)
    }
}

impl Neg for Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-self.0)
    }
}

impl Neg for &Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-&self.0)
    }
}

impl AddAssign<&Rat> for Rat {
    fn add_assign(&mut self, rhs: &Rat) {
        self.0 += &rhs.0;
    }
}

impl SubAssign<&Rat> for Rat {
    fn sub_assign(&mut self, rhs: &Rat) {
        self.0 -= &rhs.0;
    }
}

/// `r(num, den)` shorthand used pervasively in tests.
pub fn r(num: i64, den: i64) -> Rat {
    Rat::new(num, den)
}

/// Spread of a non-empty slice: `max - min`.
pub fn spread(values: &[Rat]) -> Rat {
    let min = values.iter().min().expect("spread of empty slice");
    let max = values.iter().max().expect("spread of empty slice");
    max - min
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["3/4", "-7/2", "5/1", "0/1", "101/100"] {
            let x: Rat = s.parse().unwrap();
            assert_eq!(x.to_string(), s);
        }
        // Bare integers and non-lowest terms normalize.
        assert_eq!("6".parse::<Rat>().unwrap().to_string(), "6/1");
        assert_eq!("4/8".parse::<Rat>().unwrap().to_string(), "1/2");
        assert_eq!("3/-6".parse::<Rat>().unwrap().to_string(), "-1/2");
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("".parse::<Rat>().is_err());
        assert!("a/b".parse::<Rat>().is_err());
        assert_eq!("1/0".parse::<Rat>(), Err(ParseRatError::ZeroDenominator));
    }

    #[test]
    fn exact_arithmetic() {
        let a = r(1, 3);
        let b = r(1, 6);
        assert_eq!(&a + &b, r(1, 2));
        assert_eq!(&a - &b, r(1, 6));
        assert_eq!(&a * &b, r(1, 18));
        assert_eq!(&a / &b, r(2, 1));
        assert_eq!(-&a, r(-1, 3));
    }

    #[test]
    fn ceil_int() {
        assert_eq!(r(7, 2).ceil_int(), BigInt::from(4));
        assert_eq!(r(-7, 2).ceil_int(), BigInt::from(-3));
        assert_eq!(r(3, 1).ceil_int(), BigInt::from(3));
    }

    #[test]
    fn serde_as_string() {
        let x = r(22, 5);
        let json = serde_json::to_string(&x).unwrap();
        assert_eq!(json, "\"22/5\"");
        let back: Rat = serde_json::from_str(&json).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn spread_of_values() {
        assert_eq!(spread(&[r(1, 2), r(0, 1), r(1, 1)]), r(1, 1));
        assert_eq!(spread(&[r(3, 7)]), Rat::zero());
    }
}
