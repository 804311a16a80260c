//! Scalar values and intervals used by `FILTER` requirements.
//!
//! Policy comparison has to be exact and total: two syntactically different
//! policies must print identically iff they mean the same thing, and printed
//! policies must re-parse to themselves. Raw `f64` breaks that in three ways
//! (NaN, `-0.0 == 0.0` with different bit patterns, and exponent-formatted
//! output the grammar does not accept), so [`Real`] is a thin wrapper that
//! rules all three out at construction time.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A non-NaN `f64` with a canonical bit pattern and total order.
///
/// `-0.0` is normalized to `0.0` on construction, so equality, hashing and
/// ordering all agree with plain numeric comparison. Infinities are allowed;
/// they print as `inf` / `-inf`, matching the policy grammar.
#[derive(Clone, Copy, Debug)]
pub struct Real(f64);

impl Real {
    pub const NEG_INFINITY: Real = Real(f64::NEG_INFINITY);
    pub const INFINITY: Real = Real(f64::INFINITY);
    pub const ZERO: Real = Real(0.0);

    /// Wraps a float, rejecting NaN and canonicalizing negative zero.
    pub fn new(value: f64) -> Result<Real, NotANumber> {
        if value.is_nan() {
            return Err(NotANumber);
        }
        // -0.0 + 0.0 == 0.0 under IEEE 754 round-to-nearest.
        Ok(Real(value + 0.0))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

/// Error for attempts to build a [`Real`] from NaN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("NaN is not a representable value")]
pub struct NotANumber;

impl PartialEq for Real {
    fn eq(&self, other: &Real) -> bool {
        // Bit equality coincides with numeric equality once -0.0 is gone.
        self.0.to_bits() == other.0.to_bits()
    }
}

impl Eq for Real {}

impl PartialOrd for Real {
    fn partial_cmp(&self, other: &Real) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Real {
    fn cmp(&self, other: &Real) -> Ordering {
        // total_cmp matches numeric order on non-NaN values; -0.0 never occurs.
        self.0.total_cmp(&other.0)
    }
}

impl std::hash::Hash for Real {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl fmt::Display for Real {
    /// Prints the shortest decimal that round-trips, e.g. `0.5`, `18`,
    /// `0.000001`. Infinities print as `inf` / `-inf`. Rust's `{}` formatting
    /// for `f64` never uses exponent notation, which keeps the output inside
    /// the policy grammar.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Real {
    type Err = NotANumber;

    fn from_str(s: &str) -> Result<Real, NotANumber> {
        match s {
            "inf" => Ok(Real::INFINITY),
            "-inf" => Ok(Real::NEG_INFINITY),
            _ => {
                let v: f64 = s.parse().map_err(|_| NotANumber)?;
                Real::new(v)
            }
        }
    }
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        // JSON has no literal for infinity, so fall back to strings there.
        if self.0.is_finite() {
            serializer.serialize_f64(self.0)
        } else {
            serializer.serialize_str(if self.0 > 0.0 { "inf" } else { "-inf" })
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Real, D::Error> {
        use serde::de::Error;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Real::new(v).map_err(D::Error::custom),
            Raw::Str(s) => s.parse().map_err(|_| D::Error::custom("invalid number")),
        }
    }
}

/// A non-empty interval over [`Real`], each end open or closed.
///
/// Infinite endpoints are always open (there is no value `inf` to include),
/// which the constructor enforces so that equal intervals are structurally
/// equal. The policy text forms are `[18, inf)`, `(-inf, 0.5]`, `[1, 1]`, …
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    lo: Real,
    lo_closed: bool,
    hi: Real,
    hi_closed: bool,
}

/// Error for interval constructions that contain no values at all.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IntervalError {
    #[error("NaN is not a valid interval endpoint")]
    NotANumber,
    #[error("interval {0} is empty")]
    Empty(String),
}

impl Interval {
    /// Builds an interval, rejecting NaN endpoints and empty ranges such as
    /// `[3, 2]` or `(1, 1]`. Closed infinite ends are silently opened.
    pub fn new(lo: f64, lo_closed: bool, hi: f64, hi_closed: bool) -> Result<Interval, IntervalError> {
        let lo = Real::new(lo).map_err(|_| IntervalError::NotANumber)?;
        let hi = Real::new(hi).map_err(|_| IntervalError::NotANumber)?;
        let lo_closed = lo_closed && lo.is_finite();
        let hi_closed = hi_closed && hi.is_finite();
        let iv = Interval { lo, lo_closed, hi, hi_closed };
        if iv.is_empty() {
            return Err(IntervalError::Empty(iv.to_string()));
        }
        Ok(iv)
    }

    /// The interval containing every value: `(-inf, inf)`.
    pub fn full() -> Interval {
        Interval {
            lo: Real::NEG_INFINITY,
            lo_closed: false,
            hi: Real::INFINITY,
            hi_closed: false,
        }
    }

    /// `[v, v]` — used when lowering `== v` comparisons.
    pub fn point(v: f64) -> Result<Interval, IntervalError> {
        Interval::new(v, true, v, true)
    }

    /// `[v, inf)` or `(v, inf)`.
    pub fn at_least(v: f64, closed: bool) -> Result<Interval, IntervalError> {
        Interval::new(v, closed, f64::INFINITY, false)
    }

    /// `(-inf, v]` or `(-inf, v)`.
    pub fn at_most(v: f64, closed: bool) -> Result<Interval, IntervalError> {
        Interval::new(f64::NEG_INFINITY, false, v, closed)
    }

    pub fn lo(&self) -> (Real, bool) {
        (self.lo, self.lo_closed)
    }

    pub fn hi(&self) -> (Real, bool) {
        (self.hi, self.hi_closed)
    }

    fn is_empty(&self) -> bool {
        match self.lo.cmp(&self.hi) {
            Ordering::Less => false,
            Ordering::Equal => !(self.lo_closed && self.hi_closed),
            Ordering::Greater => true,
        }
    }

    pub fn is_full(&self) -> bool {
        *self == Interval::full()
    }

    pub fn contains(&self, v: f64) -> bool {
        let Ok(v) = Real::new(v) else { return false };
        let above_lo = match v.cmp(&self.lo) {
            Ordering::Greater => true,
            Ordering::Equal => self.lo_closed,
            Ordering::Less => false,
        };
        let below_hi = match v.cmp(&self.hi) {
            Ordering::Less => true,
            Ordering::Equal => self.hi_closed,
            Ordering::Greater => false,
        };
        above_lo && below_hi
    }

    /// Set inclusion: does every value of `self` lie in `other`?
    pub fn is_subset(&self, other: &Interval) -> bool {
        // other's lower bound must admit at least as much as self's.
        let lo_ok = match other.lo.cmp(&self.lo) {
            Ordering::Less => true,
            Ordering::Equal => other.lo_closed || !self.lo_closed,
            Ordering::Greater => false,
        };
        let hi_ok = match other.hi.cmp(&self.hi) {
            Ordering::Greater => true,
            Ordering::Equal => other.hi_closed || !self.hi_closed,
            Ordering::Less => false,
        };
        lo_ok && hi_ok
    }

    /// Intersection; `None` when the overlap is empty.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let (lo, lo_closed) = match self.lo.cmp(&other.lo) {
            Ordering::Greater => (self.lo, self.lo_closed),
            Ordering::Less => (other.lo, other.lo_closed),
            Ordering::Equal => (self.lo, self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match self.hi.cmp(&other.hi) {
            Ordering::Less => (self.hi, self.hi_closed),
            Ordering::Greater => (other.hi, other.hi_closed),
            Ordering::Equal => (self.hi, self.hi_closed && other.hi_closed),
        };
        let iv = Interval { lo, lo_closed, hi, hi_closed };
        if iv.is_empty() {
            None
        } else {
            Some(iv)
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' },
        )
    }
}

impl FromStr for Interval {
    type Err = IntervalError;

    /// Parses the display form, e.g. `[18, inf)`. Used by the JSON encoding
    /// of programs, where intervals travel as strings.
    fn from_str(s: &str) -> Result<Interval, IntervalError> {
        let bad = || IntervalError::Empty(s.to_string());
        let mut chars = s.chars();
        let lo_closed = match chars.next() {
            Some('[') => true,
            Some('(') => false,
            _ => return Err(bad()),
        };
        let body: String = chars.collect();
        let hi_closed = match body.chars().last() {
            Some(']') => true,
            Some(')') => false,
            _ => return Err(bad()),
        };
        let body = &body[..body.len() - 1];
        let (lo_s, hi_s) = body.split_once(',').ok_or_else(bad)?;
        let lo: Real = lo_s.trim().parse().map_err(|_| IntervalError::NotANumber)?;
        let hi: Real = hi_s.trim().parse().map_err(|_| IntervalError::NotANumber)?;
        Interval::new(lo.get(), lo_closed, hi.get(), hi_closed)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Interval, D::Error> {
        use serde::de::Error;
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_rejects_nan_and_canonicalizes_negative_zero() {
        assert!(Real::new(f64::NAN).is_err());
        let z = Real::new(-0.0).unwrap();
        assert_eq!(z, Real::ZERO);
        assert_eq!(z.to_string(), "0");
    }

    #[test]
    fn real_display_round_trips() {
        for v in [0.5, 18.0, 1e-6, 0.1 + 0.2, f64::MAX, -3.25, 1e20] {
            let r = Real::new(v).unwrap();
            let back: Real = r.to_string().parse().unwrap();
            assert_eq!(r, back, "{v}");
        }
        assert_eq!(Real::INFINITY.to_string(), "inf");
        assert_eq!("-inf".parse::<Real>().unwrap(), Real::NEG_INFINITY);
    }

    #[test]
    fn empty_intervals_are_rejected() {
        assert!(Interval::new(3.0, true, 2.0, true).is_err());
        assert!(Interval::new(1.0, false, 1.0, true).is_err());
        assert!(Interval::new(0.0, true, 0.0, false).is_err());
        assert!(Interval::new(1.0, true, 1.0, true).is_ok());
    }

    #[test]
    fn infinite_endpoints_are_forced_open() {
        let iv = Interval::new(f64::NEG_INFINITY, true, 0.0, true).unwrap();
        assert_eq!(iv.to_string(), "(-inf, 0]");
        assert_eq!(iv, Interval::at_most(0.0, true).unwrap());
    }

    #[test]
    fn containment_respects_open_and_closed_ends() {
        let iv = Interval::new(18.0, true, 65.0, false).unwrap();
        assert!(iv.contains(18.0));
        assert!(iv.contains(64.999));
        assert!(!iv.contains(65.0));
        assert!(!iv.contains(17.999));
        assert!(!iv.contains(f64::NAN));
    }

    #[test]
    fn subset_is_a_partial_order() {
        let a = Interval::new(18.0, true, 30.0, true).unwrap();
        let b = Interval::at_least(18.0, true).unwrap();
        let c = Interval::at_least(18.0, false).unwrap();
        assert!(a.is_subset(&b));
        assert!(!b.is_subset(&a));
        assert!(c.is_subset(&b));
        assert!(!b.is_subset(&c)); // b contains 18, c does not
        assert!(a.is_subset(&a));
    }

    #[test]
    fn intersect_agrees_with_subset() {
        let a = Interval::new(0.0, true, 10.0, false).unwrap();
        let b = Interval::new(5.0, false, 20.0, true).unwrap();
        let i = a.intersect(&b).unwrap();
        assert_eq!(i.to_string(), "(5, 10)");
        assert!(i.is_subset(&a) && i.is_subset(&b));
        // Disjoint and touching-but-open cases are empty.
        let c = Interval::new(10.0, true, 11.0, true).unwrap();
        assert!(a.intersect(&c).is_none());
    }

    #[test]
    fn display_round_trips_through_from_str() {
        for iv in [
            Interval::full(),
            Interval::point(1.0).unwrap(),
            Interval::new(0.5, false, 2.25, true).unwrap(),
            Interval::at_least(18.0, true).unwrap(),
        ] {
            let back: Interval = iv.to_string().parse().unwrap();
            assert_eq!(iv, back);
        }
    }
}
