use std::fmt;

use dashu_int::{IBig, UBig};
use dashu_ratio::RBig;

/// Exact rational satoshi quantity.
pub type Sats = RBig;

pub fn sats(n: u64) -> Sats {
    RBig::from(n)
}

/// Exact ratio `num / den`. Panics on a zero denominator.
pub fn ratio(num: u64, den: u64) -> Sats {
    RBig::from_parts(IBig::from(num), UBig::from(den))
}

/// Rounds to whole satoshis, ties to even.
pub fn round_half_even(x: &Sats) -> IBig {
    let floor = x.floor();
    let frac = x - RBig::from(floor.clone());
    match frac.cmp(&ratio(1, 2)) {
        std::cmp::Ordering::Less => floor,
        std::cmp::Ordering::Greater => floor + IBig::ONE,
        std::cmp::Ordering::Equal => {
            if (&floor % IBig::from(2)).is_zero() {
                floor
            } else {
                floor + IBig::ONE
            }
        }
    }
}

pub fn sum_sats(items: impl IntoIterator<Item = Sats>) -> Sats {
    items.into_iter().fold(Sats::ZERO, |acc, x| acc + x)
}

pub fn to_f64(x: &Sats) -> f64 {
    x.to_f64().value()
}

/// Sorted, disjoint, non-adjacent half-open satoshi intervals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Segments(Vec<(u64, u64)>);

impl Segments {
    pub fn new() -> Self {
        Segments(Vec::new())
    }

    /// Normalises arbitrary ranges: drops empties, sorts, merges overlapping
    /// and touching ranges.
    pub fn from_ranges(ranges: impl IntoIterator<Item = (u64, u64)>) -> Self {
        let mut v: Vec<(u64, u64)> = ranges.into_iter().filter(|(a, b)| a < b).collect();
        v.sort_unstable();
        let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
        for (a, b) in v {
            match out.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => out.push((a, b)),
            }
        }
        Segments(out)
    }

    pub fn full(len: u64) -> Self {
        Segments::from_ranges([(0, len)])
    }

    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_len(&self) -> u64 {
        self.0.iter().map(|(a, b)| b - a).sum()
    }

    pub fn end(&self) -> u64 {
        self.0.last().map_or(0, |r| r.1)
    }

    pub fn contains(&self, x: u64) -> bool {
        let i = self.0.partition_point(|r| r.1 <= x);
        self.0.get(i).is_some_and(|r| r.0 <= x)
    }

    /// Appends a range that starts at or after the current end.
    pub(crate) fn push_back(&mut self, a: u64, b: u64) {
        if a >= b {
            return;
        }
        match self.0.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => {
                debug_assert!(self.0.last().is_none_or(|l| a >= l.1));
                self.0.push((a, b));
            }
        }
    }

    /// Portion inside `[lo, hi)`, rebased so `lo` maps to 0.
    pub fn window(&self, lo: u64, hi: u64) -> Segments {
        let start = self.0.partition_point(|r| r.1 <= lo);
        let mut out = Segments::new();
        for &(a, b) in &self.0[start..] {
            if a >= hi {
                break;
            }
            out.push_back(a.max(lo) - lo, b.min(hi) - lo);
        }
        out
    }
}

impl fmt::Display for Segments {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (a, b)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "[{a},{b})")?;
        }
        f.write_str("}")
    }
}

/// Taint carried by one output. Absence of a mark means clean.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaintMark {
    /// Entire output tainted (Poison, and seed outputs).
    Full,
    /// Tainted share of the output value, in `(0, 1]` (Haircut).
    Fraction(RBig),
    /// Tainted satoshi positions within `[0, value)` (FIFO/LIFO).
    Segments(Segments),
    /// Tainted satoshi count (TIHO).
    Amount(u64),
}

impl TaintMark {
    pub fn kind(&self) -> &'static str {
        match self {
            TaintMark::Full => "full",
            TaintMark::Fraction(_) => "fraction",
            TaintMark::Segments(_) => "segments",
            TaintMark::Amount(_) => "amount",
        }
    }

    /// Tainted satoshis of an output with the given value.
    pub fn taint_value(&self, value: u64) -> Sats {
        match self {
            TaintMark::Full => sats(value),
            TaintMark::Fraction(f) => f * sats(value),
            TaintMark::Segments(s) => sats(s.total_len()),
            TaintMark::Amount(a) => sats(*a),
        }
    }

    /// Checks the mark against the output value it sits on.
    pub fn is_valid_for(&self, value: u64) -> bool {
        match self {
            TaintMark::Full => true,
            TaintMark::Fraction(f) => {
                let num = f.numerator();
                *num > IBig::ZERO && *num <= IBig::from(f.denominator().clone())
            }
            TaintMark::Segments(s) => s.end() <= value,
            TaintMark::Amount(a) => *a <= value,
        }
    }

    /// Segment view of the mark, if it has positional meaning.
    pub fn as_segments(&self, value: u64) -> Option<Segments> {
        match self {
            TaintMark::Full => Some(Segments::full(value)),
            TaintMark::Segments(s) => Some(s.clone()),
            _ => None,
        }
    }
}

/// Taint value of an optional mark; `None` is clean.
pub fn mark_value(mark: Option<&TaintMark>, value: u64) -> Sats {
    mark.map_or(Sats::ZERO, |m| m.taint_value(value))
}
