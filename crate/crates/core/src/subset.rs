use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// A subset of the queue index set N = {1,2,3,4}, stored as a bitmask
/// (bit i-1 set means queue i is in the set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Subset(u8);

impl Subset {
    pub const EMPTY: Subset = Subset(0);
    pub const N: Subset = Subset(0b1111);
    pub const S123: Subset = Subset(0b0111);
    pub const S134: Subset = Subset(0b1101);
    pub const S14: Subset = Subset(0b1001);
    pub const S23: Subset = Subset(0b0110);

    /// The subsets whose induced chains are positive recurrent under the
    /// sign conditions, in report order.
    pub const POSITIVE: [Subset; 5] = [Subset::N, Subset::S123, Subset::S134, Subset::S14, Subset::S23];

    pub fn from_bits(bits: u8) -> Subset {
        Subset(bits & 0b1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Builds a subset from 1-based queue indices.
    pub fn from_queues(queues: &[usize]) -> Result<Subset> {
        let mut bits = 0u8;
        for &q in queues {
            if !(1..=4).contains(&q) {
                return Err(Error::InvalidArgument(format!("queue index {q} outside 1..4")));
            }
            bits |= 1 << (q - 1);
        }
        Ok(Subset(bits))
    }

    /// `queue` is 1-based.
    pub fn contains(self, queue: usize) -> bool {
        (1..=4).contains(&queue) && self.0 & (1 << (queue - 1)) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// 1-based queue indices in increasing order.
    pub fn queues(self) -> Vec<usize> {
        (1..=4).filter(|&q| self.contains(q)).collect()
    }

    /// 0-based coordinates not in the subset.
    pub fn free_coords(self) -> Vec<usize> {
        (0..4).filter(|&c| self.0 & (1 << c) == 0).collect()
    }

    pub fn is_positive_class(self) -> bool {
        Subset::POSITIVE.contains(&self)
    }
}

pub(crate) fn fmt_subset(bits: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if bits == 0b1111 {
        return f.write_str("N");
    }
    f.write_str("{")?;
    let mut first = true;
    for q in 1..=4 {
        if bits & (1 << (q - 1)) != 0 {
            if !first {
                f.write_str(",")?;
            }
            write!(f, "{q}")?;
            first = false;
        }
    }
    f.write_str("}")
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_subset(self.0, f)
    }
}

impl FromStr for Subset {
    type Err = Error;

    /// Accepts `N`, `{1,2,3}`, `1,2,3` and `123`.
    fn from_str(s: &str) -> Result<Subset> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("n") {
            return Ok(Subset::N);
        }
        let inner = t.trim_start_matches('{').trim_end_matches('}');
        let mut queues = Vec::new();
        for ch in inner.chars() {
            match ch {
                ',' | ' ' => {}
                '1'..='4' => queues.push(ch as usize - '0' as usize),
                _ => return Err(Error::InvalidArgument(format!("bad subset '{s}'"))),
            }
        }
        if queues.is_empty() {
            return Err(Error::EmptySubset);
        }
        Subset::from_queues(&queues)
    }
}

impl Serialize for Subset {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subset {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Subset, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
