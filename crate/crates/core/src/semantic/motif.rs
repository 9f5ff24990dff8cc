use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }

    pub fn times(self, o: Sign) -> Sign {
        if self == o {
            Sign::Pos
        } else {
            Sign::Neg
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Pos => '+',
            Sign::Neg => '-',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Extent {
    /// Bounded: ends at the next transition point.
    B,
    /// Unbounded growth.
    U,
    /// Horizontal asymptote.
    H,
}

/// One shape primitive: signs of the first and second derivative plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Motif {
    pub mono: Sign,
    pub conv: Sign,
    pub extent: Extent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Inflection,
    Maximum,
    Minimum,
}

impl Motif {
    pub fn new(mono: Sign, conv: Sign, extent: Extent) -> Result<Self> {
        let m = Self { mono, conv, extent };
        if extent == Extent::H && mono == conv {
            return Err(Error::InvalidConfig(format!(
                "motif {m}: a horizontal asymptote needs opposite monotonicity and convexity"
            )));
        }
        Ok(m)
    }

    /// Sign of the second derivative of the curve normalized to rise from 0
    /// to 1: `+` when the slope magnitude grows along the motif.
    pub fn sigma(&self) -> Sign {
        self.mono.times(self.conv)
    }

    /// The shape order used for enumeration: `++ < +- < -+ < --`, then by extent.
    pub(crate) fn rank(&self) -> (u8, Extent) {
        let s = match (self.mono, self.conv) {
            (Sign::Pos, Sign::Pos) => 0,
            (Sign::Pos, Sign::Neg) => 1,
            (Sign::Neg, Sign::Pos) => 2,
            (Sign::Neg, Sign::Neg) => 3,
        };
        (s, self.extent)
    }

    /// The transition type if `next` may follow `self`.
    pub fn transition_to(&self, next: &Motif) -> Option<Transition> {
        match (self.mono, self.conv, next.mono, next.conv) {
            (m1, c1, m2, c2) if m1 == m2 && c1 != c2 => Some(Transition::Inflection),
            (Sign::Pos, Sign::Neg, Sign::Neg, Sign::Neg) => Some(Transition::Maximum),
            (Sign::Neg, Sign::Pos, Sign::Pos, Sign::Pos) => Some(Transition::Minimum),
            _ => None,
        }
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = match self.extent {
            Extent::B => 'b',
            Extent::U => 'u',
            Extent::H => 'h',
        };
        write!(f, "{}{}{}", self.mono.symbol(), self.conv.symbol(), e)
    }
}

impl FromStr for Motif {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse motif `{s}`"));
        let c: Vec<char> = s.chars().collect();
        if c.len() != 3 {
            return Err(bad());
        }
        let sign = |ch: char| match ch {
            '+' => Ok(Sign::Pos),
            '-' | '−' => Ok(Sign::Neg),
            _ => Err(bad()),
        };
        let extent = match c[2] {
            'b' => Extent::B,
            'u' => Extent::U,
            'h' => Extent::H,
            _ => return Err(bad()),
        };
        Motif::new(sign(c[0])?, sign(c[1])?, extent)
    }
}

impl Serialize for Motif {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Motif {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
