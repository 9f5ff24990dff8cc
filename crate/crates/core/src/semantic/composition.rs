use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::motif::{Extent, Motif, Sign, Transition};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_MOTIFS: usize = 4;

/// Constraint on the final motif's extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalKind {
    H,
    U,
    Any,
}

impl FromStr for TerminalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(TerminalKind::H),
            "u" => Ok(TerminalKind::U),
            "any" => Ok(TerminalKind::Any),
            o => Err(Error::InvalidConfig(format!("unknown terminal kind `{o}`"))),
        }
    }
}

impl TerminalKind {
    pub fn admits(self, e: Extent) -> bool {
        match self {
            TerminalKind::H => e == Extent::H,
            TerminalKind::U => e == Extent::U,
            TerminalKind::Any => e != Extent::B,
        }
    }
}

/// A grammar-valid motif sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Motif>", into = "Vec<Motif>")]
pub struct Composition {
    motifs: Vec<Motif>,
}

impl TryFrom<Vec<Motif>> for Composition {
    type Error = Error;
    fn try_from(m: Vec<Motif>) -> Result<Self> {
        Composition::new(m)
    }
}

impl From<Composition> for Vec<Motif> {
    fn from(c: Composition) -> Self {
        c.motifs
    }
}

impl Composition {
    pub fn new(motifs: Vec<Motif>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("invalid composition: {m}")));
        let Some(last) = motifs.last() else {
            return bad("empty".into());
        };
        if last.extent == Extent::B {
            return bad("last motif must be unbounded (u or h)".into());
        }
        if let Some(m) = motifs[..motifs.len() - 1].iter().find(|m| m.extent != Extent::B) {
            return bad(format!("non-terminal motif {m} must be bounded"));
        }
        for w in motifs.windows(2) {
            if w[0].transition_to(&w[1]).is_none() {
                return bad(format!("{} cannot be followed by {}", w[0], w[1]));
            }
        }
        Ok(Self { motifs })
    }

    pub fn motifs(&self) -> &[Motif] {
        &self.motifs
    }

    pub fn len(&self) -> usize {
        self.motifs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }

    pub fn last(&self) -> &Motif {
        self.motifs.last().expect("non-empty by construction")
    }

    /// Transition types at `t_1 … t_{k−1}`.
    pub fn transitions(&self) -> Vec<Transition> {
        self.motifs
            .windows(2)
            .map(|w| w[0].transition_to(&w[1]).expect("validated"))
            .collect()
    }

    /// Whether the derivative at the last transition is a free property
    /// (it is pinned to 0 after an extremum).
    pub fn has_free_last_derivative(&self) -> bool {
        self.len() >= 2 && self.transitions().last() == Some(&Transition::Inflection)
    }

    pub fn labels(&self) -> Vec<String> {
        self.motifs.iter().map(|m| m.to_string()).collect()
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, m) in self.motifs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{m}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for Composition {
    type Err = Error;
    /// Accepts `+-b,--h` or `(+-b, --h)`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let motifs = inner
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<Motif>>>()?;
        Composition::new(motifs)
    }
}

fn all_shapes(extent: Extent) -> Vec<Motif> {
    let mut v = Vec::new();
    for mono in [Sign::Pos, Sign::Neg] {
        for conv in [Sign::Pos, Sign::Neg] {
            if let Ok(m) = Motif::new(mono, conv, extent) {
                v.push(m);
            }
        }
    }
    v.sort_by_key(|m| m.rank());
    v
}

/// Every valid composition with at most `max_motifs` motifs whose last motif
/// satisfies `terminal`, ordered by length and then lexicographically.
pub fn enumerate_compositions(max_motifs: usize, terminal: TerminalKind) -> Vec<Composition> {
    let bounded = all_shapes(Extent::B);
    let mut terminals: Vec<Motif> = [Extent::U, Extent::H]
        .into_iter()
        .filter(|&e| terminal.admits(e))
        .flat_map(all_shapes)
        .collect();
    terminals.sort_by_key(|m| m.rank());
    let mut out = Vec::new();
    // prefixes of bounded motifs, grown one motif at a time
    let mut prefixes: Vec<Vec<Motif>> = vec![Vec::new()];
    for _len in 1..=max_motifs {
        for p in &prefixes {
            for t in &terminals {
                if p.last().is_none_or(|l| l.transition_to(t).is_some()) {
                    let mut m = p.clone();
                    m.push(*t);
                    out.push(Composition::new(m).expect("built from the transition rules"));
                }
            }
        }
        prefixes = prefixes
            .iter()
            .flat_map(|p| {
                bounded
                    .iter()
                    .filter(|b| p.last().is_none_or(|l| l.transition_to(b).is_some()))
                    .map(|b| {
                        let mut q = p.clone();
                        q.push(*b);
                        q
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}
