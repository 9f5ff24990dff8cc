use std::fmt;

use serde::{Deserialize, Serialize};

use super::composition::Composition;
use super::motif::{Extent, Sign, Transition};
use super::real::Real;
use super::reconstruct::{segment_shape, Curve};
use crate::error::{Error, Result};

/// Parameter of the final motif.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalParam {
    Asymptote(f64),
    Growth(f64),
}

impl TerminalParam {
    pub fn value(&self) -> f64 {
        match *self {
            TerminalParam::Asymptote(v) | TerminalParam::Growth(v) => v,
        }
    }
}

/// A composition plus the numbers that pin down one trajectory: times and
/// values at `t₀` and every transition, the derivative at `t₀` and (for
/// `k ≥ 2`) at the last transition, and the terminal parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRepresentation {
    pub composition: Composition,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
    pub terminal: TerminalParam,
}

/// Named scalar property of a representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PropertyId {
    ValueT0,
    Time(usize),
    Value(usize),
    DerivT0,
    DerivLast,
    Asymptote,
    Growth,
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PropertyId::ValueT0 => f.write_str("value_t0"),
            PropertyId::Time(i) => write!(f, "time_{i}"),
            PropertyId::Value(i) => write!(f, "value_{i}"),
            PropertyId::DerivT0 => f.write_str("deriv_t0"),
            PropertyId::DerivLast => f.write_str("deriv_last"),
            PropertyId::Asymptote => f.write_str("asymptote"),
            PropertyId::Growth => f.write_str("growth"),
        }
    }
}

impl std::str::FromStr for PropertyId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let idx = |rest: &str| -> Result<usize> {
            rest.parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| Error::InvalidConfig(format!("bad property index in `{s}`")))
        };
        Ok(match s {
            "value_t0" => PropertyId::ValueT0,
            "deriv_t0" => PropertyId::DerivT0,
            "deriv_last" => PropertyId::DerivLast,
            "asymptote" => PropertyId::Asymptote,
            "growth" => PropertyId::Growth,
            _ => {
                if let Some(r) = s.strip_prefix("time_") {
                    PropertyId::Time(idx(r)?)
                } else if let Some(r) = s.strip_prefix("value_") {
                    PropertyId::Value(idx(r)?)
                } else {
                    return Err(Error::InvalidConfig(format!("unknown property `{s}`")));
                }
            }
        })
    }
}

impl From<PropertyId> for String {
    fn from(p: PropertyId) -> Self {
        p.to_string()
    }
}

impl TryFrom<String> for PropertyId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Free properties of a composition in canonical order: `value_t0`,
/// `time_1..`, `value_1..`, `deriv_t0`, `deriv_last` (when not fixed by an
/// extremum), then `asymptote` or `growth`.
pub fn property_layout(c: &Composition) -> Vec<PropertyId> {
    let k = c.len();
    let mut v = vec![PropertyId::ValueT0];
    v.extend((1..k).map(PropertyId::Time));
    v.extend((1..k).map(PropertyId::Value));
    v.push(PropertyId::DerivT0);
    if c.has_free_last_derivative() {
        v.push(PropertyId::DerivLast);
    }
    v.push(match c.last().extent {
        Extent::H => PropertyId::Asymptote,
        _ => PropertyId::Growth,
    });
    v
}

/// Unpacked physical properties, generic over the scalar type.
#[derive(Debug, Clone)]
pub struct Properties<R> {
    pub times: Vec<R>,
    pub values: Vec<R>,
    pub derivatives: Vec<R>,
    pub terminal: R,
}

impl<R: Real> Properties<R> {
    /// From a flat vector in `property_layout` order; `t₀` is fixed to 0.
    pub fn from_flat(c: &Composition, flat: &[R]) -> Self {
        let k = c.len();
        let mut times = Vec::with_capacity(k);
        times.push(R::cst(0.0));
        times.extend_from_slice(&flat[1..k]);
        let mut values = Vec::with_capacity(k);
        values.push(flat[0]);
        values.extend_from_slice(&flat[k..2 * k - 1]);
        let mut derivatives = vec![flat[2 * k - 1]];
        let mut next = 2 * k;
        if k >= 2 {
            if c.has_free_last_derivative() {
                derivatives.push(flat[next]);
                next += 1;
            } else {
                derivatives.push(R::cst(0.0));
            }
        }
        Self {
            times,
            values,
            derivatives,
            terminal: flat[next],
        }
    }
}

impl Properties<f64> {
    pub fn into_representation(self, c: &Composition) -> SemanticRepresentation {
        let terminal = match c.last().extent {
            Extent::H => TerminalParam::Asymptote(self.terminal),
            _ => TerminalParam::Growth(self.terminal),
        };
        SemanticRepresentation {
            composition: c.clone(),
            times: self.times,
            values: self.values,
            derivatives: self.derivatives,
            terminal,
        }
    }
}

/// Keeps gaps, steps and relative endpoint slopes strictly inside their open
/// intervals once `sigmoid` or `softplus` saturate in floating point.
const SLOPE_MARGIN: f64 = 1e-6;

fn positive<R: Real>(x: R) -> R {
    x.softplus() + SLOPE_MARGIN
}

fn inside_unit<R: Real>(x: R) -> R {
    x.sigmoid() * (1.0 - 2.0 * SLOPE_MARGIN) + SLOPE_MARGIN
}

fn above_one<R: Real>(x: R) -> R {
    x.softplus() + (1.0 + SLOPE_MARGIN)
}

/// Maps unconstrained latents (one per free property, `property_layout`
/// order) to physical properties that satisfy every shape constraint.
pub fn latents_to_physical<R: Real>(c: &Composition, r: &[R]) -> Vec<R> {
    let k = c.len();
    let motifs = c.motifs();
    let mut out = Vec::with_capacity(r.len());
    out.push(r[0]);
    let mut times = vec![R::cst(0.0)];
    for i in 1..k {
        let t = times[i - 1] + positive(r[i]);
        times.push(t);
        out.push(t);
    }
    let mut values = vec![r[0]];
    for i in 1..k {
        let v = values[i - 1] + positive(r[k - 1 + i]) * motifs[i - 1].mono.value();
        values.push(v);
        out.push(v);
    }
    let mut next = 2 * k - 1;
    let d0 = if k == 1 {
        positive(r[next]) * motifs[0].mono.value()
    } else {
        let s1 = (values[1] - values[0]) / (times[1] - times[0]);
        match motifs[0].sigma() {
            Sign::Pos => s1 * inside_unit(r[next]),
            Sign::Neg => s1 * above_one(r[next]),
        }
    };
    out.push(d0);
    next += 1;
    if c.has_free_last_derivative() {
        let sl = (values[k - 1] - values[k - 2]) / (times[k - 1] - times[k - 2]);
        let d = match motifs[k - 2].sigma() {
            Sign::Pos => sl * above_one(r[next]),
            Sign::Neg => sl * inside_unit(r[next]),
        };
        out.push(d);
        next += 1;
    }
    let last = c.last();
    let term = match last.extent {
        Extent::H => values[k - 1] + positive(r[next]) * last.mono.value(),
        _ => positive(r[next]),
    };
    out.push(term);
    out
}

impl SemanticRepresentation {
    pub fn k(&self) -> usize {
        self.composition.len()
    }

    /// Flat property vector in `property_layout` order.
    pub fn to_flat(&self) -> Vec<f64> {
        let k = self.k();
        let mut v = vec![self.values[0]];
        v.extend_from_slice(&self.times[1..k]);
        v.extend_from_slice(&self.values[1..k]);
        v.push(self.derivatives[0]);
        if self.composition.has_free_last_derivative() {
            v.push(self.derivatives[1]);
        }
        v.push(self.terminal.value());
        v
    }

    pub fn from_flat(c: &Composition, flat: &[f64]) -> Result<Self> {
        let n = property_layout(c).len();
        if flat.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: flat.len(),
            });
        }
        Ok(Properties::from_flat(c, flat).into_representation(c))
    }

    pub fn properties(&self) -> Vec<(PropertyId, f64)> {
        property_layout(&self.composition).into_iter().zip(self.to_flat()).collect()
    }

    pub fn get(&self, id: PropertyId) -> Option<f64> {
        self.properties().into_iter().find(|(p, _)| *p == id).map(|(_, v)| v)
    }

    fn to_properties(&self) -> Properties<f64> {
        Properties {
            times: self.times.clone(),
            values: self.values.clone(),
            derivatives: self.derivatives.clone(),
            terminal: self.terminal.value(),
        }
    }

    pub fn curve(&self) -> Curve<'_, f64> {
        Curve::new(&self.composition, &self.to_properties())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Length,
    NonFinite,
    Start,
    Ordering,
    Horizon,
    ValuePattern,
    DerivativeSign,
    AsymptoteSide,
    LambdaUndefined,
    Growth,
    Shape,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::Length => "length",
            ViolationKind::NonFinite => "non-finite",
            ViolationKind::Start => "start",
            ViolationKind::Ordering => "ordering",
            ViolationKind::Horizon => "horizon",
            ViolationKind::ValuePattern => "value pattern",
            ViolationKind::DerivativeSign => "derivative sign",
            ViolationKind::AsymptoteSide => "asymptote side",
            ViolationKind::LambdaUndefined => "lambda undefined",
            ViolationKind::Growth => "growth",
            ViolationKind::Shape => "shape",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    pub(crate) fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

/// Every violated invariant of `rep`, empty when valid.
pub fn validate_semantics(rep: &SemanticRepresentation, t0: f64, horizon: f64) -> Vec<Violation> {
    use ViolationKind as K;
    let mut out = Vec::new();
    let k = rep.k();
    let nd = if k == 1 { 1 } else { 2 };
    if rep.times.len() != k || rep.values.len() != k || rep.derivatives.len() != nd {
        out.push(Violation::new(
            K::Length,
            format!(
                "expected {k} times, {k} values, {nd} derivatives; got {}, {}, {}",
                rep.times.len(),
                rep.values.len(),
                rep.derivatives.len()
            ),
        ));
        return out;
    }
    let last = *rep.composition.last();
    let terminal_ok = matches!(
        (last.extent, rep.terminal),
        (Extent::H, TerminalParam::Asymptote(_)) | (Extent::U, TerminalParam::Growth(_))
    );
    if !terminal_ok {
        out.push(Violation::new(K::Length, format!("terminal parameter does not match motif {last}")));
        return out;
    }
    let term = rep.terminal.value();
    let mut all = rep.times.iter().chain(&rep.values).chain(&rep.derivatives).chain(std::iter::once(&term));
    if all.any(|v| !v.is_finite()) {
        out.push(Violation::new(K::NonFinite, "non-finite entry"));
        return out;
    }
    if (rep.times[0] - t0).abs() > 1e-12 {
        out.push(Violation::new(K::Start, format!("first time {} differs from t0 = {t0}", rep.times[0])));
    }
    for (i, w) in rep.times.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            out.push(Violation::new(K::Ordering, format!("time_{} = {} not after {}", i + 1, w[1], w[0])));
        }
    }
    if k >= 2 && !(rep.times[k - 1] < horizon) {
        out.push(Violation::new(K::Horizon, format!("last transition {} not before horizon {horizon}", rep.times[k - 1])));
    }
    let motifs = rep.composition.motifs();
    for i in 0..k - 1 {
        let dv = rep.values[i + 1] - rep.values[i];
        if !(dv * motifs[i].mono.value() > 0.0) {
            out.push(Violation::new(
                K::ValuePattern,
                format!("motif {} ({}) runs from {} to {}", i + 1, motifs[i], rep.values[i], rep.values[i + 1]),
            ));
        }
    }
    // endpoint derivatives of every bounded segment must fit its shape
    if out.is_empty() && k >= 2 {
        let curve = rep.curve();
        for i in 0..k - 1 {
            let (p, q) = curve.segment_pq(i);
            if let Err(m) = segment_shape(motifs[i].sigma(), p, q) {
                out.push(Violation::new(K::DerivativeSign, format!("motif {} ({}): {m}", i + 1, motifs[i])));
            }
        }
    }
    let d_last = *rep.derivatives.last().expect("length checked");
    let v_last = rep.values[k - 1];
    let strict = last.mono != last.conv;
    let ok = if strict { d_last * last.mono.value() > 0.0 } else { d_last * last.mono.value() >= 0.0 };
    if !ok {
        out.push(Violation::new(
            K::DerivativeSign,
            format!("derivative {d_last} at the start of {last} has the wrong sign"),
        ));
    }
    if k >= 2 {
        let tr = rep.composition.transitions();
        if tr[k - 2] != Transition::Inflection && d_last != 0.0 {
            out.push(Violation::new(K::DerivativeSign, "derivative at an extremum must be 0"));
        }
    }
    match rep.terminal {
        TerminalParam::Asymptote(a) => {
            if a == v_last && d_last != 0.0 {
                out.push(Violation::new(K::LambdaUndefined, "asymptote equals last value"));
            } else if !((a - v_last) * last.mono.value() > 0.0) {
                out.push(Violation::new(
                    K::AsymptoteSide,
                    format!("asymptote {a} on the wrong side of {v_last} for {last}"),
                ));
            }
        }
        TerminalParam::Growth(g) => {
            if g < 0.0 {
                out.push(Violation::new(K::Growth, format!("negative growth {g}")));
            }
        }
    }
    out
}

/// Per-kind scales used to normalize property differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyScales {
    pub time: f64,
    pub value: f64,
    pub derivative: f64,
    pub growth: f64,
}

impl Default for PropertyScales {
    fn default() -> Self {
        Self {
            time: 1.0,
            value: 1.0,
            derivative: 1.0,
            growth: 1.0,
        }
    }
}

impl PropertyScales {
    fn of(&self, id: PropertyId) -> f64 {
        match id {
            PropertyId::Time(_) => self.time,
            PropertyId::ValueT0 | PropertyId::Value(_) | PropertyId::Asymptote => self.value,
            PropertyId::DerivT0 | PropertyId::DerivLast => self.derivative,
            PropertyId::Growth => self.growth,
        }
    }
}

/// Per-property normalized absolute differences.
pub fn property_distances(
    a: &SemanticRepresentation,
    b: &SemanticRepresentation,
    scales: &PropertyScales,
) -> Result<Vec<(PropertyId, f64)>> {
    if a.composition != b.composition {
        return Err(Error::CompositionMismatch(
            a.composition.to_string(),
            b.composition.to_string(),
        ));
    }
    Ok(a.properties()
        .into_iter()
        .zip(b.to_flat())
        .map(|((id, x), y)| (id, (x - y).abs() / scales.of(id)))
        .collect())
}

/// Largest normalized property difference between two representations of
/// the same composition.
pub fn semantic_distance(a: &SemanticRepresentation, b: &SemanticRepresentation, scales: &PropertyScales) -> Result<f64> {
    Ok(property_distances(a, b, scales)?
        .into_iter()
        .map(|(_, d)| d)
        .fold(0.0, f64::max))
}
