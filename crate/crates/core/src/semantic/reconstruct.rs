//! Trajectory predictor: renders a representation as a C¹ curve.
//!
//! Each bounded motif is drawn on its normalized box `u, G ∈ [0, 1]` as
//! `G(u) = P·u + (Q − P)·Φ(u)`, where `P` and `Q` are the endpoint slopes
//! relative to the secant and `Φ' = φ` rises from 0 to 1 with
//! `Φ(1) = m = (1 − P)/(Q − P)`. For `m ≤ 1/2`, `φ(u) = u^κ` with
//! `κ = 1/m − 1`; otherwise `φ(u) = 1 − (1 − u)^β` with `β = m/(1 − m)`.
//! Both exponents are at least 1, so curvature stays bounded. The result is
//! convex exactly when `P < 1 < Q`; concave motifs use the point reflection
//! `1 − G(1 − u)` with the slopes swapped. Slopes at transitions are 0 at
//! extrema and a power mean of the neighbouring secants at inflections
//! (above both secants when the slope peaks, below both when it dips).

use super::composition::Composition;
use super::motif::{Extent, Motif, Sign, Transition};
use super::real::Real;
use super::representation::{Properties, SemanticRepresentation, Violation, ViolationKind};
use crate::error::{Error, Result};

const STEEP_FACTOR: f64 = 1.5;
const SHALLOW_FACTOR: f64 = 0.5;

/// Checks that relative endpoint slopes `(p, q)` admit a curve of normalized
/// convexity `sigma`.
pub(crate) fn segment_shape(sigma: Sign, p: f64, q: f64) -> std::result::Result<(), String> {
    let ok = match sigma {
        Sign::Pos => (0.0..1.0).contains(&p) && q > 1.0,
        Sign::Neg => p > 1.0 && (0.0..1.0).contains(&q),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("relative endpoint slopes ({p}, {q}) do not fit the motif"))
    }
}

#[derive(Debug, Clone)]
struct Segment<R> {
    t_l: R,
    inv_h: R,
    v_l: R,
    dv: R,
    /// Relative slopes in the drawing direction (swapped for concave).
    p: R,
    q: R,
    /// `κ + 1 = 1/m` or `β + 1 = 1/(1 − m)`.
    expo: R,
    low_mass: bool,
    convex: bool,
}

impl<R: Real> Segment<R> {
    fn new(t_l: R, t_r: R, v_l: R, v_r: R, d_l: R, d_r: R, sigma: Sign) -> Self {
        let h = t_r - t_l;
        let dv = v_r - v_l;
        let s = dv / h;
        let (p, q) = (d_l / s, d_r / s);
        let convex = sigma == Sign::Pos;
        let (p, q) = if convex { (p, q) } else { (q, p) };
        let m = (-p + 1.0) / (q - p);
        let low_mass = m.value() <= 0.5;
        let expo = if low_mass { m.recip() } else { (-m + 1.0).recip() };
        Self {
            t_l,
            inv_h: h.recip(),
            v_l,
            dv,
            p,
            q,
            expo,
            low_mass,
            convex,
        }
    }

    #[inline]
    fn pow(x: R, e: R) -> R {
        // x^e ≤ x for e ≥ 1, so tiny bases are negligible; this also keeps
        // dual derivatives away from 1/x overflow
        if x.value() <= 1e-300 {
            R::cst(0.0)
        } else {
            (e * x.ln()).exp()
        }
    }

    #[inline]
    fn g_convex(&self, w: R) -> R {
        let mass = if self.low_mass {
            Self::pow(w, self.expo) / self.expo
        } else {
            w - (-Self::pow(-w + 1.0, self.expo) + 1.0) / self.expo
        };
        self.p * w + (self.q - self.p) * mass
    }

    #[inline]
    fn eval(&self, t: R) -> R {
        let u = (t - self.t_l) * self.inv_h;
        let g = if self.convex {
            self.g_convex(u)
        } else {
            -self.g_convex(-u + 1.0) + 1.0
        };
        self.v_l + self.dv * g
    }
}

#[derive(Debug, Clone)]
enum Tail<R> {
    Asymptote { a: R, lambda: R },
    Quadratic { half_g: R },
    Log { g: R },
}

/// A representation prepared for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Curve<'a, R> {
    composition: &'a Composition,
    times: Vec<R>,
    values: Vec<R>,
    slopes: Vec<R>,
    segments: Vec<Segment<R>>,
    tail: Tail<R>,
}

fn power_mean<R: Real>(x: R, y: R, p: f64) -> R {
    // ((x^p + y^p) / 2)^(1/p)
    let m = ((x.ln() * p).exp() + (y.ln() * p).exp()) * 0.5;
    (m.ln() / p).exp()
}

impl<'a, R: Real> Curve<'a, R> {
    pub fn new(composition: &'a Composition, props: &Properties<R>) -> Self {
        let motifs: &[Motif] = composition.motifs();
        let k = motifs.len();
        let times = props.times.clone();
        let values = props.values.clone();
        // slopes at t₀ … t_{k−1}
        let mut slopes = vec![props.derivatives[0]];
        if k >= 2 {
            let transitions = composition.transitions();
            let secant = |i: usize| (values[i + 1] - values[i]) / (times[i + 1] - times[i]);
            for j in 1..k - 1 {
                let d = match transitions[j - 1] {
                    Transition::Maximum | Transition::Minimum => R::cst(0.0),
                    Transition::Inflection => {
                        let (sl, sr) = (secant(j - 1).abs(), secant(j).abs());
                        let mag = match motifs[j - 1].sigma() {
                            Sign::Pos => power_mean(sl, sr, 4.0) * STEEP_FACTOR,
                            Sign::Neg => power_mean(sl, sr, -4.0) * SHALLOW_FACTOR,
                        };
                        mag * motifs[j].mono.value()
                    }
                };
                slopes.push(d);
            }
            slopes.push(props.derivatives[1]);
        }
        let segments = (0..k.saturating_sub(1))
            .map(|i| {
                Segment::new(
                    times[i],
                    times[i + 1],
                    values[i],
                    values[i + 1],
                    slopes[i],
                    slopes[i + 1],
                    motifs[i].sigma(),
                )
            })
            .collect();
        let last = motifs[k - 1];
        let d = slopes[k - 1];
        let tail = match last.extent {
            Extent::H => {
                let a = props.terminal;
                Tail::Asymptote {
                    a,
                    lambda: d / (a - values[k - 1]),
                }
            }
            _ if last.mono == last.conv => Tail::Quadratic {
                half_g: props.terminal * (0.5 * last.conv.value()),
            },
            _ => Tail::Log { g: props.terminal },
        };
        Self {
            composition,
            times,
            values,
            slopes,
            segments,
            tail,
        }
    }

    pub fn composition(&self) -> &Composition {
        self.composition
    }

    /// Slope at `t₀` and each transition.
    pub fn slopes(&self) -> &[R] {
        &self.slopes
    }

    pub(crate) fn segment_pq(&self, i: usize) -> (f64, f64) {
        let s = &self.segments[i];
        if s.convex {
            (s.p.value(), s.q.value())
        } else {
            (s.q.value(), s.p.value())
        }
    }

    pub fn eval(&self, t: f64) -> R {
        self.eval_at(R::cst(t))
    }

    /// Evaluation with a time of the same scalar type, so derivatives with
    /// respect to `t` are available through dual numbers.
    pub fn eval_at(&self, t: R) -> R {
        let k = self.times.len();
        let tv = t.value();
        // at t₀ itself this is exactly `values[0]`, which the pieces below
        // only reproduce up to rounding
        if tv <= self.times[0].value() {
            return self.values[0] + self.slopes[0] * (t - self.times[0]);
        }
        // index of the piece containing t
        let mut i = 0;
        while i + 1 < k && tv >= self.times[i + 1].value() {
            i += 1;
        }
        if i + 1 < k {
            return self.segments[i].eval(t);
        }
        let tau = t - self.times[k - 1];
        let v = self.values[k - 1];
        let d = self.slopes[k - 1];
        match &self.tail {
            Tail::Asymptote { a, lambda } => *a + (v - *a) * (-(*lambda * tau)).exp(),
            Tail::Quadratic { half_g } => v + d * tau + *half_g * tau * tau,
            Tail::Log { g } => {
                let gt = *g * tau;
                if gt.value().abs() < 1e-12 {
                    v + d * tau * (-gt * 0.5 + 1.0)
                } else {
                    v + d / *g * gt.ln_1p()
                }
            }
        }
    }
}

impl<'a> Curve<'a, f64> {
    fn to_dual(&self) -> Curve<'a, super::real::Dual<1>> {
        use super::real::Dual;
        let k = self.times.len();
        let mut derivatives = vec![Dual::constant(self.slopes[0])];
        if k >= 2 {
            derivatives.push(Dual::constant(self.slopes[k - 1]));
        }
        let props = Properties {
            times: self.times.iter().map(|&v| Dual::constant(v)).collect(),
            values: self.values.iter().map(|&v| Dual::constant(v)).collect(),
            derivatives,
            terminal: Dual::constant(match self.tail {
                Tail::Asymptote { a, .. } => a,
                Tail::Quadratic { half_g } => half_g * 2.0 * self.composition.last().conv.value(),
                Tail::Log { g } => g,
            }),
        };
        Curve::new(self.composition, &props)
    }

    /// Exact first derivative at `t`.
    pub fn slope_at(&self, t: f64) -> f64 {
        self.to_dual().eval_at(super::real::Dual::var(t, 0)).d[0]
    }

    /// First derivative of bounded piece `i` at `t`, including its right
    /// endpoint (the left limit at the next transition).
    pub fn piece_slope(&self, i: usize, t: f64) -> f64 {
        self.to_dual().segments[i].eval(super::real::Dual::var(t, 0)).d[0]
    }
}

/// Evaluates `rep` at each time; `rep` must be valid.
pub fn reconstruct_trajectory(rep: &SemanticRepresentation, times: &[f64]) -> Result<Vec<f64>> {
    let horizon = times.iter().copied().fold(rep.times[rep.times.len() - 1] + 1.0, f64::max);
    let v = super::representation::validate_semantics(rep, rep.times[0], horizon);
    if !v.is_empty() {
        return Err(Error::InvalidRepresentation(v));
    }
    if let Some(&t) = times.iter().find(|&&t| !(t >= rep.times[0])) {
        return Err(Error::InvalidConfig(format!("time {t} before t0 = {}", rep.times[0])));
    }
    let c = rep.curve();
    Ok(times.iter().map(|&t| c.eval(t)).collect())
}

/// Samples `n` equally spaced points on `[t₀, horizon]` and checks that first
/// and second differences carry each motif's signs inside every piece, up to
/// a band of `tol` around zero.
pub fn check_motif_signs(rep: &SemanticRepresentation, horizon: f64, n: usize, tol: f64) -> Vec<Violation> {
    let t0 = rep.times[0];
    let k = rep.k();
    let c = rep.curve();
    let step = (horizon - t0) / (n - 1) as f64;
    let ts: Vec<f64> = (0..n).map(|i| t0 + step * i as f64).collect();
    let ys: Vec<f64> = ts.iter().map(|&t| c.eval(t)).collect();
    let motifs = rep.composition.motifs();
    let mut out = Vec::new();
    for (m, motif) in motifs.iter().enumerate() {
        let lo = rep.times[m];
        let hi = if m + 1 < k { rep.times[m + 1] } else { f64::INFINITY };
        let mut first_bad = None;
        let mut second_bad = None;
        for i in 1..n - 1 {
            // all three stencil points strictly inside the piece
            if !(ts[i - 1] > lo && ts[i + 1] < hi) {
                continue;
            }
            let d1 = (ys[i + 1] - ys[i]) * motif.mono.value();
            let d2 = (ys[i + 1] - 2.0 * ys[i] + ys[i - 1]) * motif.conv.value();
            if d1 < -tol && first_bad.is_none() {
                first_bad = Some(ts[i]);
            }
            if d2 < -tol && second_bad.is_none() {
                second_bad = Some(ts[i]);
            }
        }
        if let Some(t) = first_bad {
            out.push(Violation::new(ViolationKind::Shape, format!("motif {} ({motif}) has the wrong slope sign at t = {t}", m + 1)));
        }
        if let Some(t) = second_bad {
            out.push(Violation::new(
                ViolationKind::Shape,
                format!("motif {} ({motif}) has the wrong curvature sign at t = {t}", m + 1),
            ));
        }
    }
    out
}
