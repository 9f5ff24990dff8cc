//! Deterministic SVG charts, each written next to the CSV of its points.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::eval::EvaluationGrid;
use crate::fit::{PropertyCurve, SemanticModel};
use crate::surrogate::SurrogateSet;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Doses shown in trajectory overlays.
pub const OVERLAY_DOSES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
/// Samples per property curve.
pub const PROPERTY_GRID: usize = 101;
/// Samples per overlay trajectory on `[0, OVERLAY_T_HI]`.
pub const OVERLAY_POINTS: usize = 126;
pub const OVERLAY_T_HI: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Series>,
    /// Dashed reference lines.
    pub dashed: Vec<Series>,
    /// Points drawn behind the lines.
    pub scatter: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn svg(&self) -> String {
        let all = || {
            self.lines
                .iter()
                .chain(&self.dashed)
                .flat_map(|s| s.points.iter().copied())
                .chain(self.scatter.iter().copied())
        };
        let (x0, x1) = range(all().map(|p| p.0));
        let (y0, y1) = range(all().map(|p| p.1));
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">"
        );
        let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{xv:.3}</text>",
                sx(xv),
                TOP + ph + 16.0
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{yv:.3}</text>",
                LEFT - 6.0,
                sy(yv) + 4.0
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            LEFT + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for &(x, y) in self.scatter.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"#bbbbbb\"/>", sx(x), sy(y));
        }
        let mut draw = |series: &[Series], dash: &str, legend_offset: usize| {
            for (k, ser) in series.iter().enumerate() {
                let color = PALETTE[(k + legend_offset) % PALETTE.len()];
                let pts: Vec<String> = ser
                    .points
                    .iter()
                    .filter(|p| p.0.is_finite() && p.1.is_finite())
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
                    pts.join(" ")
                );
                let ly = TOP + 14.0 * (k + legend_offset) as f64 + 6.0;
                let _ = writeln!(
                    s,
                    "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
                    WIDTH - RIGHT + 10.0,
                    WIDTH - RIGHT + 28.0
                );
                let _ = writeln!(
                    s,
                    "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
                    WIDTH - RIGHT + 32.0,
                    ly + 4.0,
                    escape(&ser.label)
                );
            }
        };
        draw(&self.lines, "", 0);
        draw(&self.dashed, " stroke-dasharray=\"4 3\"", self.lines.len());
        s.push_str("</svg>\n");
        s
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    Chart {
        title: title.into(),
        x_label: x_label.into(),
        y_label: y_label.into(),
        lines: series.to_vec(),
        ..Chart::default()
    }
    .svg()
}

/// Dose intervals coloured by composition.
pub fn composition_map_svg(model: &SemanticModel) -> String {
    let pw = WIDTH - LEFT - 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"160\" viewBox=\"0 0 {WIDTH} 160\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    let _ = writeln!(s, "<rect width=\"{WIDTH}\" height=\"160\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">Composition map</text>",
        LEFT + pw / 2.0
    );
    for (i, b) in model.branches.iter().enumerate() {
        let x = LEFT + b.lo * pw;
        let w = (b.hi - b.lo) * pw;
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"50\" width=\"{w:.2}\" height=\"50\" fill=\"{}\" fill-opacity=\"0.35\" stroke=\"black\"/>",
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"79\" text-anchor=\"middle\">{}</text>",
            x + w / 2.0,
            escape(&b.composition.to_string())
        );
        let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"118\" text-anchor=\"middle\">{:.3}</text>", b.lo);
    }
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"118\" text-anchor=\"middle\">1.000</text>", LEFT + pw);
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"145\" text-anchor=\"middle\">normalized dose</text>",
        LEFT + pw / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Files written by [`render_reports`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub composition_map: (PathBuf, PathBuf),
    /// `(svg, csv)` per branch and property, in export order.
    pub property_charts: Vec<(PathBuf, PathBuf)>,
    pub trajectories: (PathBuf, PathBuf),
}

impl ReportBundle {
    pub fn files(&self) -> Vec<PathBuf> {
        let mut v = vec![self.composition_map.0.clone(), self.composition_map.1.clone()];
        for (a, b) in &self.property_charts {
            v.push(a.clone());
            v.push(b.clone());
        }
        v.push(self.trajectories.0.clone());
        v.push(self.trajectories.1.clone());
        v
    }
}

/// Rows `(dose, t, kind, value)` of the trajectory overlay.
pub type OverlayRow = (f64, f64, &'static str, f64);

/// The tables behind the trajectory overlay: model curves, optional truth
/// curves and the surrogate scatter.
pub fn overlay_table(
    model: &SemanticModel,
    surrogates: &SurrogateSet,
    truth: Option<&EvaluationGrid>,
) -> Result<Vec<OverlayRow>> {
    let times: Vec<f64> = (0..OVERLAY_POINTS)
        .map(|j| OVERLAY_T_HI * j as f64 / (OVERLAY_POINTS - 1) as f64)
        .collect();
    let mut rows = Vec::new();
    for &a in &OVERLAY_DOSES {
        for (t, v) in times.iter().zip(model.predict_curve(a, &times)?) {
            rows.push((a, *t, "model", v));
        }
    }
    if let Some(g) = truth {
        for &a in &OVERLAY_DOSES {
            let i = g
                .doses
                .iter()
                .enumerate()
                .min_by(|x, y| (x.1 - a).abs().total_cmp(&(y.1 - a).abs()))
                .map(|x| x.0)
                .unwrap_or(0);
            for (j, &t) in g.times.iter().enumerate() {
                rows.push((g.doses[i], t, "truth", g.value(i, j)));
            }
        }
    }
    for p in &surrogates.points {
        rows.push((p.dose, p.time, "surrogate", p.tau_tilde));
    }
    Ok(rows)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn property_chart(c: &PropertyCurve) -> String {
    line_chart(
        &format!("Branch {} {}: {}", c.branch, c.composition, c.property),
        "normalized dose",
        &c.property.to_string(),
        &[Series {
            label: c.property.to_string(),
            points: c.doses.iter().copied().zip(c.values.iter().copied()).collect(),
        }],
    )
}

fn overlay_chart(rows: &[OverlayRow]) -> String {
    let series = |kind: &str| -> Vec<Series> {
        let mut doses: Vec<f64> = rows.iter().filter(|r| r.2 == kind).map(|r| r.0).collect();
        doses.dedup();
        doses
            .iter()
            .map(|&a| Series {
                label: format!("{kind} a={a:.2}"),
                points: rows.iter().filter(|r| r.2 == kind && r.0 == a).map(|r| (r.1, r.3)).collect(),
            })
            .collect()
    };
    Chart {
        title: "Estimated effect trajectories".into(),
        x_label: "normalized time".into(),
        y_label: "effect".into(),
        lines: series("model"),
        dashed: series("truth"),
        scatter: rows.iter().filter(|r| r.2 == "surrogate").map(|r| (r.1, r.3)).collect(),
    }
    .svg()
}

/// Writes the composition map, one chart per branch property and the
/// trajectory overlay into `dir`.
pub fn render_reports(
    model: &SemanticModel,
    surrogates: &SurrogateSet,
    truth: Option<&EvaluationGrid>,
    dir: &Path,
) -> Result<ReportBundle> {
    std::fs::create_dir_all(dir)?;

    let cm = (dir.join("composition_map.svg"), dir.join("composition_map.csv"));
    std::fs::write(&cm.0, composition_map_svg(model))?;
    write_csv(
        &cm.1,
        &["branch", "lo", "hi", "composition"],
        model
            .branches
            .iter()
            .enumerate()
            .map(|(i, b)| vec![i.to_string(), b.lo.to_string(), b.hi.to_string(), b.composition.to_string()]),
    )?;

    let mut property_charts = Vec::new();
    for c in model.export_property_curves(PROPERTY_GRID) {
        let stem = format!("property_b{}_{}", c.branch, c.property);
        let paths = (dir.join(format!("{stem}.svg")), dir.join(format!("{stem}.csv")));
        std::fs::write(&paths.0, property_chart(&c))?;
        write_csv(
            &paths.1,
            &["dose", "value"],
            c.doses.iter().zip(&c.values).map(|(a, v)| vec![a.to_string(), v.to_string()]),
        )?;
        property_charts.push(paths);
    }

    let rows = overlay_table(model, surrogates, truth)?;
    let tr = (dir.join("trajectories.svg"), dir.join("trajectories.csv"));
    std::fs::write(&tr.0, overlay_chart(&rows))?;
    write_csv(
        &tr.1,
        &["dose", "t", "kind", "value"],
        rows.iter().map(|r| vec![r.0.to_string(), r.1.to_string(), r.2.to_string(), r.3.to_string()]),
    )?;

    Ok(ReportBundle {
        composition_map: cm,
        property_charts,
        trajectories: tr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic() {
        let s = [Series {
            label: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)],
        }];
        let a = line_chart("t", "x", "y", &s);
        assert_eq!(a, line_chart("t", "x", "y", &s));
        assert!(a.contains("a&lt;b"));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
    }

    #[test]
    fn degenerate_range_expands() {
        assert_eq!(range([2.0, 2.0].into_iter()), (1.5, 2.5));
        assert_eq!(range(std::iter::empty()), (0.0, 1.0));
    }
}
