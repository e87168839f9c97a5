//! Plain-text SVG line plots of rule curves and error histories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::solvers::RunRecord;
use crate::stoprules::{Rule, StopDecision};

use super::HarnessError;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 300.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 40.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    /// Entry `i` is plotted at `k = i + 1`.
    pub values: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, values: Vec<f64>, color: &'static str) -> Self {
        Series {
            label: label.into(),
            values,
            color,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

/// A point to circle, `(label, k, value, color)`.
#[derive(Debug, Clone)]
pub struct Marker {
    pub label: String,
    pub k: usize,
    pub value: f64,
    pub color: &'static str,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
}

impl LinePlot {
    pub fn new(title: impl Into<String>, y_label: impl Into<String>, log_y: bool) -> Self {
        LinePlot {
            title: title.into(),
            y_label: y_label.into(),
            log_y,
            series: Vec::new(),
            markers: Vec::new(),
        }
    }

    fn ty(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log_y && v <= 0.0) {
            return None;
        }
        Some(if self.log_y { v.log10() } else { v })
    }

    fn y_range(&self) -> (f64, f64) {
        let vals = self.series.iter().flat_map(|s| s.values.iter()).filter_map(|&v| self.ty(v));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            return (lo - 0.5, hi + 0.5);
        }
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }

    fn render(&self, out: &mut String, top: f64) {
        let kmax = self.series.iter().map(|s| s.values.len()).max().unwrap_or(1).max(2) as f64;
        let (y0, y1) = self.y_range();
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = PANEL_HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |k: f64| MARGIN_L + (k - 1.0) / (kmax - 1.0) * pw;
        let sy = |v: f64| top + MARGIN_T + (1.0 - (v - y0) / (y1 - y0)) * ph;

        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN_L}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#444"/>"##,
            top + MARGIN_T
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            top + 22.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
            top + MARGIN_T + ph / 2.0,
            top + MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">iteration k</text>"#,
            MARGIN_L + pw / 2.0,
            top + PANEL_HEIGHT - 6.0
        );
        for i in 0..=4 {
            let v = y0 + (y1 - y0) * i as f64 / 4.0;
            let label = if self.log_y { format!("{:.2e}", 10f64.powf(v)) } else { format!("{v:.3e}") };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{label}</text>"#,
                MARGIN_L - 4.0,
                sy(v) + 3.0
            );
        }
        for i in 0..=4 {
            let k = 1.0 + (kmax - 1.0) * i as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{:.0}</text>"#,
                sx(k),
                top + MARGIN_T + ph + 14.0,
                k
            );
        }

        for (si, s) in self.series.iter().enumerate() {
            let mut d = String::new();
            let mut pen_down = false;
            for (i, &v) in s.values.iter().enumerate() {
                match self.ty(v) {
                    Some(y) => {
                        let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(i as f64 + 1.0), sy(y));
                        pen_down = true;
                    }
                    None => pen_down = false,
                }
            }
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                d.trim_end(),
                s.color
            );
            let ly = top + MARGIN_T + 14.0 + 16.0 * si as f64;
            let lx = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"{dash}/><text x="{:.1}" y="{ly:.1}" font-size="11">{}</text>"#,
                ly - 4.0,
                lx + 18.0,
                ly - 4.0,
                s.color,
                lx + 22.0,
                escape(&s.label)
            );
        }
        for (mi, m) in self.markers.iter().enumerate() {
            let Some(y) = self.ty(m.value) else { continue };
            if m.k == 0 {
                continue;
            }
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
                sx(m.k as f64),
                sy(y),
                m.color,
                escape(&m.label)
            );
            let ly = top + MARGIN_T + 14.0 + 16.0 * (self.series.len() + mi) as f64;
            let lx = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{}"/><text x="{:.1}" y="{ly:.1}" font-size="11">{}</text>"#,
                lx + 9.0,
                ly - 4.0,
                m.color,
                lx + 22.0,
                escape(&m.label)
            );
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Stacks panels vertically into one SVG document.
pub fn render_svg(panels: &[LinePlot]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">
<rect width="100%" height="100%" fill="white"/>"#
    );
    for (i, p) in panels.iter().enumerate() {
        p.render(&mut out, i as f64 * PANEL_HEIGHT);
    }
    out.push_str("</svg>\n");
    out
}

fn error_panel(record: &RunRecord, decision: Option<&StopDecision>) -> LinePlot {
    let mut p = LinePlot::new("reconstruction error", "‖x(k) − x̄‖₂", true);
    match &record.error_norms {
        Some(e) => {
            p.series.push(Series::new("error", e.clone(), "#1f4e9c"));
            if let Some((k, v)) = record.min_error() {
                p.markers.push(Marker {
                    label: format!("min error, k={k}"),
                    k,
                    value: v,
                    color: "#1f4e9c",
                });
            }
            if let Some(k) = decision.and_then(|d| d.k_stop) {
                p.markers.push(Marker {
                    label: format!("{} stop, k={k}", decision.map(|d| d.rule.to_string()).unwrap_or_default()),
                    k,
                    value: e[k - 1],
                    color: "#c0392b",
                });
            }
        }
        None => {
            p.title = "residual norm".into();
            p.y_label = "‖ρ(k)‖₂".into();
            p.series.push(Series::new("residual", record.residual_norms.clone(), "#333"));
        }
    }
    p
}

fn rule_panel(record: &RunRecord, d: &StopDecision) -> Option<LinePlot> {
    let rs = &record.rule_series;
    let res = || Series::new("‖ρ(k)‖₂", record.residual_norms.clone(), "#333");
    let mut p = match d.rule {
        Rule::Dp => {
            let mut p = LinePlot::new("discrepancy principle", "norm", true);
            p.series.push(res());
            p.series.push(Series::new("τη√m", rs.dp_threshold.clone()?, "#c0392b").dashed());
            p
        }
        Rule::Ftnl => {
            let mut p = LinePlot::new("fit to noise level", "norm", true);
            p.series.push(res());
            p.series.push(Series::new("τη√(m − t_k)", rs.ftnl_threshold.clone()?, "#c0392b").dashed());
            p
        }
        Rule::Upre => {
            let u = rs.upre.clone()?;
            let positive = u.iter().all(|&v| v > 0.0);
            let mut p = LinePlot::new("UPRE risk", "U(k)", positive);
            p.series.push(Series::new("U(k)", u, "#7d3c98"));
            p
        }
        Rule::Gcv => {
            let mut p = LinePlot::new("GCV risk", "G(k)", true);
            p.series.push(Series::new("G(k)", rs.gcv.clone()?, "#117a65"));
            p
        }
        Rule::Ncp => {
            let mut p = LinePlot::new("NCP number", "N(k)", false);
            p.series.push(Series::new("N(k)", rs.ncp.clone()?, "#b9770e"));
            p
        }
    };
    if let Some(k) = d.k_stop {
        let value = match d.rule {
            Rule::Dp | Rule::Ftnl => record.residual_norms[k - 1],
            _ => d.value_at_stop,
        };
        p.markers.push(Marker {
            label: format!("stop, k={k}"),
            k,
            value,
            color: "#c0392b",
        });
    }
    Some(p)
}

/// Writes `error.svg` plus one `<rule>.svg` per decision in the record.
pub fn emit_plots(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let p = dir.join("error.svg");
    fs::write(&p, render_svg(&[error_panel(record, None)]))?;
    paths.push(p);
    for d in &record.decisions {
        if let Some(panel) = rule_panel(record, d) {
            let p = dir.join(format!("{}.svg", d.rule.to_string().to_lowercase()));
            fs::write(&p, render_svg(&[panel, error_panel(record, Some(d))]))?;
            paths.push(p);
        }
    }
    Ok(paths)
}
