use std::fmt::Write;

use phasewalk_core::sim::SimLog;

use crate::sweep::{AblationRun, SweepCell};

const WIDTH: f64 = 800.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 130.0;
const MARGIN_TOP: f64 = 40.0;
const PANEL_GAP: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn new(title: impl Into<String>, series: Vec<Series>) -> Self {
        Self {
            title: title.into(),
            series,
        }
    }

    fn is_empty(&self) -> bool {
        self.series.iter().all(|s| s.points.is_empty())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Range with a little padding; flat data gets a unit-free margin.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad, hi + pad)
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// Stacked line panels sharing the x axis. Panels without data are left out.
pub fn line_chart(title: &str, x_label: &str, panels: &[Panel]) -> String {
    let panels: Vec<&Panel> = panels.iter().filter(|p| !p.is_empty()).collect();
    let height = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + PANEL_GAP) + 20.0;
    let mut out = String::new();
    header(&mut out, height, title);
    let all_x = panels
        .iter()
        .flat_map(|p| p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0)));
    let (x0, x1) = range(all_x);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    for (i, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + i as f64 * (PANEL_HEIGHT + PANEL_GAP);
        let (y0, y1) = range(panel.series.iter().flat_map(|s| s.points.iter().map(|q| q.1)));
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{MARGIN_LEFT}" y="{:.2}">{}</text>"#,
            top - 6.0,
            escape(&panel.title)
        );
        for k in 0..=4 {
            let y = y0 + (y1 - y0) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text><line x1="{MARGIN_LEFT}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="#ddd"/>"##,
                MARGIN_LEFT - 4.0,
                sy(y) + 4.0,
                label(y),
                MARGIN_LEFT + plot_w,
                sy(y),
                sy(y)
            );
            let x = x0 + (x1 - x0) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(x),
                top + PANEL_HEIGHT + 14.0,
                label(x)
            );
        }
        for (j, s) in panel.series.iter().enumerate() {
            if s.points.is_empty() {
                continue;
            }
            let color = PALETTE[j % PALETTE.len()];
            let mut d = String::new();
            for (k, &(x, y)) in s.points.iter().enumerate() {
                let _ = write!(d, "{}{:.2} {:.2}", if k == 0 { "M" } else { " L" }, sx(x), sy(y));
            }
            let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
            let ly = top + 14.0 + 16.0 * j as f64;
            let lx = MARGIN_LEFT + plot_w + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" x2="{:.2}" y1="{ly:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                lx + 18.0,
                lx + 22.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        height - 6.0,
        escape(x_label)
    );
    out.push_str("</svg>\n");
    out
}

/// Closed polygons of radius against direction in degrees. Zero degrees
/// points right and angles grow counterclockwise.
pub fn polar_chart(title: &str, unit: &str, series: &[Series]) -> String {
    let height = 620.0;
    let (cx, cy, radius) = (WIDTH / 2.0 - 60.0, 330.0, 250.0);
    let mut out = String::new();
    header(&mut out, height, title);
    let r_max = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    for k in 1..=4 {
        let r = radius * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<circle cx="{cx}" cy="{cy}" r="{r:.2}" fill="none" stroke="#ddd"/><text x="{:.2}" y="{:.2}">{} {}</text>"##,
            cx + 3.0,
            cy - r - 2.0,
            label(r_max * k as f64 / 4.0),
            escape(unit)
        );
    }
    for k in 0..12 {
        let a = (30.0 * k as f64).to_radians();
        let (x, y) = (cx + radius * a.cos(), cy - radius * a.sin());
        let (tx, ty) = (cx + (radius + 16.0) * a.cos(), cy - (radius + 16.0) * a.sin() + 4.0);
        let _ = writeln!(
            out,
            r##"<line x1="{cx}" y1="{cy}" x2="{x:.2}" y2="{y:.2}" stroke="#eee"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="middle">{}°</text>"##,
            30 * k
        );
    }
    for (j, s) in series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let color = PALETTE[j % PALETTE.len()];
        let mut d = String::new();
        for (k, &(deg, r)) in s.points.iter().enumerate() {
            let a = deg.to_radians();
            let rr = radius * r / r_max;
            let _ = write!(
                d,
                "{}{:.2} {:.2}",
                if k == 0 { "M" } else { " L" },
                cx + rr * a.cos(),
                cy - rr * a.sin()
            );
        }
        d.push_str(" Z");
        let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#);
        let ly = 60.0 + 18.0 * j as f64;
        let lx = WIDTH - 140.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" x2="{:.2}" y1="{ly:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// DCM, ZMP and phase-duration traces of a single run.
pub fn walk_svg(name: &str, log: &SimLog) -> String {
    let pts = |f: &dyn Fn(&phasewalk_core::sim::LogRow) -> f64| -> Vec<(f64, f64)> {
        log.rows.iter().map(|r| (r.time, f(r))).collect()
    };
    let panels = [
        Panel::new(
            "DCM x [m]",
            vec![Series::new("dcm", pts(&|r| r.dcm.x)), Series::new("reference", pts(&|r| r.dcm_ref.x))],
        ),
        Panel::new(
            "DCM y [m]",
            vec![Series::new("dcm", pts(&|r| r.dcm.y)), Series::new("reference", pts(&|r| r.dcm_ref.y))],
        ),
        Panel::new(
            "ZMP x [m]",
            vec![
                Series::new("desired", pts(&|r| r.zmp_des.x)),
                Series::new("reference", pts(&|r| r.zmp_ref.x)),
            ],
        ),
        Panel::new(
            "ZMP y [m]",
            vec![
                Series::new("desired", pts(&|r| r.zmp_des.y)),
                Series::new("reference", pts(&|r| r.zmp_ref.y)),
            ],
        ),
        Panel::new("Phase duration [s]", vec![Series::new("T_new", pts(&|r| r.t_new))]),
    ];
    line_chart(name, "time [s]", &panels)
}

/// Maximum recoverable impulse against push direction, one polygon per method.
pub fn direction_svg(cells: &[SweepCell]) -> String {
    polar_chart("Maximum recoverable impulse by direction", "N·s", &by_method(cells, |c| c.direction_deg))
}

/// Maximum recoverable impulse against push timing, one line per method.
pub fn timing_svg(cells: &[SweepCell]) -> String {
    let series = by_method(cells, |c| c.timing.unwrap_or(0.0));
    line_chart(
        "Maximum recoverable impulse by push timing",
        "push time within the step cycle [s]",
        &[Panel::new("impulse [N·s]", series)],
    )
}

fn by_method(cells: &[SweepCell], x: impl Fn(&SweepCell) -> f64) -> Vec<Series> {
    let mut out: Vec<Series> = Vec::new();
    for c in cells {
        let p = (x(c), c.max_impulse());
        match out.iter_mut().find(|s| s.name == c.method.name()) {
            Some(s) => s.points.push(p),
            None => out.push(Series::new(c.method.name(), vec![p])),
        }
    }
    out
}

/// DCM error norm of every method in the ablation.
pub fn ablation_svg(runs: &[AblationRun]) -> String {
    let series = runs
        .iter()
        .map(|r| {
            let label = format!("{} ({})", r.method.name(), r.verdict());
            Series::new(label, r.log.rows.iter().map(|row| (row.time, row.dcm_err.norm())).collect())
        })
        .collect();
    line_chart("Ablation: DCM error", "time [s]", &[Panel::new("|DCM error| [m]", series)])
}
