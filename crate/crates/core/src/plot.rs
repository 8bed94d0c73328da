//! SVG route figures: path loss along the route and the predicted exponent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::RoutePrediction;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("prediction table is empty")]
    EmptyTable,
    #[error("CI curve has {0} values for {1} rows")]
    CiLength(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PlotError> = std::result::Result<T, E>;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const PL_TOP: f64 = 40.0;
const PL_BOTTOM: f64 = 360.0;
const PLE_TOP: f64 = 420.0;
const PLE_BOTTOM: f64 = 550.0;

struct Axis {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, a: f64, b: f64) -> Axis {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            (lo, hi) = (lo - 1.0, hi + 1.0);
        }
        let pad = 0.05 * (hi - lo);
        Axis { lo: lo - pad, hi: hi + pad, a, b }
    }

    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn series(svg: &mut String, class: &str, color: &str, pts: &[(f64, f64)], marker: &str) {
    let _ = write!(svg, r#"<g class="{class}" stroke="{color}" fill="{color}">"#);
    if pts.len() > 1 {
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = write!(svg, r#"<polyline fill="none" stroke-width="1.5" points="{}"/>"#, path.join(" "));
    }
    for (x, y) in pts {
        match marker {
            "square" => {
                let _ = write!(svg, r#"<rect class="marker" x="{:.2}" y="{:.2}" width="4" height="4"/>"#, x - 2.0, y - 2.0);
            }
            _ => {
                let _ = write!(svg, r#"<circle class="marker" cx="{x:.2}" cy="{y:.2}" r="2"/>"#);
            }
        }
    }
    svg.push_str("</g>\n");
}

fn frame(svg: &mut String, top: f64, bottom: f64, y: &Axis, label: &str) {
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - LEFT - RIGHT,
        bottom - top
    );
    for k in 0..=4 {
        let v = y.lo + (y.hi - y.lo) * k as f64 / 4.0;
        let py = y.map(v);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"#, LEFT - 4.0, py + 3.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-size="12" transform="rotate(-90 16 {:.1})" text-anchor="middle">{label}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    );
}

/// One route's figure. `ci` holds the CI prediction for each row.
pub fn route_svg(route_id: u32, rows: &[RoutePrediction], ci: &[f64]) -> Result<String> {
    if rows.is_empty() {
        return Err(PlotError::EmptyTable);
    }
    if ci.len() != rows.len() {
        return Err(PlotError::CiLength(ci.len(), rows.len()));
    }
    let x = Axis::new(rows.iter().map(|r| r.chainage_m), LEFT, WIDTH - RIGHT);
    let pl_values = rows.iter().flat_map(|r| [r.pl_meas, r.pl_hat]).chain(ci.iter().copied());
    let y = Axis::new(pl_values, PL_BOTTOM, PL_TOP);
    let ple: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.ple_hat.map(|n| (r.chainage_m, n))).collect();
    let yn = Axis::new(ple.iter().map(|p| p.1), PLE_BOTTOM, PLE_TOP);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<title>Route {route_id}</title>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="14" text-anchor="middle">Route {route_id}</text>"#, WIDTH / 2.0);

    svg.push_str("<g id=\"pl-panel\">\n");
    frame(&mut svg, PL_TOP, PL_BOTTOM, &y, "path loss (dB)");
    let pts = |vals: &mut dyn Iterator<Item = (f64, f64)>| vals.map(|(c, v)| (x.map(c), y.map(v))).collect::<Vec<_>>();
    series(&mut svg, "measured", "#888888", &pts(&mut rows.iter().map(|r| (r.chainage_m, r.pl_meas))), "circle");
    series(&mut svg, "ci", "#1f77b4", &pts(&mut rows.iter().zip(ci).map(|(r, c)| (r.chainage_m, *c))), "square");
    series(&mut svg, "predicted", "#d62728", &pts(&mut rows.iter().map(|r| (r.chainage_m, r.pl_hat))), "circle");
    for (i, (name, color)) in [("measured", "#888888"), ("CI", "#1f77b4"), ("predicted", "#d62728")].iter().enumerate() {
        let ly = PL_TOP + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" fill="{color}" text-anchor="end">{name}</text>"#,
            WIDTH - RIGHT - 6.0
        );
    }
    svg.push_str("</g>\n<g id=\"ple-panel\">\n");
    frame(&mut svg, PLE_TOP, PLE_BOTTOM, &yn, "exponent");
    let ple_pts: Vec<(f64, f64)> = ple.iter().map(|(c, n)| (x.map(*c), yn.map(*n))).collect();
    series(&mut svg, "ple", "#2ca02c", &ple_pts, "circle");
    if ple.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">no exponent output for this variant</text>"#,
            WIDTH / 2.0,
            (PLE_TOP + PLE_BOTTOM) / 2.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">chainage (m)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0
    );
    svg.push_str("</g>\n</svg>\n");
    Ok(svg)
}

/// Writes `route_<id>.svg` for every route in `rows` into `dir`.
pub fn plot_routes(rows: &[RoutePrediction], ci: &[f64], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(PlotError::EmptyTable);
    }
    if ci.len() != rows.len() {
        return Err(PlotError::CiLength(ci.len(), rows.len()));
    }
    let mut routes: BTreeMap<u32, (Vec<RoutePrediction>, Vec<f64>)> = BTreeMap::new();
    for (r, c) in rows.iter().zip(ci) {
        let e = routes.entry(r.route_id).or_default();
        e.0.push(r.clone());
        e.1.push(*c);
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (id, (rs, cs)) in routes {
        let path = dir.join(format!("route_{id}.svg"));
        std::fs::write(&path, route_svg(id, &rs, &cs)?)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: u32, c: f64) -> RoutePrediction {
        RoutePrediction { route_id: id, chainage_m: c, pl_meas: 100.0 + c, pl_hat: 101.0 + c, ple_hat: Some(3.0), comp_hat: Some(0.5) }
    }

    #[test]
    fn empty_table() {
        assert!(matches!(route_svg(0, &[], &[]), Err(PlotError::EmptyTable)));
        assert!(matches!(plot_routes(&[], &[], Path::new("/nonexistent")), Err(PlotError::EmptyTable)));
    }

    #[test]
    fn ci_length_checked() {
        assert!(matches!(route_svg(0, &[row(0, 0.0)], &[]), Err(PlotError::CiLength(0, 1))));
    }

    #[test]
    fn single_point_has_no_lines() {
        let svg = route_svg(3, &[row(3, 0.0)], &[99.0]).unwrap();
        assert!(!svg.contains("<polyline"));
        assert_eq!(svg.matches("class=\"marker\"").count(), 4);
    }
}
