//! Writes a sweep report as `report.json`, `tables/<spec>.csv` and
//! `plots/<spec>_<series>.svg`.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{Series, SpecName};
use crate::error::Result;
use crate::harness::{PointMeasurement, RateFit, SweepReport};

pub fn write_report(report: &SweepReport, dir: &Path, plots: bool) -> Result<()> {
    std::fs::create_dir_all(dir.join("tables"))?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    let mut names: Vec<SpecName> = report.points.iter().map(|p| p.spec).collect();
    names.dedup();
    for name in &names {
        write_table(
            report,
            *name,
            &dir.join("tables").join(format!("{}.csv", name.as_str())),
        )?;
    }
    if plots {
        std::fs::create_dir_all(dir.join("plots"))?;
        for name in &names {
            for series in [Series::Eps, Series::Zeta, Series::Phi] {
                let pts: Vec<&PointMeasurement> = report.points_for(*name, series).collect();
                if pts.is_empty() {
                    continue;
                }
                let svg = render_plot(*name, series, &pts, report.fit_for(*name, series));
                let file = format!("{}_{}.svg", name.as_str(), series_label(series));
                std::fs::write(dir.join("plots").join(file), svg)?;
            }
        }
    }
    Ok(())
}

fn series_label(s: Series) -> &'static str {
    match s {
        Series::Eps => "eps",
        Series::Zeta => "zeta",
        Series::Phi => "phi",
    }
}

fn write_table(report: &SweepReport, name: SpecName, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "series",
        "eps",
        "zeta_re",
        "zeta_im",
        "phi",
        "measured",
        "normalized",
        "opnorm",
        "panel",
        "error",
    ])
    .map_err(csv_err)?;
    for p in report.points.iter().filter(|p| p.spec == name) {
        w.write_record([
            series_label(p.series).to_string(),
            format!("{:e}", p.eps),
            format!("{:e}", p.zeta[0]),
            format!("{:e}", p.zeta[1]),
            format!("{:e}", p.phi),
            format!("{:e}", p.measured),
            format!("{:e}", p.normalized),
            format!("{:e}", p.opnorm),
            format!("{:e}", p.panel),
            p.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 60.0;

/// Log-log scatter of measured values with the fitted line.
pub fn render_plot(
    name: SpecName,
    series: Series,
    pts: &[&PointMeasurement],
    fit: Option<&RateFit>,
) -> String {
    let x_of = |p: &PointMeasurement| match series {
        Series::Eps => p.eps,
        Series::Zeta => p.modulus,
        Series::Phi => p.phi,
    };
    let data: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| (x_of(p), p.measured))
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let title = format!("{} vs {}", name.as_str(), series_label(series));
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    if data.is_empty() {
        svg.push_str("</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = bounds(&data);
    if let Some(f) = fit {
        let l = f.intercept / std::f64::consts::LN_10;
        for x in [x0, x1] {
            let y = f.slope * x + l;
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    widen(&mut x0, &mut x1);
    widen(&mut y0, &mut y1);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for (v, lo, hi, horizontal) in [(0, x0, x1, true), (1, y0, y1, false)] {
        let _ = v;
        for t in [lo, hi] {
            let label = format!("1e{t:.1}");
            if horizontal {
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{label}</text>"#,
                    sx(t),
                    H - PAD + 16.0
                );
            } else {
                let _ = writeln!(
                    svg,
                    r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{label}</text>"#,
                    PAD - 6.0,
                    sy(t) + 3.0
                );
            }
        }
    }
    if let Some(f) = fit {
        let l = f.intercept / std::f64::consts::LN_10;
        let (a, b) = (bounds(&data).0, bounds(&data).1);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c33" stroke-dasharray="4 3"/>"##,
            sx(a),
            sy(f.slope * a + l),
            sx(b),
            sy(f.slope * b + l)
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" fill="#c33">slope {:.3}</text>"##,
            PAD + 8.0,
            PAD + 16.0,
            f.slope
        );
    }
    for (x, y) in &data {
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="#236"/>"##,
            sx(*x),
            sy(*y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(data: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    data.iter().fold(
        (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ),
        |(a, b, c, d), (x, y)| (a.min(*x), b.max(*x), c.min(*y), d.max(*y)),
    )
}

fn widen(lo: &mut f64, hi: &mut f64) {
    let pad = ((*hi - *lo) * 0.08).max(0.05);
    *lo -= pad;
    *hi += pad;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{fit_rates, SolveDiagnostics};

    fn point(eps: f64, v: f64) -> PointMeasurement {
        PointMeasurement {
            spec: SpecName::L2Main,
            series: Series::Eps,
            eps,
            k: (1.0 / eps) as usize,
            zeta: [-1.0, 0.0],
            modulus: 1.0,
            phi: std::f64::consts::PI,
            opnorm: v,
            opnorm_spread: 0.0,
            settled: true,
            panel: v,
            measured: v,
            normalized: v / eps,
            reference_scale: 1.0,
            power_iterations: 1,
            solver: SolveDiagnostics::default(),
            error: None,
        }
    }

    #[test]
    fn plot_contains_points_and_fit() {
        let pts = [point(0.125, 0.8), point(0.0625, 0.4), point(0.03125, 0.2)];
        let refs: Vec<&PointMeasurement> = pts.iter().collect();
        let fit = fit_rates(&[(0.125, 0.8), (0.0625, 0.4), (0.03125, 0.2)]).unwrap();
        let svg = render_plot(SpecName::L2Main, Series::Eps, &refs, Some(&fit));
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("slope 1.000"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
