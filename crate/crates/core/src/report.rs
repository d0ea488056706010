//! Sweep outputs: results.json, results.csv and plots.svg.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sweep::{SweepResult, Threshold};

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const PLOTS_SVG: &str = "plots.svg";
pub const CSV_HEADER: &str = "d,eps,n,trials,failures,freq,ci_lo,ci_hi,n0_theorem";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

pub fn cells_csv(result: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in &result.cells {
        let n0 = c.n0_theorem.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.d, c.eps, c.n, c.trials, c.failures, c.freq, c.ci_lo, c.ci_hi, n0
        );
    }
    out
}

/// Write all three files into `dir`. Nothing is written unless every file
/// could be rendered, and each file appears atomically.
pub fn emit_report(result: &SweepResult, dir: &Path) -> Result<ReportFiles> {
    if result.is_empty() {
        return Err(Error::InvalidInput("sweep result has no cells to report".into()));
    }
    let json = result.to_json()?;
    let files = write_rendered(dir, &[(RESULTS_JSON, json)], result)?;
    Ok(files)
}

/// Rebuild results.csv and plots.svg from an existing results.json.
pub fn regenerate(results_json: &Path, dir: &Path) -> Result<ReportFiles> {
    let result = SweepResult::from_json(&fs::read_to_string(results_json)?)?;
    if result.is_empty() {
        return Err(Error::InvalidInput("sweep result has no cells to report".into()));
    }
    let mut files = write_rendered(dir, &[], &result)?;
    files.json = results_json.to_path_buf();
    Ok(files)
}

fn write_rendered(dir: &Path, extra: &[(&str, String)], result: &SweepResult) -> Result<ReportFiles> {
    let mut rendered: Vec<(&str, String)> = extra.to_vec();
    rendered.push((RESULTS_CSV, cells_csv(result)));
    rendered.push((PLOTS_SVG, render_svg(result)));
    fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    for (name, body) in &rendered {
        let tmp = dir.join(format!(".{name}.partial"));
        if let Err(e) = fs::write(&tmp, body) {
            for t in &staged {
                let _ = fs::remove_file(t);
            }
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        staged.push(tmp);
    }
    for ((name, _), tmp) in rendered.iter().zip(&staged) {
        fs::rename(tmp, dir.join(name))?;
    }
    Ok(ReportFiles {
        json: dir.join(RESULTS_JSON),
        csv: dir.join(RESULTS_CSV),
        svg: dir.join(PLOTS_SVG),
    })
}

// ---------------------------------------------------------------------------
// plotting

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
    color: &'static str,
}

struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    log_y: bool,
    series: Vec<Series>,
}

/// Log-log n* curves with the theorem formula overlaid when thresholds were
/// searched; failure frequency against n otherwise.
pub fn render_svg(result: &SweepResult) -> String {
    let plot = if result.thresholds.is_empty() {
        frequency_plot(result)
    } else {
        threshold_plot(result)
    };
    draw(&plot)
}

fn threshold_plot(result: &SweepResult) -> Plot {
    let mut ds: Vec<usize> = result.thresholds.iter().map(|t| t.d).collect();
    ds.sort_unstable();
    ds.dedup();
    let by_dimension = ds.len() > 1;
    let mut series = Vec::new();
    let groups: Vec<f64> = if by_dimension {
        result.config.eps.clone()
    } else {
        ds.iter().map(|d| *d as f64).collect()
    };
    for (gi, g) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let rows: Vec<_> = result
            .thresholds
            .iter()
            .filter(|t| if by_dimension { t.eps == *g } else { t.d as f64 == *g })
            .collect();
        let x = |t: &crate::sweep::ThresholdRecord| if by_dimension { t.d as f64 } else { 1.0 / t.eps };
        let tag = if by_dimension { format!("eps={g}") } else { format!("d={g}") };
        let measured: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|t| match t.n_star {
                Threshold::Resolved { n } => Some((x(t), n as f64)),
                Threshold::Unresolved { .. } => None,
            })
            .collect();
        series.push(Series {
            label: format!("n* ({tag})"),
            points: measured,
            dashed: false,
            color,
        });
        let theorem: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|t| t.n0_theorem.map(|n0| (x(t), n0 as f64)))
            .collect();
        if !theorem.is_empty() {
            series.push(Series {
                label: format!("n0 formula ({tag})"),
                points: theorem,
                dashed: true,
                color,
            });
        }
        let uc: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|t| t.n_uc.and_then(|u| u.resolved()).map(|n| (x(t), n as f64)))
            .collect();
        if !uc.is_empty() {
            series.push(Series {
                label: format!("uniform convergence ({tag})"),
                points: uc,
                dashed: true,
                color: "#7f7f7f",
            });
        }
    }
    Plot {
        title: format!("sample thresholds, {}", family_label(result)),
        x_label: if by_dimension { "d".into() } else { "1/eps".into() },
        y_label: "n".into(),
        log_y: true,
        series,
    }
}

fn frequency_plot(result: &SweepResult) -> Plot {
    let mut keys: Vec<(usize, usize)> = result.cells.iter().map(|c| (c.d, c.eps_index)).collect();
    keys.sort_unstable();
    keys.dedup();
    let series = keys
        .iter()
        .enumerate()
        .map(|(i, &(d, ei))| {
            let cells: Vec<_> = result.cells.iter().filter(|c| c.d == d && c.eps_index == ei).collect();
            Series {
                label: format!("d={d}, eps={}", cells[0].eps),
                points: cells.iter().map(|c| (c.n as f64, c.freq)).collect(),
                dashed: false,
                color: PALETTE[i % PALETTE.len()],
            }
        })
        .collect();
    Plot {
        title: format!("failure frequency, {}", family_label(result)),
        x_label: "n".into(),
        y_label: "failure frequency".into(),
        log_y: false,
        series,
    }
}

fn family_label(result: &SweepResult) -> String {
    serde_json::to_value(&result.config.family)
        .ok()
        .and_then(|v| v.get("name").and_then(|n| n.as_str()).map(str::to_owned))
        .unwrap_or_else(|| "sweep".into())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw(plot: &Plot) -> String {
    let pts: Vec<(f64, f64)> = plot
        .series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| *x > 0.0 && (!plot.log_y || *y > 0.0))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(&plot.title)
    );
    if pts.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#, W / 2.0, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }
    let fx = |x: f64| x.ln();
    let fy = |y: f64| if plot.log_y { y.ln() } else { y };
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(fx(p.0)), b.max(fx(p.0))));
    let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(fy(p.1)), b.max(fy(p.1))));
    if !plot.log_y {
        y0 = y0.min(0.0);
        y1 = y1.max(1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| MARGIN + (fx(x) - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (fy(y) - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    for (lo, hi, is_x) in [(x0, x1, true), (y0, y1, false)] {
        for k in 0..=4 {
            let t = lo + (hi - lo) * k as f64 / 4.0;
            let v = if is_x || plot.log_y { t.exp() } else { t };
            let label = if v >= 100.0 { format!("{v:.0}") } else { format!("{v:.3}") };
            if is_x {
                let px = MARGIN + (t - lo) / (hi - lo) * (W - 2.0 * MARGIN);
                let _ = writeln!(svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{label}</text>"#, H - MARGIN + 16.0);
            } else {
                let py = H - MARGIN - (t - lo) / (hi - lo) * (H - 2.0 * MARGIN);
                let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{label}</text>"#, MARGIN - 6.0, py + 4.0);
            }
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{} (log)</text>"#,
        W / 2.0,
        H - 18.0,
        escape(&plot.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&plot.y_label),
        if plot.log_y { " (log)" } else { "" }
    );
    for (i, s) in plot.series.iter().enumerate() {
        let mut p: Vec<(f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|(x, y)| *x > 0.0 && (!plot.log_y || *y > 0.0))
            .collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        if p.is_empty() {
            continue;
        }
        let path: Vec<String> = p.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
        let dash = if s.dashed { r#" stroke-dasharray="5,4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            path.join(" "),
            s.color
        );
        if !s.dashed {
            for (x, y) in &p {
                let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#, sx(*x), sy(*y), s.color);
            }
        }
        let ly = MARGIN + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}"{dash}/><text x="{}" y="{}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 28.0,
            s.color,
            MARGIN + 32.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::{run_sweep, FamilySpec, NSpec, SweepConfig};

    fn small_result() -> SweepResult {
        let mut cfg = SweepConfig::new(FamilySpec::Coin { eps0: 0.1 }, vec![1], vec![0.3], NSpec::Grid(vec![16]), 50);
        cfg.multiplier = 1.5;
        run_sweep(&cfg).unwrap()
    }

    #[test]
    fn single_cell_csv() {
        let r = small_result();
        let csv = cells_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("1,0.3,16,50,"));
        assert!(lines[1].ends_with(",494"));
    }

    #[test]
    fn emit_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = small_result();
        let files = emit_report(&r, dir.path()).unwrap();
        let back = SweepResult::from_json(&fs::read_to_string(&files.json).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), r.to_json().unwrap());
        let svg = fs::read_to_string(&files.svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let other = tempfile::tempdir().unwrap();
        let regen = regenerate(&files.json, other.path()).unwrap();
        assert_eq!(fs::read(&regen.csv).unwrap(), fs::read(&files.csv).unwrap());
        assert!(!other.path().join(RESULTS_JSON).exists());
    }

    #[test]
    fn empty_result_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = small_result();
        r.cells.clear();
        assert!(emit_report(&r, dir.path()).is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn unwritable_path_fails() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(emit_report(&small_result(), &blocker.join("sub")).is_err());
    }
}
