//! `report`: one three-panel log-scale SVG per study directory.
//!
//! The SVG is written by hand with fixed geometry and fixed number
//! formatting, so identical series always give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use robust_sysid::experiments::SeriesRow;
use robust_sysid::io::{read_rows, read_series};

use crate::CliError;

const WIDTH: f64 = 1500.0;
const HEIGHT: f64 = 470.0;
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 60.0;
const GAP: f64 = 80.0;
/// Values below this (including exact zeros) are drawn on the floor.
const FLOOR: f64 = 1e-16;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Line {
    label: String,
    rows: Vec<SeriesRow>,
}

pub fn report(out_dir: &Path) -> Result<(), CliError> {
    let entries = fs::read_dir(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", out_dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("summary.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Runtime(format!(
            "no experiment output (…/summary.csv) under {}",
            out_dir.display()
        )));
    }
    let mut missing = Vec::new();
    for dir in &dirs {
        let (_, header, rows) = read_summary(dir)?;
        let Some(col) = header.iter().position(|h| h == "point") else {
            println!("{}: frequency study, nothing to plot", dir.display());
            continue;
        };
        let mut lines = Vec::new();
        let mut dir_missing = false;
        for row in &rows {
            let label = &row[col];
            let path = dir.join(label).join("series.csv");
            match fs::File::open(&path) {
                Ok(f) => {
                    let (_, series) = read_series(f).map_err(|e| {
                        CliError::Runtime(format!("{}: {e}", path.display()))
                    })?;
                    lines.push(Line {
                        label: label.clone(),
                        rows: series,
                    });
                }
                Err(_) => {
                    missing.push(path);
                    dir_missing = true;
                }
            }
        }
        if dir_missing {
            continue;
        }
        let title = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let svg = render(&title, &lines);
        let path = dir.join("figure.svg");
        fs::write(&path, svg).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| format!("  {}", p.display())).collect();
        return Err(CliError::Runtime(format!("missing series:\n{}", list.join("\n"))));
    }
    Ok(())
}

type Summary = (Option<robust_sysid::io::Metadata>, Vec<String>, Vec<Vec<String>>);

fn read_summary(dir: &Path) -> Result<Summary, CliError> {
    let path = dir.join("summary.csv");
    let f = fs::File::open(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    read_rows(f).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn panel_value(row: &SeriesRow, panel: usize) -> f64 {
    match panel {
        0 => row.mean_loss_gap,
        1 => row.mean_solution_gap,
        _ => row.mean_cert_value,
    }
}

/// Log10 of |v| clamped to the floor; `None` for missing values.
fn log_value(v: f64) -> Option<f64> {
    if v.is_nan() {
        None
    } else {
        Some(v.abs().max(FLOOR).log10())
    }
}

fn render(title: &str, lines: &[Line]) -> String {
    let panels = ["loss gap", "solution gap", "|optimality certificate|"];
    let x_max = lines
        .iter()
        .flat_map(|l| l.rows.iter().map(|r| r.t_prime))
        .max()
        .unwrap_or(1)
        .max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for (k, name) in panels.iter().enumerate() {
        let x0 = LEFT + k as f64 * (PANEL_W + GAP);
        let logs: Vec<f64> = lines
            .iter()
            .flat_map(|l| l.rows.iter().filter_map(|r| log_value(panel_value(r, k))))
            .collect();
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut y_lo, mut y_hi) = if logs.is_empty() {
            (-1.0, 0.0)
        } else {
            (lo.floor(), hi.ceil())
        };
        if y_hi <= y_lo {
            y_lo -= 1.0;
            y_hi += 1.0;
        }
        let px = |t: f64| x0 + t / x_max * PANEL_W;
        let py = |l: f64| TOP + (y_hi - l) / (y_hi - y_lo) * PANEL_H;

        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{TOP:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">{}</text>"#,
            x0 + PANEL_W / 2.0,
            TOP - 12.0,
            escape(name)
        );
        // Decade ticks, thinned to at most ~8 labels.
        let decades = (y_hi - y_lo) as i64;
        let step = (decades / 8).max(1);
        let mut d = y_lo as i64;
        while d <= y_hi as i64 {
            let y = py(d as f64);
            let _ = writeln!(
                s,
                r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
                x0 + PANEL_W
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"#,
                x0 - 6.0,
                y + 4.0
            );
            d += step;
        }
        for i in 0..=5 {
            let t = x_max * i as f64 / 5.0;
            let x = px(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
                TOP + PANEL_H,
                TOP + PANEL_H + 5.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                TOP + PANEL_H + 18.0,
                t.round() as i64
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">T'</text>"#,
            x0 + PANEL_W / 2.0,
            TOP + PANEL_H + 36.0
        );

        for (j, line) in lines.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            // Missing values break the line into separate segments.
            let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
            for r in &line.rows {
                match log_value(panel_value(r, k)) {
                    Some(l) => segments.last_mut().expect("non-empty").push((px(r.t_prime as f64), py(l))),
                    None => segments.push(Vec::new()),
                }
            }
            for seg in segments.iter().filter(|s| !s.is_empty()) {
                let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                    pts.join(" ")
                );
            }
        }
    }

    let legend_y = TOP + PANEL_H + 62.0;
    for (j, line) in lines.iter().enumerate() {
        let x = LEFT + j as f64 * 260.0;
        let color = PALETTE[j % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="{color}" stroke-width="3"/>"#,
            x + 24.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            x + 30.0,
            legend_y + 4.0,
            escape(&line.label)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{LEFT:.1}" y="{:.1}" fill="#555555">Seed means; values below 1e-16 (including exact zeros) are drawn at 1e-16.</text>"##,
        HEIGHT - 12.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: usize, v: f64) -> SeriesRow {
        SeriesRow {
            t_prime: t,
            mean_loss_gap: v,
            mean_solution_gap: v,
            mean_cert_value: -v,
            mean_scale: 1.0,
            completed: 1,
        }
    }

    #[test]
    fn render_is_deterministic_and_has_one_line_per_point() {
        let lines = vec![
            Line {
                label: "a".into(),
                rows: vec![row(10, 1.0), row(20, 1e-3), row(30, 0.0)],
            },
            Line {
                label: "b".into(),
                rows: vec![row(10, 2.0), row(20, f64::NAN), row(30, 1e-9)],
            },
        ];
        let a = render("demo", &lines);
        assert_eq!(a, render("demo", &lines));
        // Three panels; line b is split by the missing value.
        assert_eq!(a.matches("<polyline").count(), 3 * (1 + 2));
        assert!(a.starts_with("<svg"));
    }
}
