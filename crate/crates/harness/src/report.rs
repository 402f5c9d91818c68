//! Report assembly: renders benchmark tables to markdown (bold best,
//! italic runner-up), sweeps to monotonicity notes, and curves/sweeps to
//! small self-contained SVG charts.

use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::eval::{benchmark_markdown, parse_benchmark_csv};
use crate::sweep::SWEEP_CSV_HEADER;

/// Parses a simple numeric CSV (header + float rows). Errors carry file and
/// line number.
pub fn parse_numeric_csv(text: &str, file: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) if !h.is_empty() => h.split(',').map(str::to_string).collect::<Vec<_>>(),
        _ => bail!("{file}: missing header"),
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            bail!("{file}:{lineno}: expected {} fields, got {}", header.len(), fields.len());
        }
        let row = fields
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Ok(f64::NAN)
                } else {
                    f.parse::<f64>()
                        .with_context(|| format!("{file}:{lineno}: bad number '{f}'"))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Line chart: one polyline per series over shared x values.
pub fn svg_line_chart(
    title: &str,
    x_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    width: u32,
    height: u32,
) -> String {
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let margin = 50.0;
    let (w, h) = (width as f64, height as f64);
    let plot_w = w - 2.0 * margin;
    let plot_h = h - 2.0 * margin;

    let all: Vec<(f64, f64)> =
        series.iter().flat_map(|(_, pts)| pts.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if all.is_empty() {
        return format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\"><text x=\"10\" y=\"20\">{title}: no data</text></svg>"
        );
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| margin + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| h - margin - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    svg.push_str(&format!("<text x=\"{}\" y=\"18\" font-size=\"14\">{}</text>\n", margin, title));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#333\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#333\"/>\n",
        m = margin,
        b = h - margin,
        r = w - margin,
        t = margin
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">{:.3}</text>\n<text x=\"{}\" y=\"{}\">{:.3}</text>\n",
        8.0,
        h - margin,
        y_min,
        8.0,
        margin + 4.0,
        y_max
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\">{:.3}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n",
        margin,
        h - margin + 16.0,
        x_min,
        w - margin,
        h - margin + 16.0,
        x_max
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        h - 8.0,
        x_label
    ));

    for (i, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            w - margin + 4.0,
            margin + 14.0 * i as f64,
            label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Horizontal bar chart (one bar per label).
pub fn svg_bar_chart(title: &str, bars: &[(String, f64)], width: u32) -> String {
    let bar_h = 18.0;
    let margin = 170.0;
    let height = (bars.len() as f64 * (bar_h + 6.0) + 60.0) as u32;
    let w = width as f64;
    let max = bars.iter().map(|(_, v)| v.abs()).fold(1e-12_f64, f64::max);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    svg.push_str(&format!("<text x=\"10\" y=\"18\" font-size=\"14\">{title}</text>\n"));
    for (i, (label, v)) in bars.iter().enumerate() {
        let y = 34.0 + i as f64 * (bar_h + 6.0);
        let len = (v.abs() / max) * (w - margin - 80.0);
        let color = if *v >= 0.0 { "#d62728" } else { "#1f77b4" };
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            margin - 8.0,
            y + bar_h - 5.0,
            label
        ));
        svg.push_str(&format!(
            "<rect x=\"{margin}\" y=\"{y}\" width=\"{len:.2}\" height=\"{bar_h}\" fill=\"{color}\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{:.3}</text>\n",
            margin + len + 6.0,
            y + bar_h - 5.0,
            v
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Builds `report.md` (plus SVGs) from the CSVs in `dir`. Unknown files are
/// ignored; an empty directory produces a stub with a notice.
pub fn generate_report(dir: &Path, out_md: &Path) -> Result<()> {
    let mut md = String::from("# Results report\n\n");
    let mut found_any = false;

    let bench_path = dir.join("benchmark.csv");
    if bench_path.exists() {
        found_any = true;
        let text = std::fs::read_to_string(&bench_path)
            .with_context(|| format!("reading {}", bench_path.display()))?;
        let rows = parse_benchmark_csv(&text, &bench_path.display().to_string())?;
        md.push_str("## Benchmark\n\n");
        md.push_str(&benchmark_markdown(&rows));
        md.push('\n');

        let bars: Vec<(String, f64)> = rows
            .iter()
            .filter(|r| r.method != "No Attack")
            .filter_map(|r| {
                r.reward_drop_pct.map(|d| {
                    let label = match r.steps {
                        Some(s) => format!("{} ({s})", r.method),
                        None => r.method.clone(),
                    };
                    (label, d)
                })
            })
            .collect();
        if !bars.is_empty() {
            let svg = svg_bar_chart("Reward drop (%) by method", &bars, 640);
            let svg_path = out_md.with_file_name("benchmark_drops.svg");
            std::fs::write(&svg_path, svg)?;
            md.push_str(&format!(
                "![reward drops]({})\n\n",
                svg_path.file_name().unwrap().to_string_lossy()
            ));
        }
    }

    let sweep_path = dir.join("sweep.csv");
    if sweep_path.exists() {
        found_any = true;
        let text = std::fs::read_to_string(&sweep_path)?;
        let file = sweep_path.display().to_string();
        let (header, rows) = parse_numeric_csv_skipping_labels(&text, &file)?;
        if header.join(",") != SWEEP_CSV_HEADER {
            bail!("{file}:1: unexpected sweep header");
        }
        md.push_str("## Budget sweep\n\n");
        // series keyed by method label (column 0 stored alongside)
        let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for (label, row) in rows {
            let eps = row[2];
            let drop = row[5];
            if drop.is_nan() {
                continue;
            }
            match series.iter_mut().find(|(l, _)| *l == label) {
                Some((_, pts)) => pts.push((eps, drop)),
                None => series.push((label, vec![(eps, drop)])),
            }
        }
        for (_, pts) in series.iter_mut() {
            pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        }
        let svg = svg_line_chart("Reward drop (%) vs budget", "epsilon", &series, 640, 400);
        let svg_path = out_md.with_file_name("sweep_reward_drop.svg");
        std::fs::write(&svg_path, svg)?;
        md.push_str(&format!(
            "![sweep]({})\n\n",
            svg_path.file_name().unwrap().to_string_lossy()
        ));
    }

    for (file, title, xcol, ycols) in [
        ("victim_curve.csv", "Victim training", 0usize, vec![1usize, 2, 3]),
        ("star_curve.csv", "Adversary training", 0, vec![1, 2, 3]),
        ("defense_curve.csv", "Adversarial training (defense)", 0, vec![1]),
    ] {
        let path = dir.join(file);
        if !path.exists() {
            continue;
        }
        found_any = true;
        let text = std::fs::read_to_string(&path)?;
        let (header, rows) = parse_numeric_csv(&text, &path.display().to_string())?;
        let series: Vec<(String, Vec<(f64, f64)>)> = ycols
            .iter()
            .filter(|&&c| c < header.len())
            .map(|&c| {
                (
                    header[c].clone(),
                    rows.iter().map(|r| (r[xcol], r[c])).collect::<Vec<_>>(),
                )
            })
            .collect();
        let svg = svg_line_chart(title, &header[xcol], &series, 640, 360);
        let svg_name = file.replace(".csv", ".svg");
        std::fs::write(out_md.with_file_name(&svg_name), svg)?;
        md.push_str(&format!("## {title}\n\n![{title}]({svg_name})\n\n"));
    }

    let summary_path = dir.join("theory_summary.csv");
    if summary_path.exists() {
        found_any = true;
        let text = std::fs::read_to_string(&summary_path)?;
        md.push_str("## Tabular bound checks\n\n```\n");
        md.push_str(&text);
        md.push_str("```\n\n");
    }

    if !found_any {
        md.push_str("_No result CSVs found in this directory._\n");
    }
    std::fs::write(out_md, md).with_context(|| format!("writing {}", out_md.display()))?;
    Ok(())
}

/// Like [`parse_numeric_csv`] but keeps the first column as a string label
/// (used for the sweep table whose first columns are method/steps).
fn parse_numeric_csv_skipping_labels(
    text: &str,
    file: &str,
) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) if !h.is_empty() => h.split(',').map(str::to_string).collect::<Vec<_>>(),
        _ => bail!("{file}: missing header"),
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            bail!("{file}:{lineno}: expected {} fields, got {}", header.len(), fields.len());
        }
        let label = if fields[1].is_empty() {
            fields[0].to_string()
        } else {
            format!("{} ({})", fields[0], fields[1])
        };
        let row = fields
            .iter()
            .map(|f| f.parse::<f64>().unwrap_or(f64::NAN))
            .collect::<Vec<f64>>();
        rows.push((label, row));
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_produces_notice() {
        let dir = std::env::temp_dir().join(format!("advrl-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let out = dir.join("report.md");
        generate_report(&dir, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("No result CSVs"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_csv_is_an_error_with_location() {
        let dir = std::env::temp_dir().join(format!("advrl-report-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("benchmark.csv"), "not,a,benchmark\n1,2,3\n").unwrap();
        let err = generate_report(&dir, &dir.join("report.md")).unwrap_err().to_string();
        assert!(err.contains("benchmark.csv:1"), "err: {err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn line_chart_handles_empty_series() {
        let svg = svg_line_chart("t", "x", &[], 100, 100);
        assert!(svg.contains("no data"));
    }
}
