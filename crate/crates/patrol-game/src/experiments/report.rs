//! Report files: row and percentile CSVs, percentile charts as standalone
//! SVG, and per-trace sample summaries.

use std::path::{Path, PathBuf};

use crate::experiments::{BatchReport, Example1Report, PercentileRow, ScenarioRow};
use crate::robust_game::SolveTrace;
use crate::{Error, Result};

/// Writes `rows.csv`, `timings.csv`, `percentiles.csv`, and one percentile
/// chart per metric under `out_dir`. Returns the created paths.
/// `rows.csv` is byte-stable across reruns of the same seeded batch;
/// timings are kept in their own file because wall clocks are not.
pub fn emit_report(report: &BatchReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let rows_path = out_dir.join("rows.csv");
    write_csv(&rows_path, &report.rows)?;
    written.push(rows_path);

    let timings_path = out_dir.join("timings.csv");
    write_csv(&timings_path, &report.timings)?;
    written.push(timings_path);

    let pct_path = out_dir.join("percentiles.csv");
    write_csv(&pct_path, &report.percentiles)?;
    written.push(pct_path);

    for (metric, pick) in [
        ("v", Box::new(|r: &PercentileRow| r.v) as Box<dyn Fn(&PercentileRow) -> f64>),
        ("w", Box::new(|r: &PercentileRow| r.w)),
    ] {
        let path = out_dir.join(format!("percentiles_{metric}.svg"));
        let points: Vec<(f64, f64)> = report
            .percentiles
            .iter()
            .map(|r| (r.percentile, pick(r) * 100.0))
            .collect();
        let svg = percentile_svg(&format!("Percentiles of {metric} (%)"), &points);
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

fn write_csv<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

/// Reads back a `rows.csv` produced by [`emit_report`].
pub fn load_rows_csv(path: &Path) -> Result<Vec<ScenarioRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(csv_err)?);
    }
    Ok(rows)
}

/// A minimal standalone line chart: percentile on the x axis, metric value
/// on the y axis, with gridlines and tick labels.
pub fn percentile_svg(title: &str, points: &[(f64, f64)]) -> String {
    let (width, height) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let plot_w = width - ml - mr;
    let plot_h = height - mt - mb;

    let (mut y_min, mut y_max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| {
            (lo.min(y), hi.max(y))
        });
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    let (x_min, x_max) = (0.0, 100.0);

    let sx = |x: f64| ml + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| mt + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        ml + plot_w / 2.0
    ));

    // Gridlines and ticks.
    for i in 0..=10 {
        let x = x_min + (x_max - x_min) * i as f64 / 10.0;
        s.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"#ddd\"/>\n",
            sx(x),
            mt,
            mt + plot_h
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{x:.0}</text>\n",
            sx(x),
            mt + plot_h + 18.0
        ));
    }
    for i in 0..=8 {
        let y = y_min + (y_max - y_min) * i as f64 / 8.0;
        s.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{2:.1}\" y2=\"{1:.1}\" stroke=\"#ddd\"/>\n",
            ml,
            sy(y),
            ml + plot_w
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{y:.2}</text>\n",
            ml - 6.0,
            sy(y) + 4.0
        ));
    }
    s.push_str(&format!(
        "<rect x=\"{ml:.1}\" y=\"{mt:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"black\"/>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">percentile</text>\n",
        ml + plot_w / 2.0,
        height - 12.0
    ));

    if !points.is_empty() {
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in points {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f77b4\"/>\n",
                sx(x),
                sy(y)
            ));
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(serde::Serialize)]
struct TraceRow {
    index: usize,
    source: String,
    objective: f64,
    best_so_far: f64,
    blue_utility_adversarial: f64,
    blue_utility_optimal: f64,
    red_utility_optimal: f64,
    red_utility_adversarial: f64,
    cv_r2: Option<f64>,
}

/// Writes a per-sample CSV and a best-so-far progress chart for one solve
/// trace. Returns the created paths.
pub fn emit_trace_report(trace: &SolveTrace, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut progress = Vec::new();
    for s in &trace.samples {
        best = best.max(s.objective);
        progress.push((s.index as f64, best));
        rows.push(TraceRow {
            index: s.index,
            source: match s.source {
                crate::robust_game::SampleSource::Lhs => "lhs".into(),
                crate::robust_game::SampleSource::Unilateral => "unilateral".into(),
                crate::robust_game::SampleSource::Surface => "surface".into(),
            },
            objective: s.objective,
            best_so_far: best,
            blue_utility_adversarial: s.responses.blue_utility_adversarial,
            blue_utility_optimal: s.responses.blue_utility_optimal,
            red_utility_optimal: s.responses.red_utility_optimal,
            red_utility_adversarial: s.responses.red_utility_adversarial,
            cv_r2: s.cv_r2,
        });
    }
    let mut written = Vec::new();
    let samples_path = out_dir.join("samples.csv");
    write_csv(&samples_path, &rows)?;
    written.push(samples_path);

    let chart_path = out_dir.join("progress.svg");
    let svg = progress_svg("Best objective so far", &progress);
    std::fs::write(&chart_path, svg)?;
    written.push(chart_path);
    Ok(written)
}

fn progress_svg(title: &str, points: &[(f64, f64)]) -> String {
    // Same frame as the percentile chart with a sample-count x axis.
    let rescaled: Vec<(f64, f64)> = match points.last() {
        Some(&(last_x, _)) if last_x > 0.0 => points
            .iter()
            .map(|&(x, y)| (100.0 * x / last_x, y))
            .collect(),
        _ => points.to_vec(),
    };
    percentile_svg(title, &rescaled).replace(">percentile<", ">sample (% of run)<")
}

/// Example comparison table as CSV: one row per quantity, computed value
/// next to its reference.
pub fn emit_example1_csv(report: &Example1Report, path: &Path) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Row<'a> {
        quantity: &'a str,
        computed: f64,
        reference: f64,
    }
    let rf = &report.reference;
    let rows = vec![
        Row {
            quantity: "robust_utility_robust_solution",
            computed: report.fixed_robust.blue_utility_adversarial,
            reference: rf.robust_utility_robust_solution,
        },
        Row {
            quantity: "robust_utility_nonrobust_solution",
            computed: report.fixed_nonrobust.blue_utility_adversarial,
            reference: rf.robust_utility_nonrobust_solution,
        },
        Row {
            quantity: "nonrobust_utility_robust_solution",
            computed: report.fixed_robust.blue_utility_optimal,
            reference: rf.nonrobust_utility_robust_solution,
        },
        Row {
            quantity: "nonrobust_utility_nonrobust_solution",
            computed: report.fixed_nonrobust.blue_utility_optimal,
            reference: rf.nonrobust_utility_nonrobust_solution,
        },
        Row {
            quantity: "v",
            computed: report.v,
            reference: rf.v,
        },
    ];
    write_csv(path, &rows)
}
