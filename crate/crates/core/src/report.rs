//! Report bundle writer: metric JSON, prediction and feature CSVs, and
//! plot-ready SVG charts, all byte-stable for a fixed seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attack::AttackReport;
use crate::error::Result;
use crate::eval::ConfusionMatrix;

/// Shortestroundtrip decimal form of a float, as produced by `Display`.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const MARGIN: f64 = 48.0;
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;

    let lo = values.iter().copied().fold(0.0f64, f64::min);
    let hi = values.iter().copied().fold(0.0f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y_of = |v: f64| MARGIN + plot_h * (hi - v) / span;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        W / 2.0
    );
    let zero_y = y_of(0.0);
    let _ = write!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{zero_y}\" x2=\"{}\" y2=\"{zero_y}\" stroke=\"black\"/>\n",
        W - MARGIN
    );
    let n = labels.len().max(1);
    let slot = plot_w / n as f64;
    let bar_w = slot * 0.6;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = MARGIN + slot * i as f64 + (slot - bar_w) / 2.0;
        let y_v = y_of(v);
        let y = y_v.min(zero_y);
        let h = (y_v - zero_y).abs();
        let _ = write!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{bar_w}\" height=\"{h}\" fill=\"#4878a8\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
            x + bar_w / 2.0,
            H - MARGIN + 16.0,
            x + bar_w / 2.0,
            y - 4.0,
            fmt_f64(v)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn confusion_svg(m: &ConfusionMatrix) -> String {
    const W: f64 = 360.0;
    const H: f64 = 360.0;
    const CELL: f64 = 110.0;
    const X0: f64 = 90.0;
    const Y0: f64 = 80.0;
    let total = m.total().max(1) as f64;
    let cells = [
        (0, 0, "TP", m.tp),
        (1, 0, "FN", m.fn_),
        (0, 1, "FP", m.fp),
        (1, 1, "TN", m.tn),
    ];
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"28\" text-anchor=\"middle\" font-size=\"15\">Confusion matrix</text>\n\
         <text x=\"{}\" y=\"60\" text-anchor=\"middle\">predicted member</text>\n\
         <text x=\"{}\" y=\"60\" text-anchor=\"middle\">predicted non-member</text>\n\
         <text x=\"40\" y=\"{}\" text-anchor=\"middle\">member</text>\n\
         <text x=\"40\" y=\"{}\" text-anchor=\"middle\">non-member</text>\n",
        W / 2.0,
        X0 + CELL / 2.0,
        X0 + CELL * 1.5,
        Y0 + CELL / 2.0,
        Y0 + CELL * 1.5
    );
    for (col, row, label, count) in cells {
        let x = X0 + CELL * col as f64;
        let y = Y0 + CELL * row as f64;
        let shade = 255 - (160.0 * count as f64 / total) as u32;
        let _ = write!(
            svg,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
             fill=\"rgb({shade},{shade},255)\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{label}</text>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"17\">{count}</text>\n",
            x + CELL / 2.0,
            y + CELL / 2.0 - 12.0,
            x + CELL / 2.0,
            y + CELL / 2.0 + 14.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn predictions_csv(report: &AttackReport) -> String {
    let mut out = String::from("rank,sample_id,confidence,correct\n");
    for (i, item) in report.ranked.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            i + 1,
            item.sample_id,
            fmt_f64(item.confidence),
            item.correct
        );
    }
    out
}

fn features_csv(report: &AttackReport) -> String {
    let dim = report.test_features.first().map_or(2, |row| row.features.len());
    let mut out = String::from("sample_id,loss,count");
    for j in 0..dim.saturating_sub(2) {
        let _ = write!(out, ",tfidf_{j}");
    }
    out.push('\n');
    for row in &report.test_features {
        let _ = write!(out, "{}", row.sample_id);
        for v in &row.features {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

fn rank_histogram_csv(report: &AttackReport) -> String {
    let mut out = String::from("rank,count\n");
    for (rank, count) in &report.rank_hist {
        let _ = writeln!(out, "{rank},{count}");
    }
    out
}

/// Write the full artifact bundle into `out_dir` (created if missing) and
/// return the paths written. Classifier and importance files only appear
/// when the attack ran with a classifier.
pub fn write_report(report: &AttackReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, content: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, content)?;
        written.push(path);
        Ok(())
    };

    emit("attack_report.json", serde_json::to_string_pretty(report)? + "\n")?;
    emit("metrics.json", serde_json::to_string_pretty(&report.metrics)? + "\n")?;
    emit("predictions.csv", predictions_csv(report))?;
    emit("features.csv", features_csv(report))?;
    emit("rank_histogram.csv", rank_histogram_csv(report))?;

    let ranks: Vec<String> = report.rank_hist.keys().map(|r| r.to_string()).collect();
    let counts: Vec<f64> = report.rank_hist.values().map(|&c| c as f64).collect();
    emit(
        "rank_histogram.svg",
        bar_chart_svg("Rank of correct suffix", &ranks, &counts),
    )?;
    emit("confusion_matrix.svg", confusion_svg(&report.metrics.confusion))?;

    if let Some(imp) = &report.importance {
        let labels = vec!["loss".to_string(), "count".to_string(), "text".to_string()];
        let values = vec![imp.loss, imp.count, imp.text];
        let mut csv = String::from("feature,importance\n");
        for (l, v) in labels.iter().zip(&values) {
            let _ = writeln!(csv, "{l},{}", fmt_f64(*v));
        }
        emit("feature_importance.csv", csv)?;
        emit(
            "feature_importance.svg",
            bar_chart_svg("Permutation importance", &labels, &values),
        )?;
    }
    if let Some(clf) = &report.classifier {
        emit("classifier.json", serde_json::to_string_pretty(clf)? + "\n")?;
    }
    Ok(written)
}
