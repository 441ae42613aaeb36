//! Result-file emission: atomic writes, CSV schemas, and minimal SVG line
//! charts.
//!
//! Every CSV starts with its header line. Floats are written with Rust's
//! shortest round-trip formatting; +infinity appears as the sentinel "inf"
//! and missing optional values as empty fields. All writes go through a
//! temp-then-rename so readers never observe a partial file.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::MetricsRow;
use crate::sampler::TranslationResult;

/// Write `bytes` to `path` atomically via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Shortest round-trip float formatting with "inf"/"-inf" sentinels.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_field(field: &str) -> Result<f64> {
    match field {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => field
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("'{field}' is not a number"))),
    }
}

fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_field(field).map(Some)
    }
}

pub const METRICS_HEADER: &str =
    "task,lambda,initial_time,similarity,seed,n,l2,psnr,ssim,invariant_l2,target_nll,mmd";

pub fn metrics_line(row: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        row.task,
        fmt_f64(row.lambda),
        fmt_f64(row.initial_time),
        row.similarity,
        row.seed,
        row.n,
        fmt_f64(row.l2),
        fmt_opt(row.psnr),
        fmt_opt(row.ssim),
        fmt_f64(row.invariant_l2),
        fmt_opt(row.target_nll),
        fmt_f64(row.mmd),
    )
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for row in rows {
        s.push_str(&metrics_line(row));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "{}: expected metrics header, got {:?}",
                path.display(),
                other
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(Error::InvalidArgument(format!(
                "{} line {}: expected 12 fields, got {}",
                path.display(),
                i + 2,
                f.len()
            )));
        }
        let row = (|| -> Result<MetricsRow> {
            Ok(MetricsRow {
                task: f[0].to_string(),
                lambda: parse_field(f[1])?,
                initial_time: parse_field(f[2])?,
                similarity: f[3].to_string(),
                seed: f[4]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad seed '{}'", f[4])))?,
                n: f[5]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad count '{}'", f[5])))?,
                l2: parse_field(f[6])?,
                psnr: parse_opt(f[7])?,
                ssim: parse_opt(f[8])?,
                invariant_l2: parse_field(f[9])?,
                target_nll: parse_opt(f[10])?,
                mmd: parse_field(f[11])?,
            })
        })()
        .map_err(|e| {
            Error::InvalidArgument(format!("{} line {}: {e}", path.display(), i + 2))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// One line per iteration: `iteration,loss`.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut s = String::from("iteration,loss\n");
    for (i, loss) in losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", fmt_f64(*loss));
    }
    write_atomic(path, s.as_bytes())
}

/// One line per translated item; output coordinates become columns
/// `out_0..out_{d-1}`.
pub fn write_translations_csv(path: &Path, results: &[TranslationResult]) -> Result<()> {
    let dim = results.first().map_or(0, |r| r.output.len());
    let mut s = String::from("item,seed,lambda,initial_time,steps,similarity");
    for c in 0..dim {
        let _ = write!(s, ",out_{c}");
    }
    s.push('\n');
    for r in results {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            r.item,
            r.seed,
            fmt_f64(r.config.lambda),
            fmt_f64(r.config.initial_time),
            r.config.steps,
            r.config.similarity.name(),
        );
        for v in r.output.iter() {
            let _ = write!(s, ",{}", fmt_f64(*v));
        }
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

/// One line per reverse step of every item: similarity value and guidance
/// gradient norm are empty for unguided runs.
pub fn write_trace_csv(path: &Path, results: &[TranslationResult]) -> Result<()> {
    let mut s = String::from("item,step,t,similarity,guidance_grad_norm\n");
    for r in results {
        for (k, rec) in r.steps.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.item,
                k,
                fmt_f64(rec.t),
                fmt_opt(rec.similarity),
                fmt_opt(rec.guidance_grad_norm),
            );
        }
    }
    write_atomic(path, s.as_bytes())
}

/// Aggregate of one sweep cell over seeds: mean and standard error per
/// metric, with optional metrics left empty when no row carries them.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub lambda: f64,
    pub initial_time: f64,
    pub similarity: String,
    pub seeds: usize,
    pub n: usize,
    pub l2: (f64, f64),
    pub psnr: Option<(f64, f64)>,
    pub ssim: Option<(f64, f64)>,
    pub invariant_l2: (f64, f64),
    pub target_nll: Option<(f64, f64)>,
    pub mmd: (f64, f64),
}

fn mean_se_of(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn mean_se_opt(values: &[Option<f64>]) -> Option<(f64, f64)> {
    let present: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if present.is_empty() {
        None
    } else {
        Some(mean_se_of(&present))
    }
}

/// Group metrics rows by (task, lambda, initial_time, similarity) and
/// aggregate over seeds. Groups appear in first-row order.
pub fn aggregate_report(rows: &[MetricsRow]) -> Vec<ReportRow> {
    let mut keys: Vec<(String, f64, f64, String)> = Vec::new();
    let mut groups: Vec<Vec<&MetricsRow>> = Vec::new();
    for row in rows {
        let key = (
            row.task.clone(),
            row.lambda,
            row.initial_time,
            row.similarity.clone(),
        );
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(row),
            None => {
                keys.push(key);
                groups.push(vec![row]);
            }
        }
    }
    keys.into_iter()
        .zip(groups)
        .map(|((task, lambda, initial_time, similarity), rows)| ReportRow {
            task,
            lambda,
            initial_time,
            similarity,
            seeds: rows.len(),
            n: rows.iter().map(|r| r.n).sum(),
            l2: mean_se_of(&rows.iter().map(|r| r.l2).collect::<Vec<_>>()),
            psnr: mean_se_opt(&rows.iter().map(|r| r.psnr).collect::<Vec<_>>()),
            ssim: mean_se_opt(&rows.iter().map(|r| r.ssim).collect::<Vec<_>>()),
            invariant_l2: mean_se_of(&rows.iter().map(|r| r.invariant_l2).collect::<Vec<_>>()),
            target_nll: mean_se_opt(&rows.iter().map(|r| r.target_nll).collect::<Vec<_>>()),
            mmd: mean_se_of(&rows.iter().map(|r| r.mmd).collect::<Vec<_>>()),
        })
        .collect()
}

pub const REPORT_HEADER: &str = "task,lambda,initial_time,similarity,seeds,n,\
l2_mean,l2_se,psnr_mean,psnr_se,ssim_mean,ssim_se,invariant_l2_mean,invariant_l2_se,\
target_nll_mean,target_nll_se,mmd_mean,mmd_se";

pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let pair = |p: (f64, f64)| format!("{},{}", fmt_f64(p.0), fmt_f64(p.1));
    let opt_pair = |p: Option<(f64, f64)>| match p {
        Some(p) => pair(p),
        None => ",".into(),
    };
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.task,
            fmt_f64(r.lambda),
            fmt_f64(r.initial_time),
            r.similarity,
            r.seeds,
            r.n,
            pair(r.l2),
            opt_pair(r.psnr),
            opt_pair(r.ssim),
            pair(r.invariant_l2),
            opt_pair(r.target_nll),
            pair(r.mmd),
        );
    }
    write_atomic(path, s.as_bytes())
}

/// One named polyline of an SVG chart.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.abs() >= 1e4 || v.abs() < 1e-3 {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.4}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Hand-emitted polyline chart. Non-finite points are dropped; an empty or
/// degenerate range is padded so the geometry stays valid.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    const W: f64 = 760.0;
    const H: f64 = 440.0;
    const L: f64 = 80.0;
    const R: f64 = 600.0;
    const T: f64 = 50.0;
    const B: f64 = 390.0;

    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (mut y0, mut y1) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    if !x0.is_finite() {
        (x0, x1) = (0.0, 1.0);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y0 == y1 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = (y1 - y0) * 0.05;
    y0 -= pad;
    y1 += pad;
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (R - L);
    let sy = |y: f64| B - (y - y0) / (y1 - y0) * (B - T);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        (L + R) / 2.0,
        title
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        (L + R) / 2.0,
        H - 10.0,
        x_label
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>",
        (T + B) / 2.0,
        (T + B) / 2.0,
        y_label
    );
    let _ = writeln!(
        s,
        "<rect x=\"{L}\" y=\"{T}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        R - L,
        B - T
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let px = sx(fx);
        let py = sy(fy);
        let _ = writeln!(
            s,
            "<line x1=\"{px:.2}\" y1=\"{B}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#444\"/>",
            B + 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{px:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            B + 18.0,
            tick_label(fx)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{py:.2}\" x2=\"{L}\" y2=\"{py:.2}\" stroke=\"#444\"/>",
            L - 5.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            L - 8.0,
            py + 4.0,
            tick_label(fy)
        );
    }
    for (i, sr) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = sr
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                pts.join(" ")
            );
        }
        let ly = T + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            R + 12.0,
            R + 36.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            R + 42.0,
            ly + 4.0,
            sr.label
        );
    }
    s.push_str("</svg>\n");
    s
}
