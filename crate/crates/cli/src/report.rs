//! Aggregation of result CSVs into plot-data files and a pass/fail summary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::runner::Outcome;

/// A CSV table with string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cells of column `name`; empty when the column is absent.
    pub fn column(&self, name: &str) -> Vec<&str> {
        match self.col(name) {
            Some(i) => self.rows.iter().map(|r| r.get(i).map_or("", String::as_str)).collect(),
            None => Vec::new(),
        }
    }

    /// `(x, y)` pairs of rows whose `key` column equals `value`, for numeric x and y.
    pub fn series(&self, key: &str, value: &str, x: &str, y: &str) -> Vec<(f64, f64)> {
        let (Some(k), Some(xi), Some(yi)) = (self.col(key), self.col(x), self.col(y)) else {
            return Vec::new();
        };
        let mut pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.get(k).is_some_and(|v| v == value))
            .filter_map(|r| Some((r.get(xi)?.parse().ok()?, r.get(yi)?.parse().ok()?)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }
}

/// Result CSV, plot file, x column, y column and series column (a constant
/// label when the table has no such column).
const PLOTS: [(&str, &str, &str, &str, &str); 5] = [
    ("sweep_snr.csv", "snr_psnr.dat", "snr_db", "psnr_db", "scheme"),
    ("sweep_dcr.csv", "dcr_psnr.dat", "dcr", "psnr_db", "scheme"),
    ("baseline.csv", "baseline_psnr.dat", "snr_db", "psnr_db", "scheme"),
    ("equalizer_bench.csv", "equalizer_mse.dat", "snr_db", "symbol_mse", "equalizer"),
    ("history.csv", "training_loss.dat", "step", "loss", "train"),
];

const TRAIN_SUMMARY: &str = "train_summary.csv";

/// Tab-separated `x y series` rows, one per CSV row, under a `#` header.
pub fn plot_data(t: &Table, x: &str, y: &str, series: &str) -> String {
    let mut out = String::from("# x\ty\tseries\n");
    let xs = t.column(x);
    let ys = t.column(y);
    let ss = t.column(series);
    for i in 0..t.rows.len() {
        let s = ss.get(i).copied().unwrap_or(series);
        let _ = writeln!(out, "{}\t{}\t{s}", xs.get(i).unwrap_or(&""), ys.get(i).unwrap_or(&""));
    }
    out
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn nondecreasing(pts: &[(f64, f64)]) -> bool {
    pts.windows(2).all(|w| w[1].1 >= w[0].1)
}

fn at(pts: &[(f64, f64)], x: f64) -> Option<f64> {
    pts.iter().find(|p| p.0 == x).map(|p| p.1)
}

/// PASS/FAIL lines for every criterion the tables allow evaluating.
pub fn evaluate_criteria(dir: &Path) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    let load = |name: &str| -> Result<Option<Table>> {
        let p = dir.join(name);
        if p.is_file() {
            Table::read(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    if let Some(t) = load(TRAIN_SUMMARY)? {
        let num = |c: &str| t.column(c).first().and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
        let gain = num("final_val_psnr") - num("initial_val_psnr");
        let (a, b) = (num("loss_ma_start"), num("loss_ma_end"));
        lines.push(format!(
            "{} end-to-end learning: validation gain {gain:.2} dB (>= 6), moving-average loss {a:.5} -> {b:.5}",
            verdict(gain >= 6.0 && b < a)
        ));
    }
    if let Some(t) = load("sweep_snr.csv")? {
        let icci = t.series("scheme", "icci", "snr_db", "psnr_db");
        if icci.len() >= 2 {
            let floor = match (at(&icci, 0.0), at(&icci, 20.0)) {
                (Some(lo), Some(hi)) => lo >= hi - 8.0,
                _ => true,
            };
            lines.push(format!(
                "{} icci snr robustness: psnr {:?} nondecreasing, psnr(0) >= psnr(20) - 8",
                verdict(nondecreasing(&icci) && floor),
                icci.iter().map(|p| (p.1 * 100.0).round() / 100.0).collect::<Vec<_>>()
            ));
        }
        let sc = t.series("scheme", "sc", "snr_db", "psnr_db");
        if sc.len() >= 2 {
            let drop = sc.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max);
            lines.push(format!("{} sc cliff: largest adjacent psnr step {drop:.2} dB (> 10)", verdict(drop > 10.0)));
        }
    }
    if let Some(t) = load("equalizer_bench.csv")? {
        let ffe = t.column("equalizer").into_iter().find(|e| e.starts_with("ffe")).map(String::from);
        if let Some(ffe) = ffe {
            for (snr, c) in t.series("equalizer", "cdan", "snr_db", "symbol_mse") {
                if let Some(f) = at(&t.series("equalizer", &ffe, "snr_db", "symbol_mse"), snr) {
                    lines.push(format!(
                        "{} equalizer at {snr} dB: cdan mse {c:.5} <= 0.8 x {ffe} mse {f:.5}",
                        verdict(c <= 0.8 * f)
                    ));
                }
            }
        }
    }
    if let Some(t) = load("sweep_dcr.csv")? {
        let icci = t.series("scheme", "icci", "dcr", "psnr_db");
        if icci.len() >= 2 {
            lines.push(format!("{} icci psnr nondecreasing in dcr", verdict(nondecreasing(&icci))));
        }
    }
    Ok(lines)
}

/// Writes `plots/*.dat` for every result CSV in `dir` and `summary.txt`.
pub fn run_report(dir: &Path) -> Result<Outcome> {
    let mut written = Vec::new();
    let mut missing = Vec::new();
    let plots = dir.join("plots");
    for (csv, plot, x, y, series) in PLOTS {
        let src = dir.join(csv);
        if !src.is_file() {
            missing.push(csv);
            continue;
        }
        let t = Table::read(&src)?;
        fs::create_dir_all(&plots).map_err(|e| CliError::io(&plots, e))?;
        let path = plots.join(plot);
        fs::write(&path, plot_data(&t, x, y, series)).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    if !dir.join(TRAIN_SUMMARY).is_file() {
        missing.push(TRAIN_SUMMARY);
    }
    let mut text = String::new();
    if written.is_empty() && missing.len() == PLOTS.len() + 1 {
        text.push_str("no results\n");
    } else {
        for line in evaluate_criteria(dir)? {
            let _ = writeln!(text, "{line}");
        }
        for m in &missing {
            let _ = writeln!(text, "missing {m}");
        }
    }
    let path = dir.join("summary.txt");
    fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    Ok(Outcome {
        written,
        summary: Some(text),
    })
}
