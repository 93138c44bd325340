//! JSON and CSV output of run reports.
//!
//! CSV floats carry 17 significant digits so every value round-trips.
//! Lines end in LF.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{Comparison, RunReport, Spread};
use crate::metrics::TracePoint;

pub const CURVES_HEADER: &str = "t,acc_seen,acc_full,regret,cum_regret,kl";

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct Sink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Sink {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Sink {
            out: BufWriter::new(file),
            path,
        })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        self.out
            .write_all(text.as_bytes())
            .and_then(|()| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn write_json<T: Serialize>(value: &T, path: PathBuf) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::contract(format!("report serialization failed: {e}")))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `report.json`, `curves.csv`, `kmatrix.csv` and `accmatrix.csv`
/// into `dir`, creating it if needed. Returns the written paths.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![write_json(report, dir.join("report.json"))?];

    let mut curves = Sink::create(dir.join("curves.csv"))?;
    curves.line(CURVES_HEADER)?;
    for p in &report.trace.points {
        curves.line(&format!(
            "{},{},{},{},{},{}",
            p.t + 1,
            fmt_f64(p.acc_seen),
            fmt_f64(p.acc_full),
            fmt_f64(p.regret),
            fmt_f64(p.cum_regret),
            fmt_f64(p.kl)
        ))?;
    }
    written.push(curves.finish()?);

    let mut k = Sink::create(dir.join("kmatrix.csv"))?;
    k.line("layer,t,k_current,k_next")?;
    for (l, series) in report.trace.k.layers.iter().enumerate() {
        for (t, pair) in series {
            k.line(&format!("{l},{},{},{}", t + 1, fmt_f64(pair.current), fmt_f64(pair.next)))?;
        }
    }
    written.push(k.finish()?);

    // One line per task, no header; undefined entries are empty cells.
    let mut acc = Sink::create(dir.join("accmatrix.csv"))?;
    for row in report.accuracy.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.map(fmt_f64).unwrap_or_default()).collect();
        acc.line(&cells.join(","))?;
    }
    written.push(acc.finish()?);
    Ok(written)
}

/// Parses a `curves.csv` written by [`emit_report`]. `t` is read back zero-based.
pub fn read_curves(path: impl AsRef<Path>) -> Result<Vec<TracePoint>> {
    let path = path.as_ref();
    let format = |msg: String| Error::Format {
        path: path.to_path_buf(),
        message: msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| format(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != CURVES_HEADER {
        return Err(format(format!("unexpected header {}", header.join(","))));
    }
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |j: usize| -> Result<f64> {
            record[j]
                .parse::<f64>()
                .map_err(|_| format(format!("line {line}: bad number {:?}", &record[j])))
        };
        let t: usize = record[0]
            .parse()
            .map_err(|_| format(format!("line {line}: bad batch index {:?}", &record[0])))?;
        points.push(TracePoint {
            t: t.saturating_sub(1),
            acc_seen: num(1)?,
            acc_full: num(2)?,
            regret: num(3)?,
            cum_regret: num(4)?,
            kl: num(5)?,
        });
    }
    Ok(points)
}

fn spread_cells(s: &Option<Spread>) -> [String; 3] {
    match s {
        Some(s) => [fmt_f64(s.median), fmt_f64(s.min), fmt_f64(s.max)],
        None => Default::default(),
    }
}

/// Writes `comparison.json` and `comparison.csv` (one row per style).
pub fn emit_comparison(cmp: &Comparison, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = write_json(cmp, dir.join("comparison.json"))?;
    let mut csv = Sink::create(dir.join("comparison.csv"))?;
    let metrics = ["acc", "bwt", "fwt", "acc_full", "cum_regret"];
    let mut header = vec!["style".to_string()];
    for m in metrics {
        header.extend([format!("{m}_median"), format!("{m}_min"), format!("{m}_max")]);
    }
    csv.line(&header.join(","))?;
    for row in &cmp.rows {
        let mut cells = vec![format!("\"{}\"", row.style)];
        for s in [&row.acc, &row.bwt, &row.fwt, &row.final_acc_full, &row.cumulative_regret] {
            cells.extend(spread_cells(s));
        }
        csv.line(&cells.join(","))?;
    }
    Ok(vec![json, csv.finish()?])
}
