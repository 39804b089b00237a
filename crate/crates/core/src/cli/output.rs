//! Output files: comma-separated tables, JSON-lines event logs and optional
//! SVG plots.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::sequencer::{LogHeader, TrialRecord};

use super::CliError;

/// Nine significant digits in scientific notation.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else {
        v.to_string()
    }
}

pub struct Table {
    meta: Vec<(String, String)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn row(&mut self, values: Vec<String>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(values);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}").unwrap();
        }
        writeln!(out, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", r.join(",")).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render()).map_err(|e| io_error(path, e))
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Streams records to a side file while the campaign runs; `finish` writes
/// the header (which carries the totals) followed by the records.
pub struct EventLogWriter {
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl EventLogWriter {
    pub fn create(path: PathBuf) -> Result<Self, CliError> {
        let tmp = path.with_extension("records.tmp");
        let out = BufWriter::new(File::create(&tmp).map_err(|e| io_error(&tmp, e))?);
        Ok(Self {
            path,
            tmp,
            out,
            error: None,
        })
    }

    pub fn record(&mut self, r: &TrialRecord) {
        if self.error.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("records serialise");
        if let Err(e) = writeln!(self.out, "{line}") {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self, header: &LogHeader) -> Result<(), CliError> {
        if let Some(e) = self.error.take() {
            return Err(io_error(&self.tmp, e));
        }
        self.out.flush().map_err(|e| io_error(&self.tmp, e))?;
        drop(self.out);
        let mut dst =
            BufWriter::new(File::create(&self.path).map_err(|e| io_error(&self.path, e))?);
        let head = serde_json::to_string(header).expect("header serialises");
        writeln!(dst, "{head}").map_err(|e| io_error(&self.path, e))?;
        let src = BufReader::new(File::open(&self.tmp).map_err(|e| io_error(&self.tmp, e))?);
        for line in src.lines() {
            let line = line.map_err(|e| io_error(&self.tmp, e))?;
            writeln!(dst, "{line}").map_err(|e| io_error(&self.path, e))?;
        }
        dst.flush().map_err(|e| io_error(&self.path, e))?;
        std::fs::remove_file(&self.tmp).map_err(|e| io_error(&self.tmp, e))
    }
}

/// Reads a log written by [`EventLogWriter`].
pub fn read_event_log(path: &Path) -> Result<crate::sequencer::EventLog, CliError> {
    let file = BufReader::new(File::open(path).map_err(|e| io_error(path, e))?);
    let mut lines = file.lines();
    let bad = |msg: String| CliError::Runtime(format!("{}: {msg}", path.display()));
    let head = lines
        .next()
        .ok_or_else(|| bad("empty log".into()))?
        .map_err(|e| io_error(path, e))?;
    let header: LogHeader = serde_json::from_str(&head).map_err(|e| bad(e.to_string()))?;
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| io_error(path, e))?;
        records.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
    }
    Ok(crate::sequencer::EventLog { header, records })
}

/// Minimal SVG plotting: a heat map and an x/y scatter with error bars.
pub mod svg {
    use std::fmt::Write as _;

    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const M: f64 = 50.0;

    fn open(title: &str) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{title}</text>\n",
            W / 2.0
        )
    }

    /// Cells `(x, y, value)` on an `nx × ny` grid, linear colour scale.
    pub fn heat_map(title: &str, nx: usize, ny: usize, cells: &[(usize, usize, f64)]) -> String {
        let mut s = open(title);
        let size = ((W - 2.0 * M) / nx as f64).min((H - 2.0 * M) / ny as f64);
        let (lo, hi) = cells
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                (a.min(c.2), b.max(c.2))
            });
        let span = if hi > lo { hi - lo } else { 1.0 };
        for &(x, y, v) in cells {
            let f = (v - lo) / span;
            let (r, g, b) = (
                (255.0 * f) as u8,
                (80.0 + 100.0 * f) as u8,
                (255.0 * (1.0 - f)) as u8,
            );
            writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{size:.1}\" height=\"{size:.1}\" fill=\"rgb({r},{g},{b})\"><title>({x},{y}) {v:.4}</title></rect>",
                M + (x - 1) as f64 * size,
                M + (ny - y) as f64 * size
            )
            .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{M}\" y=\"{}\">min {lo:.4}  max {hi:.4}</text>",
            H - 12.0
        )
        .unwrap();
        s.push_str("</svg>\n");
        s
    }

    /// Points `(x, y, sigma)` and an optional model curve.
    pub fn scatter(
        title: &str,
        x_label: &str,
        y_label: &str,
        points: &[(f64, f64, f64)],
        curve: Option<&dyn Fn(f64) -> f64>,
    ) -> String {
        let mut s = open(title);
        let x_hi = points.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-12) * 1.05;
        let y_hi = points
            .iter()
            .map(|p| p.1 + p.2)
            .fold(0.0, f64::max)
            .max(1e-12)
            * 1.1;
        let px = |x: f64| M + x / x_hi * (W - 2.0 * M);
        let py = |y: f64| H - M - y / y_hi * (H - 2.0 * M);
        writeln!(
            s,
            "<path d=\"M{M},{} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
            M,
            H - M,
            W - M
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
            W / 2.0,
            H - 15.0
        )
        .unwrap();
        writeln!(s, "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">{y_label}</text>", H / 2.0, H / 2.0)
            .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x_hi:.3}</text>",
            W - M,
            H - M + 14.0
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y_hi:.3}</text>",
            M - 4.0,
            M + 4.0
        )
        .unwrap();
        if let Some(f) = curve {
            let d: Vec<String> = (0..=100)
                .map(|i| {
                    let x = x_hi * i as f64 / 100.0;
                    format!("{:.2},{:.2}", px(x), py(f(x).clamp(0.0, y_hi)))
                })
                .collect();
            writeln!(
                s,
                "<polyline points=\"{}\" stroke=\"steelblue\" fill=\"none\"/>",
                d.join(" ")
            )
            .unwrap();
        }
        for &(x, y, e) in points {
            writeln!(
                s,
                "<line x1=\"{0:.2}\" x2=\"{0:.2}\" y1=\"{1:.2}\" y2=\"{2:.2}\" stroke=\"black\"/><circle cx=\"{0:.2}\" cy=\"{3:.2}\" r=\"3\"/>",
                px(x),
                py((y - e).max(0.0)),
                py(y + e),
                py(y)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}
