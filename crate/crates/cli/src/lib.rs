//! Plumbing for the `levelset` binary: CSV matrices in, JSON solutions and
//! JSON-lines or CSV traces out.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use levelset::problems::ProblemError;
use levelset::{DenseMatrix, SolveTrace, TraceRecord};
use serde::Deserialize;
use thiserror::Error;

pub mod commands;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("{path}: file holds no numbers")]
    Empty { path: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Solve(#[from] ProblemError),
    #[error("trace: {0}")]
    Trace(String),
}

impl CliError {
    fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TraceFormat {
    #[value(name = "jsonl")]
    JsonLines,
    Csv,
}

/// Row-major CSV of decimal floats without a header.
pub fn load_dense(path: &Path) -> Result<DenseMatrix, CliError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut data = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Parse {
                path: shown.clone(),
                line,
                msg: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(CliError::Parse {
                    path: shown,
                    line,
                    msg: format!("row has {} fields, expected {c}", record.len()),
                })
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| CliError::Parse {
                path: shown.clone(),
                line,
                msg: format!("not a number: {field:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let Some(cols) = cols else {
        return Err(CliError::Empty { path: shown });
    };
    DenseMatrix::new(rows, cols, data).map_err(|e| CliError::Parse {
        path: shown,
        line: 0,
        msg: e.to_string(),
    })
}

/// A single-column file, or a single row.
pub fn load_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let m = load_dense(path)?;
    if m.cols() == 1 || m.rows() == 1 {
        Ok(m.as_slice().to_vec())
    } else {
        Err(CliError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!(
                "expected a vector, found a {}x{} matrix",
                m.rows(),
                m.cols()
            ),
        })
    }
}

/// Shortest round-tripping decimal for every entry, so reads are bit-exact.
pub fn write_dense(path: &Path, m: &DenseMatrix) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::new();
    for i in 0..m.rows() {
        line.clear();
        for (j, v) in m.row(i).iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<(), CliError> {
    let m = DenseMatrix::new(v.len(), 1, v.to_vec()).expect("column shape");
    write_dense(path, &m)
}

const TRACE_COLUMNS: [&str; 7] = [
    "k",
    "tau",
    "lower",
    "upper",
    "slope",
    "inner_iters",
    "elapsed_ms",
];

pub fn write_trace<W: Write>(
    trace: &SolveTrace,
    format: TraceFormat,
    out: W,
) -> Result<(), CliError> {
    match format {
        TraceFormat::JsonLines => {
            let mut out = out;
            for rec in &trace.records {
                serde_json::to_writer(&mut out, rec).map_err(|e| CliError::Trace(e.to_string()))?;
                out.write_all(b"\n")
                    .map_err(|e| CliError::Trace(e.to_string()))?;
            }
            out.flush().map_err(|e| CliError::Trace(e.to_string()))
        }
        TraceFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(out);
            let trace_err = |e: csv::Error| CliError::Trace(e.to_string());
            w.write_record(TRACE_COLUMNS).map_err(trace_err)?;
            for rec in &trace.records {
                w.serialize(rec).map_err(trace_err)?;
            }
            w.flush().map_err(|e| CliError::Trace(e.to_string()))
        }
    }
}

pub fn emit_trace(trace: &SolveTrace, format: TraceFormat, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_trace(trace, format, BufWriter::new(file)).map_err(|e| match e {
        CliError::Trace(msg) => CliError::io(path, io::Error::other(msg)),
        other => other,
    })
}

#[derive(Deserialize)]
struct RawRecord {
    k: usize,
    tau: f64,
    lower: f64,
    upper: f64,
    slope: Option<f64>,
    inner_iters: usize,
    elapsed_ms: Option<f64>,
}

impl From<RawRecord> for TraceRecord {
    fn from(r: RawRecord) -> Self {
        TraceRecord {
            k: r.k,
            tau: r.tau,
            lower: r.lower,
            upper: r.upper,
            slope: r.slope,
            inner_iters: r.inner_iters,
            elapsed_ms: r.elapsed_ms,
        }
    }
}

/// Reads either format back. JSON-lines is assumed unless the first line is
/// the CSV header.
pub fn read_trace(path: &Path) -> Result<SolveTrace, CliError> {
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().peekable();
    let header = TRACE_COLUMNS.join(",");
    let is_csv = matches!(lines.peek(), Some(Ok(l)) if l.trim() == header);
    let mut records = Vec::new();
    if is_csv {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| CliError::Trace(e.to_string()))?;
        for (i, rec) in reader.deserialize::<RawRecord>().enumerate() {
            let rec = rec.map_err(|e| CliError::Parse {
                path: shown.clone(),
                line: i as u64 + 2,
                msg: e.to_string(),
            })?;
            records.push(rec.into());
        }
    } else {
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| CliError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RawRecord = serde_json::from_str(&line).map_err(|e| CliError::Parse {
                path: shown.clone(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })?;
            records.push(rec.into());
        }
    }
    Ok(SolveTrace { records })
}

/// `LEVELSET_THREADS`, default 1. Every solve here is single-threaded, so the
/// value is only validated.
pub fn thread_cap(raw: Option<&str>) -> Result<usize, CliError> {
    match raw {
        None => Ok(1),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "LEVELSET_THREADS must be a positive integer, got {s:?}"
            ))),
        },
    }
}
