//! CSV persistence.
//!
//! Autonomous files have the header `x1,…,xn,xdot1,…,xdotn`, one sample per row.
//! Control files have the header `i,j,x1,…,xn,u1,…,um,xdot1,…,xdotn` with
//! 1-based indices, rows sorted by `(i, j)` and every pair present.
//! Floats are written in shortest round-trip form, so reloading is lossless.

use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};

use super::{AutonomousDataset, AutonomousSample, ControlDataset};

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn numbered(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}{i}"))
}

/// Counts leading header fields named `prefix1, prefix2, …` starting at `start`.
fn count_prefixed(header: &csv::StringRecord, start: usize, prefix: &str) -> usize {
    let mut k = 0;
    while let Some(field) = header.get(start + k) {
        if field.trim() != format!("{prefix}{}", k + 1) {
            break;
        }
        k += 1;
    }
    k
}

fn check_width(path: &Path, row: &csv::StringRecord, line: usize, width: usize) -> Result<()> {
    if row.len() != width {
        return Err(Error::format(
            path,
            format!("row {line} has {} fields, expected {width}", row.len()),
        ));
    }
    Ok(())
}

fn parse_fields<'a>(
    path: &Path,
    fields: impl Iterator<Item = &'a str>,
    line: usize,
) -> Result<Vec<f64>> {
    fields
        .map(|f| {
            f.trim().parse::<f64>().map_err(|_| {
                Error::format(path, format!("row {line}: non-numeric field '{f}'"))
            })
        })
        .collect()
}

pub fn save_autonomous_csv(ds: &AutonomousDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = ds.n();
    let mut w = writer(path)?;
    let header: Vec<String> = numbered("x", n).chain(numbered("xdot", n)).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in ds.samples() {
        let row: Vec<String> = s.x.iter().chain(&s.xdot).map(|v| fmt(*v)).collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_autonomous_csv(path: impl AsRef<Path>) -> Result<AutonomousDataset> {
    let path = path.as_ref();
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.is_empty() || header.iter().all(|f| f.trim().is_empty()) {
        return Err(Error::format(path, "empty file"));
    }
    let n = count_prefixed(&header, 0, "x");
    if n == 0 || count_prefixed(&header, n, "xdot") != n || header.len() != 2 * n {
        return Err(Error::format(
            path,
            "header must read x1,…,xn,xdot1,…,xdotn",
        ));
    }
    let mut samples = Vec::new();
    for (k, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        check_width(path, &row, k + 2, 2 * n)?;
        let v = parse_fields(path, row.iter(), k + 2)?;
        samples.push(AutonomousSample {
            x: v[..n].to_vec(),
            xdot: v[n..].to_vec(),
        });
    }
    if samples.is_empty() {
        return Err(Error::format(path, "no samples"));
    }
    AutonomousDataset::new(samples).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_control_csv(ds: &ControlDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (n, m) = (ds.n(), ds.m());
    let mut w = writer(path)?;
    let header: Vec<String> = ["i".to_string(), "j".to_string()]
        .into_iter()
        .chain(numbered("x", n))
        .chain(numbered("u", m))
        .chain(numbered("xdot", n))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, x) in ds.states().iter().enumerate() {
        for j in 0..ds.n_controls() {
            let row: Vec<String> = [(i + 1).to_string(), (j + 1).to_string()]
                .into_iter()
                .chain(x.iter().map(|v| fmt(*v)))
                .chain(ds.input(i, j).iter().map(|v| fmt(*v)))
                .chain(ds.deriv(i, j).iter().map(|v| fmt(*v)))
                .collect();
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_control_csv(path: impl AsRef<Path>) -> Result<ControlDataset> {
    let path = path.as_ref();
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.is_empty() || header.iter().all(|f| f.trim().is_empty()) {
        return Err(Error::format(path, "empty file"));
    }
    if header.get(0).map(str::trim) != Some("i") || header.get(1).map(str::trim) != Some("j") {
        return Err(Error::format(path, "header must start with i,j"));
    }
    let n = count_prefixed(&header, 2, "x");
    let m = count_prefixed(&header, 2 + n, "u");
    if n == 0 || count_prefixed(&header, 2 + n + m, "xdot") != n || header.len() != 2 + 2 * n + m
    {
        return Err(Error::format(
            path,
            "header must read i,j,x1,…,xn,u1,…,um,xdot1,…,xdotn",
        ));
    }
    let width = 2 + 2 * n + m;

    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (k, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = k + 2;
        check_width(path, &row, line, width)?;
        let index = |f: &str| -> Result<usize> {
            f.trim()
                .parse::<usize>()
                .ok()
                .filter(|v| *v >= 1)
                .ok_or_else(|| Error::format(path, format!("row {line}: bad index '{f}'")))
        };
        let i = index(&row[0])?;
        let j = index(&row[1])?;
        let values = parse_fields(path, row.iter().skip(2), line)?;
        rows.push((i, j, values));
    }
    if rows.is_empty() {
        return Err(Error::format(path, "no samples"));
    }

    let n_states = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let n_controls = rows.iter().map(|r| r.1).max().unwrap_or(0);
    if rows.len() != n_states * n_controls {
        return Err(Error::format(
            path,
            format!(
                "incomplete factorial: {} rows for {n_states} states x {n_controls} controls",
                rows.len()
            ),
        ));
    }
    let mut states = Vec::with_capacity(n_states);
    let mut inputs = Vec::with_capacity(n_states);
    let mut derivs = Vec::with_capacity(n_states);
    for (k, (i, j, v)) in rows.into_iter().enumerate() {
        let (want_i, want_j) = (k / n_controls + 1, k % n_controls + 1);
        if (i, j) != (want_i, want_j) {
            return Err(Error::format(
                path,
                format!("incomplete factorial or unsorted rows: found ({i}, {j}), expected ({want_i}, {want_j})"),
            ));
        }
        let x = v[..n].to_vec();
        if j == 1 {
            states.push(x);
            inputs.push(Vec::with_capacity(n_controls));
            derivs.push(Vec::with_capacity(n_controls));
        } else if states[i - 1] != x {
            return Err(Error::format(
                path,
                format!("state {i} differs between its control rows"),
            ));
        }
        inputs[i - 1].push(v[n..n + m].to_vec());
        derivs[i - 1].push(v[n + m..].to_vec());
    }
    ControlDataset::new(states, inputs, derivs).map_err(|e| Error::format(path, e.to_string()))
}
