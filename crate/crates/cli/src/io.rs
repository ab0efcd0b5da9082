//! CSV datasets: a header row `x1..xd,y1..yp`, then one sample per row.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit.

use std::io::Write;
use std::path::Path;

use cmmd::doubly_robust::PropensityModel;
use cmmd::embeddings::PairedDataset;
use cmmd::kernels::Point;

use crate::CliError;

fn input(msg: String) -> CliError {
    CliError::Input(msg)
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

/// Number of leading columns named `<prefix>1, <prefix>2, ...`.
fn prefixed_run(headers: &[String], start: usize, prefix: &str) -> usize {
    headers[start..]
        .iter()
        .enumerate()
        .take_while(|(i, h)| **h == format!("{prefix}{}", i + 1))
        .count()
}

/// Parses all rows as floats, reporting the 1-based file line of any failure.
fn numeric_rows(path: &Path, reader: &mut csv::Reader<std::fs::File>, headers: &[String]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            input(format!("{}:{line}: {e}", path.display()))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != headers.len() {
            return Err(input(format!("{}:{line}: expected {} fields, found {}", path.display(), headers.len(), rec.len())));
        }
        let mut row = Vec::with_capacity(rec.len());
        for (field, name) in rec.iter().zip(headers) {
            let v: f64 = field
                .parse()
                .map_err(|_| input(format!("{}:{line}: column {name}: cannot parse {field:?} as a number", path.display())))?;
            if !v.is_finite() {
                return Err(input(format!("{}:{line}: column {name}: value {field:?} is not finite", path.display())));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(input(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn header_names(path: &Path, reader: &mut csv::Reader<std::fs::File>) -> Result<Vec<String>, CliError> {
    Ok(reader
        .headers()
        .map_err(|e| input(format!("{}:1: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect())
}

pub fn read_dataset(path: &Path) -> Result<PairedDataset, CliError> {
    let mut reader = open(path)?;
    let headers = header_names(path, &mut reader)?;
    let d = prefixed_run(&headers, 0, "x");
    let p = prefixed_run(&headers, d, "y");
    if d == 0 || p == 0 || d + p != headers.len() {
        return Err(input(format!(
            "{}:1: header must be x1..xd followed by y1..yp, got {}",
            path.display(),
            headers.join(",")
        )));
    }
    let rows = numeric_rows(path, &mut reader, &headers)?;
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for mut row in rows {
        let y = row.split_off(d);
        xs.push(Point::new(row).map_err(|e| input(e.to_string()))?);
        ys.push(Point::new(y).map_err(|e| input(e.to_string()))?);
    }
    PairedDataset::new(xs, ys).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn write_dataset<W: Write>(out: W, data: &PairedDataset) -> Result<(), CliError> {
    let io_err = |e: csv::Error| CliError::Runtime(format!("cannot write CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=data.covariate_dim())
        .map(|i| format!("x{i}"))
        .chain((1..=data.outcome_dim()).map(|i| format!("y{i}")))
        .collect();
    w.write_record(&header).map_err(io_err)?;
    for (x, y) in data.covariates().iter().zip(data.outcomes()) {
        let row: Vec<String> = x.iter().chain(y.iter()).map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("cannot write CSV: {e}")))
}

pub fn write_dataset_file(path: &Path, data: &PairedDataset) -> Result<(), CliError> {
    let f = std::fs::File::create(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    write_dataset(std::io::BufWriter::new(f), data)
}

/// Propensity table with header `x1..xd,e`.
pub fn read_propensity_table(path: &Path) -> Result<PropensityModel, CliError> {
    let mut reader = open(path)?;
    let headers = header_names(path, &mut reader)?;
    let d = prefixed_run(&headers, 0, "x");
    if d == 0 || headers.len() != d + 1 || headers[d] != "e" {
        return Err(input(format!("{}:1: header must be x1..xd,e, got {}", path.display(), headers.join(","))));
    }
    let rows = numeric_rows(path, &mut reader, &headers)?;
    let entries = rows
        .into_iter()
        .map(|mut row| {
            let e = row.pop().expect("row has d + 1 fields");
            Point::new(row).map(|p| (p, e)).map_err(|err| input(err.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    PropensityModel::tabulated(entries).map_err(|e| input(e.to_string()))
}
