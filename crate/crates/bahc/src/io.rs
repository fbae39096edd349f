//! Plain-text persistence: wide CSV for prices and returns, square CSV for
//! matrices, newline-delimited JSON for experiment records, CSV for
//! aggregates and weights.
//!
//! Wide layout: the header row names the assets, the first column is an
//! ordered date/period label, each data row is one observation date. Empty
//! cells are allowed (and mean "missing") only in price files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::harness::{ExperimentRecord, PriceSeries, SummaryRow};
use crate::matrix::{ReturnsMatrix, SymmetricMatrix};

/// Reads a wide-format price CSV; empty cells become missing values.
pub fn read_prices_csv(path: &Path) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{}: expected a date column plus at least one ticker",
            path.display()
        )));
    }
    let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();

    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        dates.push(record[0].to_string());
        let mut row = Vec::with_capacity(tickers.len());
        for field in record.iter().skip(1) {
            if field.trim().is_empty() {
                row.push(f64::NAN);
            } else {
                row.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("{}: bad price '{field}': {e}", path.display()))
                })?);
            }
        }
        rows.push(row);
    }

    let prices = DMatrix::from_fn(tickers.len(), dates.len(), |i, k| rows[k][i]);
    PriceSeries::new(dates, tickers, prices)
}

/// Reads a wide-format returns CSV; every cell must be present.
pub fn read_returns_csv(path: &Path) -> Result<ReturnsMatrix> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "{}: need at least two asset columns",
            path.display()
        )));
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(labels.len());
        for field in record.iter().skip(1) {
            if field.trim().is_empty() {
                return Err(Error::InvalidInput(format!(
                    "{}: returns files may not have gaps",
                    path.display()
                )));
            }
            row.push(field.trim().parse::<f64>().map_err(|e| {
                Error::InvalidInput(format!("{}: bad return '{field}': {e}", path.display()))
            })?);
        }
        rows.push(row);
    }

    let data = DMatrix::from_fn(labels.len(), rows.len(), |i, k| rows[k][i]);
    ReturnsMatrix::with_labels(data, labels)
}

/// Writes returns in the wide layout, one row per observation period.
pub fn write_returns_csv(path: &Path, r: &ReturnsMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["period".to_string()];
    header.extend(r.labels().iter().cloned());
    w.write_record(&header)?;
    for k in 0..r.n_features() {
        let mut row = vec![k.to_string()];
        for i in 0..r.n_objects() {
            row.push(format!("{}", r.data()[(i, k)]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a square labelled matrix: header `label,L1,...,Ln`, one row per label.
pub fn write_matrix_csv(path: &Path, values: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    if values.nrows() != labels.len() || values.ncols() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for a {}x{} matrix",
            labels.len(),
            values.nrows(),
            values.ncols()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for i in 0..values.nrows() {
        let mut row = vec![labels[i].clone()];
        for j in 0..values.ncols() {
            row.push(format!("{}", values[(i, j)]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a square labelled matrix written by [`write_matrix_csv`] and
/// validates symmetry.
pub fn read_matrix_csv(path: &Path) -> Result<(SymmetricMatrix, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers = reader.headers()?.clone();
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut values = DMatrix::zeros(n, n);
    let mut count = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if i >= n || record.len() != n + 1 {
            return Err(Error::InvalidInput(format!(
                "{}: expected {n} rows of {n} values",
                path.display()
            )));
        }
        for (j, field) in record.iter().skip(1).enumerate() {
            values[(i, j)] = field.trim().parse::<f64>().map_err(|e| {
                Error::InvalidInput(format!("{}: bad entry '{field}': {e}", path.display()))
            })?;
        }
        count += 1;
    }
    if count != n {
        return Err(Error::InvalidInput(format!(
            "{}: expected {n} rows, got {count}",
            path.display()
        )));
    }
    Ok((SymmetricMatrix::new(values)?, labels))
}

/// Writes `(asset_id, weight)` pairs.
pub fn write_weights_csv(path: &Path, labels: &[String], weights: &[f64]) -> Result<()> {
    if labels.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} labels for {} weights",
            labels.len(),
            weights.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["asset_id", "weight"])?;
    for (label, weight) in labels.iter().zip(weights) {
        w.write_record([label.as_str(), &format!("{weight}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one JSON record per line.
pub fn write_records_ndjson(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Reads records written by [`write_records_ndjson`].
pub fn read_records_ndjson(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Writes the aggregate table produced by [`crate::harness::summarize`].
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t_in",
        "method",
        "metric",
        "count",
        "na_count",
        "mean",
        "median",
        "bahc_win_fraction",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.t_in.to_string(),
            r.method.clone(),
            r.metric.clone(),
            r.count.to_string(),
            r.na_count.to_string(),
            opt(r.mean),
            opt(r.median),
            opt(r.bahc_win_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}
