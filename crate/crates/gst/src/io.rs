//! Participant CSV files and plot-ready CSV output.

use std::io::{Read, Write};

use gst_core::trial::ParticipantRecord;
use serde::Serialize;

#[derive(Debug)]
pub enum IoError {
    Csv(csv::Error),
    Format(String),
}

impl std::fmt::Display for IoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IoError::Csv(e) => write!(f, "{e}"),
            IoError::Format(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for IoError {}

impl From<csv::Error> for IoError {
    fn from(e: csv::Error) -> Self {
        IoError::Csv(e)
    }
}

fn format(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

/// Writes `id,enroll_time,w1,...,wk,a,l,y`.
pub fn write_records<W: Write>(out: W, records: &[ParticipantRecord]) -> Result<(), IoError> {
    let k = records.first().map_or(0, |r| r.w.len());
    if records.iter().any(|r| r.w.len() != k) {
        return Err(format("records disagree on the number of baseline covariates"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "enroll_time".to_string()];
    header.extend((1..=k).map(|j| format!("w{j}")));
    header.extend(["a", "l", "y"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.to_string(), r.enroll_time.to_string()];
        row.extend(r.w.iter().map(f64::to_string));
        row.extend([r.a, r.l, r.y].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| IoError::Csv(e.into()))?;
    Ok(())
}

/// Reads a participant CSV; columns are located by name.
pub fn read_records<R: Read>(input: R) -> Result<Vec<ParticipantRecord>, IoError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name).ok_or_else(|| format(format!("missing column {name}")));
    let (id, t, a, l, y) = (col("id")?, col("enroll_time")?, col("a")?, col("l")?, col("y")?);
    let mut w_cols = Vec::new();
    while let Ok(c) = col(&format!("w{}", w_cols.len() + 1)) {
        w_cols.push(c);
    }
    if w_cols.is_empty() {
        return Err(format("no baseline covariate columns w1..wk"));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let bad = |c: usize| format(format!("row {}: cannot parse '{}'", line + 2, field(c)));
        let num = |c: usize| field(c).parse::<f64>().map_err(|_| bad(c));
        let bin = |c: usize| match field(c) {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad(c)),
        };
        let r = ParticipantRecord {
            id: field(id).parse().map_err(|_| bad(id))?,
            enroll_time: num(t)?,
            w: w_cols.iter().map(|&c| num(c)).collect::<Result<_, _>>()?,
            a: bin(a)?,
            l: bin(l)?,
            y: bin(y)?,
        };
        r.validate().map_err(|e| format(format!("row {}: {e}", line + 2)))?;
        out.push(r);
    }
    Ok(out)
}

/// Serializes rows with a header taken from the field names.
pub fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| IoError::Csv(e.into()))?;
    Ok(())
}
