use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::generate::{OracleCohort, OracleRow, PatientRecord};
use super::schema::FeatureSchema;
use crate::{Arm, Error, Result};

/// Destination files for [`export_cohort`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortPaths {
    pub records: PathBuf,
    pub oracle: PathBuf,
}

impl CohortPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            records: dir.join("records.csv"),
            oracle: dir.join("oracle.jsonl"),
        }
    }
}

const MAX_REPORTED_ROWS: usize = 20;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn records_header(schema: &FeatureSchema) -> Vec<String> {
    let mut header = vec!["id".to_string()];
    header.extend(schema.names().iter().cloned());
    header.push("treatment".into());
    header.push("ne_t2_count".into());
    header
}

pub fn write_records(path: &Path, schema: &FeatureSchema, records: &[PatientRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(records_header(schema)).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = Vec::with_capacity(schema.len() + 3);
        row.push(r.id.to_string());
        row.extend(r.features.iter().map(|f| f.to_string()));
        row.push(r.arm.to_string());
        row.push(r.y.to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a records table, validating every row; all offending rows are listed in the error.
pub fn read_records(path: &Path) -> Result<(FeatureSchema, Vec<PatientRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 8
        || header[0] != "id"
        || header[header.len() - 2] != "treatment"
        || header[header.len() - 1] != "ne_t2_count"
    {
        return Err(Error::Data(format!(
            "{}: header must be id,<features>,treatment,ne_t2_count; got {}",
            path.display(),
            header.join(",")
        )));
    }
    let schema = FeatureSchema::from_names(header[1..header.len() - 2].to_vec())?;

    let mut records = Vec::new();
    let mut problems = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        match parse_record(&row, &schema) {
            Ok(r) => records.push(r),
            Err(msg) => problems.push(format!("row {}: {msg}", line + 2)),
        }
    }
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.id) {
            problems.push(format!("duplicate id {}", r.id));
        }
    }
    if !problems.is_empty() {
        let total = problems.len();
        problems.truncate(MAX_REPORTED_ROWS);
        return Err(Error::Data(format!(
            "{}: {total} invalid row(s): {}",
            path.display(),
            problems.join("; ")
        )));
    }
    Ok((schema, records))
}

fn parse_record(row: &csv::StringRecord, schema: &FeatureSchema) -> std::result::Result<PatientRecord, String> {
    if row.len() != schema.len() + 3 {
        return Err(format!("expected {} fields, found {}", schema.len() + 3, row.len()));
    }
    let id = row[0].parse::<u64>().map_err(|_| format!("bad id '{}'", &row[0]))?;
    let mut features = Vec::with_capacity(schema.len());
    for (name, raw) in schema.names().iter().zip(row.iter().skip(1)) {
        let v = raw.parse::<f64>().map_err(|_| format!("{name}: '{raw}' is not a number"))?;
        if !v.is_finite() {
            return Err(format!("{name}: non-finite value"));
        }
        features.push(v);
    }
    let arm = row[schema.len() + 1].parse::<Arm>().map_err(|e| e.to_string())?;
    let raw_y = &row[schema.len() + 2];
    let y = raw_y.parse::<i64>().map_err(|_| format!("ne_t2_count '{raw_y}' is not an integer"))?;
    if y < 0 {
        return Err(format!("ne_t2_count {y} is negative"));
    }
    Ok(PatientRecord { id, features, arm, y })
}

/// One JSON object per line: `{"id", "mu", "y_pot", "cate"}`, keyed by arm.
pub fn write_oracle(path: &Path, rows: &[OracleRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).expect("oracle rows serialise");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_oracle(path: &Path) -> Result<Vec<OracleRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: OracleRow = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes the oracle-free records table and the separate oracle table.
pub fn export_cohort(cohort: &OracleCohort, paths: &CohortPaths) -> Result<()> {
    write_records(&paths.records, &cohort.schema, &cohort.records)?;
    write_oracle(&paths.oracle, &cohort.oracle)
}
