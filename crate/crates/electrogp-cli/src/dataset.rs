//! CSV reading and writing for data matrices and prediction records.
//!
//! Training files are fully numeric: a header row followed by one row per
//! observation, no empty cells. Prediction-record files share the training
//! header but may leave cells empty to mark coordinates as missing.

use std::path::Path;

use nalgebra::DMatrix;

use crate::CliError;

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {}", path.display(), e)))
}

fn read_headers(rdr: &mut csv::Reader<std::fs::File>, path: &Path) -> Result<Vec<String>, CliError> {
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: bad header row: {}", path.display(), e)))?;
    let names: Vec<String> = headers.iter().map(|s| s.to_string()).collect();
    if names.is_empty() {
        return Err(CliError::Data(format!("{}: empty header row", path.display())));
    }
    Ok(names)
}

/// Reads a fully observed data matrix. Every cell must parse as a finite
/// real; violations are reported with their 1-based data row and the column
/// name from the header.
pub fn read_matrix(path: &Path) -> Result<(DMatrix<f64>, Vec<String>), CliError> {
    let mut rdr = open_reader(path)?;
    let names = read_headers(&mut rdr, path)?;
    let d = names.len();

    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record
            .map_err(|e| CliError::Data(format!("{}: row {}: {}", path.display(), row, e)))?;
        if record.len() != d {
            return Err(CliError::Data(format!(
                "{}: row {}: expected {} fields, found {}",
                path.display(),
                row,
                d,
                record.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v = parse_cell(field).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: row {}, column {}: cannot parse {:?} as a finite number",
                    path.display(),
                    row,
                    names[j],
                    field
                ))
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok((DMatrix::from_row_slice(n, d, &values), names))
}

/// One prediction-input row: a parsed cell per column, None where empty.
pub type Record = Vec<Option<f64>>;

/// Reads prediction records: same header as the training file, empty cells
/// mark missing coordinates. Each row must leave at least one cell filled.
pub fn read_records(path: &Path) -> Result<(Vec<Record>, Vec<String>), CliError> {
    let mut rdr = open_reader(path)?;
    let names = read_headers(&mut rdr, path)?;
    let d = names.len();

    let mut records: Vec<Record> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record
            .map_err(|e| CliError::Data(format!("{}: row {}: {}", path.display(), row, e)))?;
        if record.len() != d {
            return Err(CliError::Data(format!(
                "{}: row {}: expected {} fields, found {}",
                path.display(),
                row,
                d,
                record.len()
            )));
        }
        let mut cells: Record = Vec::with_capacity(d);
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                cells.push(None);
                continue;
            }
            let v = parse_cell(field).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: row {}, column {}: cannot parse {:?} as a finite number",
                    path.display(),
                    row,
                    names[j],
                    field
                ))
            })?;
            cells.push(Some(v));
        }
        if cells.iter().all(|c| c.is_none()) {
            return Err(CliError::Data(format!(
                "{}: row {}: every field is empty",
                path.display(),
                row
            )));
        }
        records.push(cells);
    }
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok((records, names))
}

fn parse_cell(field: &str) -> Option<f64> {
    let v: f64 = field.parse().ok()?;
    v.is_finite().then_some(v)
}

/// Writes a matrix as headered CSV. Values are printed in the shortest
/// representation that reparses to the same f64 bits, so a written file read
/// back yields a checksum-identical matrix.
pub fn write_matrix(path: &Path, headers: &[String], data: &DMatrix<f64>) -> Result<(), CliError> {
    assert_eq!(headers.len(), data.ncols());
    let mut wtr = csv::Writer::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e)))?;
    write_rows(&mut wtr, path, headers, data)
}

fn write_rows(
    wtr: &mut csv::Writer<std::fs::File>,
    path: &Path,
    headers: &[String],
    data: &DMatrix<f64>,
) -> Result<(), CliError> {
    let io_err = |e: csv::Error| CliError::Usage(format!("cannot write {}: {}", path.display(), e));
    wtr.write_record(headers).map_err(io_err)?;
    let mut fields: Vec<String> = Vec::with_capacity(headers.len());
    for i in 0..data.nrows() {
        fields.clear();
        for j in 0..data.ncols() {
            fields.push(format!("{}", data[(i, j)]));
        }
        wtr.write_record(&fields).map_err(io_err)?;
    }
    wtr.flush()
        .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e)))?;
    Ok(())
}

/// Path of the truth sidecar written next to a simulated dataset:
/// `dir/name.csv` gains `dir/name_truth.csv`.
pub fn truth_sidecar_path(out: &Path) -> std::path::PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string());
    out.with_file_name(format!("{}_truth.csv", stem))
}
