use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::{fit_schema, preprocess, rating_index, FeatureSchema, ProcessedRecord, RawRecord, RATINGS};
use crate::error::{Error, Result};

const LABEL_COLUMN: &str = "rating";
const ID_COLUMN: &str = "id";
const LABEL_INDEX_COLUMN: &str = "label_index";

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// Parses raw records. A column is numeric when every non-empty cell parses
/// as a number; otherwise it is categorical.
pub fn read_csv(reader: impl Read) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error(&e, 1))?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_col = headers
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| Error::Validation(format!("missing {LABEL_COLUMN:?} column")))?;
    let id_col = headers.iter().position(|h| h == ID_COLUMN);

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| parse_error(&e, n + 2))?;
        let line = row.position().map_or(n + 2, |p| p.line() as usize);
        rows.push((line, row.iter().map(str::to_owned).collect()));
    }

    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_col && Some(c) != id_col)
        .collect();
    let numeric: Vec<bool> = feature_cols
        .iter()
        .map(|&c| {
            rows.iter()
                .all(|(_, r)| r[c].is_empty() || r[c].parse::<f64>().is_ok())
        })
        .collect();

    let mut out = Vec::with_capacity(rows.len());
    for (i, (line, row)) in rows.into_iter().enumerate() {
        let label = row[label_col].clone();
        rating_index(&label).map_err(|_| {
            Error::Validation(format!("row {line}: unknown rating {label:?}"))
        })?;
        let mut rec = RawRecord {
            id: id_col.map_or_else(|| (i + 1).to_string(), |c| row[c].clone()),
            numeric: IndexMap::new(),
            categorical: IndexMap::new(),
            label,
        };
        for (&c, &is_num) in feature_cols.iter().zip(&numeric) {
            let cell = &row[c];
            let name = headers[c].clone();
            if is_num {
                let v = if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|e| Error::Parse {
                        row: line,
                        message: e.to_string(),
                    })?)
                };
                rec.numeric.insert(name, v);
            } else {
                let v = (!cell.is_empty()).then(|| cell.clone());
                rec.categorical.insert(name, v);
            }
        }
        out.push(rec);
    }
    Ok(out)
}

fn parse_error(e: &csv::Error, fallback_row: usize) -> Error {
    let row = e
        .position()
        .map_or(fallback_row, |p| p.line() as usize);
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

/// Writes `id`, numeric columns, categorical columns, then `rating`, using
/// the first record's feature order. Missing values become empty cells.
pub fn write_csv(records: &[RawRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = records.first() else {
        w.write_record([ID_COLUMN, LABEL_COLUMN])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        return Ok(());
    };
    let num_names: Vec<&String> = first.numeric.keys().collect();
    let cat_names: Vec<&String> = first.categorical.keys().collect();
    let mut header = vec![ID_COLUMN.to_owned()];
    header.extend(num_names.iter().map(|s| s.to_string()));
    header.extend(cat_names.iter().map(|s| s.to_string()));
    header.push(LABEL_COLUMN.to_owned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        for name in &num_names {
            let v = r.numeric.get(*name).copied().flatten();
            row.push(v.map(|v| v.to_string()).unwrap_or_default());
        }
        for name in &cat_names {
            let v = r.categorical.get(*name).cloned().flatten();
            row.push(v.unwrap_or_default());
        }
        row.push(r.label.clone());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Columns `f0..f{d-1}` then `label_index`.
pub fn write_processed_csv(records: &[ProcessedRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = records.first().map_or(0, |r| r.x.len());
    let mut header: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
    header.push(LABEL_INDEX_COLUMN.to_owned());
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = r.x.iter().map(f64::to_string).collect();
        row.push(r.label_index.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn load_processed_csv(path: impl AsRef<Path>) -> Result<Vec<ProcessedRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_processed(file)
}

fn read_processed(reader: impl Read) -> Result<Vec<ProcessedRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_error(&e, 1))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == LABEL_INDEX_COLUMN)
        .ok_or_else(|| Error::Validation(format!("missing {LABEL_INDEX_COLUMN:?} column")))?;
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| parse_error(&e, n + 2))?;
        let line = n + 2;
        let mut x = Vec::with_capacity(row.len() - 1);
        let mut label_index = 0;
        for (c, cell) in row.iter().enumerate() {
            if c == label_col {
                label_index = cell.parse::<usize>().map_err(|e| Error::Parse {
                    row: line,
                    message: format!("label_index {cell:?}: {e}"),
                })?;
                if label_index >= RATINGS.len() {
                    return Err(Error::Validation(format!(
                        "row {line}: label_index {label_index} out of range"
                    )));
                }
            } else {
                x.push(cell.parse::<f64>().map_err(|e| Error::Parse {
                    row: line,
                    message: format!("{cell:?}: {e}"),
                })?);
            }
        }
        out.push(ProcessedRecord { x, label_index });
    }
    Ok(out)
}

/// Records plus their identifiers, from either a raw or a processed CSV.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub ids: Vec<String>,
    pub records: Vec<ProcessedRecord>,
    /// Schema used to encode raw input; `None` for processed input.
    pub schema: Option<FeatureSchema>,
}

/// Loads a processed CSV (has a `label_index` column) as is, or a raw CSV
/// encoded with `schema` (fitted on the file itself when `None`).
pub fn load_dataset(
    path: impl AsRef<Path>,
    schema: Option<&FeatureSchema>,
    missing_drop_fraction: f64,
) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let first_line = text.lines().next().unwrap_or_default();
    let is_processed = first_line
        .split(',')
        .any(|h| h.trim() == LABEL_INDEX_COLUMN);
    if is_processed {
        let records = read_processed(text.as_bytes())?;
        let ids = (1..=records.len()).map(|i| i.to_string()).collect();
        return Ok(LoadedDataset {
            ids,
            records,
            schema: None,
        });
    }
    let raw = read_csv(text.as_bytes())?;
    let schema = match schema {
        Some(s) => s.clone(),
        None => fit_schema(&raw, missing_drop_fraction)?,
    };
    let records = raw
        .iter()
        .map(|r| preprocess(r, &schema))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        ids: raw.into_iter().map(|r| r.id).collect(),
        records,
        schema: Some(schema),
    })
}
