use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::{Error, Result};

/// Column names of a long-format file. With `covariates` empty, every column
/// whose name starts with `x_` is a covariate, in header order.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub subject: String,
    pub index: String,
    pub response: String,
    pub covariates: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            subject: "subject_id".into(),
            index: "response_index".into(),
            response: "y".into(),
            covariates: Vec::new(),
        }
    }
}

struct Row {
    y: f64,
    x: Vec<f64>,
}

/// Reads `subject_id,response_index,y,x_1,...,x_q` rows in any order.
///
/// Subjects are ordered by ascending id (numerically when every id is an
/// integer), responses by ascending `response_index`.
pub fn load_long_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_long_csv(file, schema)
}

pub(crate) fn read_long_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column `{name}`"),
            })
    };
    let subject_col = col(&schema.subject)?;
    let index_col = col(&schema.index)?;
    let y_col = col(&schema.response)?;
    let covariate_names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .filter(|h| h.starts_with("x_"))
            .map(str::to_string)
            .collect()
    } else {
        schema.covariates.clone()
    };
    if covariate_names.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no covariate columns (expected x_1, ..., x_q)".into(),
        });
    }
    let x_cols = covariate_names
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<_>>>()?;

    let mut cells: BTreeMap<String, BTreeMap<i64, Row>> = BTreeMap::new();
    let mut indices = BTreeSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric value `{}` in column `{}`", field(c), &headers[c]),
            })
        };
        let subject = field(subject_col).to_string();
        let index: i64 = field(index_col).parse().map_err(|_| Error::Parse {
            line,
            message: format!("non-integer response index `{}`", field(index_col)),
        })?;
        let y = num(y_col)?;
        let x = x_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let slot = cells.entry(subject.clone()).or_default();
        if slot.insert(index, Row { y, x }).is_some() {
            return Err(Error::DuplicateKey {
                subject,
                index,
                line,
            });
        }
        indices.insert(index);
    }
    if cells.is_empty() {
        return Err(Error::InvalidDataset("no data rows".into()));
    }

    let mut ids: Vec<String> = cells.keys().cloned().collect();
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
    }
    let indices: Vec<i64> = indices.into_iter().collect();
    let n = ids.len();
    let m = indices.len();
    let q = covariate_names.len();
    let mut responses = DMatrix::zeros(n, m);
    let mut covariates = Vec::with_capacity(n);
    for (i, id) in ids.iter().enumerate() {
        let rows = &cells[id];
        let mut x = DMatrix::zeros(m, q);
        for (t, idx) in indices.iter().enumerate() {
            let row = rows.get(idx).ok_or_else(|| Error::IncompletePanel {
                subject: id.clone(),
                index: *idx,
            })?;
            responses[(i, t)] = row.y;
            for c in 0..q {
                x[(t, c)] = row.x[c];
            }
        }
        covariates.push(x);
    }
    Dataset::new(ids, responses, covariates, covariate_names)
}

/// Long-format rendering readable by [`load_long_csv`] with the dataset's
/// covariate names as schema. Response indices are 1-based; values are
/// written with shortest round-trip precision.
pub fn render_long_csv(data: &Dataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["subject_id".to_string(), "response_index".into(), "y".into()];
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in data.subject_ids.iter().enumerate() {
        let x = &data.covariates[i];
        for t in 0..data.n_responses() {
            let mut row = vec![id.clone(), (t + 1).to_string(), format!("{:?}", data.responses[(i, t)])];
            row.extend((0..x.ncols()).map(|c| format!("{:?}", x[(t, c)])));
            w.write_record(&row)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_long_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, render_long_csv(data)?).map_err(|e| Error::io(path, e))
}
