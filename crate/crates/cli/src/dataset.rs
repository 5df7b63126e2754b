//! CSV dataset ingestion against a declared schema.
//!
//! The header row is mandatory. Indicator columns must be 0 or 1; outcome
//! values must be present exactly when the indicator is 1 and empty otherwise.
//! Violations are reported with the CSV line number.

use std::collections::HashMap;
use std::path::Path;

use mselect_core::{DVector, ObservationRecord, OutcomeDesign};

use crate::schema::{Col, Schema};

pub struct Dataset {
    pub records: Vec<ObservationRecord>,
    pub design: OutcomeDesign,
}

fn column_index(header: &HashMap<String, usize>, name: &str, path: &Path) -> Result<usize, String> {
    header
        .get(name)
        .copied()
        .ok_or_else(|| format!("{}: column '{name}' not found in header", path.display()))
}

fn parse_field(
    row: &csv::StringRecord,
    idx: usize,
    line: u64,
    name: &str,
    path: &Path,
) -> Result<f64, String> {
    let raw = row
        .get(idx)
        .ok_or_else(|| {
            format!(
                "{}:{line}: row too short for column '{name}'",
                path.display()
            )
        })?
        .trim();
    if raw.is_empty() {
        return Err(format!(
            "{}:{line}: column '{name}' is empty",
            path.display()
        ));
    }
    let v: f64 = raw.parse().map_err(|_| {
        format!(
            "{}:{line}: column '{name}' is not numeric: '{raw}'",
            path.display()
        )
    })?;
    if !v.is_finite() {
        return Err(format!(
            "{}:{line}: column '{name}' is not finite",
            path.display()
        ));
    }
    Ok(v)
}

/// Read and validate a dataset file against the schema.
pub fn read_dataset(path: &Path, schema: &Schema) -> Result<Dataset, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let header: HashMap<String, usize> = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), i))
        .collect();

    // Resolve all referenced columns up front.
    struct Resolved {
        value: usize,
        indicator: usize,
        x: Vec<Option<usize>>, // None = intercept
        w: Vec<Option<usize>>,
    }
    let mut resolved = Vec::with_capacity(schema.n_outcomes());
    for o in &schema.outcomes {
        let value = column_index(&header, &o.value, path)?;
        let indicator = column_index(&header, &o.indicator, path)?;
        let xcols =
            o.x.iter()
                .map(|c| match c {
                    Col::Intercept => Ok(None),
                    Col::Named(n) => column_index(&header, n, path).map(Some),
                })
                .collect::<Result<Vec<_>, _>>()?;
        let wcols =
            o.w.iter()
                .map(|c| match c {
                    Col::Intercept => Ok(None),
                    Col::Named(n) => column_index(&header, n, path).map(Some),
                })
                .collect::<Result<Vec<_>, _>>()?;
        resolved.push(Resolved {
            value,
            indicator,
            x: xcols,
            w: wcols,
        });
    }

    let mut records = Vec::new();
    for (rownum, row) in reader.records().enumerate() {
        let line = rownum as u64 + 2; // header is line 1
        let row = row.map_err(|e| format!("{}:{line}: {e}", path.display()))?;
        let mut xs = Vec::with_capacity(schema.n_outcomes());
        let mut ws = Vec::with_capacity(schema.n_outcomes());
        let mut cs = Vec::with_capacity(schema.n_outcomes());
        let mut ys = Vec::with_capacity(schema.n_outcomes());
        for (o, r) in schema.outcomes.iter().zip(&resolved) {
            let ind_raw = row
                .get(r.indicator)
                .ok_or_else(|| format!("{}:{line}: row too short", path.display()))?
                .trim();
            let c = match ind_raw {
                "0" => false,
                "1" => true,
                other => {
                    return Err(format!(
                        "{}:{line}: indicator '{}' must be 0 or 1, got '{other}'",
                        path.display(),
                        o.indicator
                    ))
                }
            };
            let val_raw = row.get(r.value).unwrap_or("").trim();
            let y = if c {
                if val_raw.is_empty() {
                    return Err(format!(
                        "{}:{line}: outcome '{}' selected but value is empty",
                        path.display(),
                        o.value
                    ));
                }
                Some(parse_field(&row, r.value, line, &o.value, path)?)
            } else {
                if !val_raw.is_empty() {
                    return Err(format!(
                        "{}:{line}: outcome '{}' not selected but value '{val_raw}' present",
                        path.display(),
                        o.value
                    ));
                }
                None
            };
            let xv: Vec<f64> =
                r.x.iter()
                    .enumerate()
                    .map(|(j, idx)| match idx {
                        None => Ok(1.0),
                        Some(i) => parse_field(&row, *i, line, &o.x[j].to_string(), path),
                    })
                    .collect::<Result<_, _>>()?;
            let wv: Vec<f64> =
                r.w.iter()
                    .enumerate()
                    .map(|(j, idx)| match idx {
                        None => Ok(1.0),
                        Some(i) => parse_field(&row, *i, line, &o.w[j].to_string(), path),
                    })
                    .collect::<Result<_, _>>()?;
            xs.push(DVector::from_column_slice(&xv));
            ws.push(DVector::from_column_slice(&wv));
            cs.push(c);
            ys.push(y);
        }
        let rec = ObservationRecord::new(xs, ws, cs, ys)
            .map_err(|e| format!("{}:{line}: {e}", path.display()))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    let design = OutcomeDesign::new(
        schema.outcomes.iter().map(|o| o.x.len()).collect(),
        schema.outcomes.iter().map(|o| o.w.len()).collect(),
    )
    .map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Dataset { records, design })
}
