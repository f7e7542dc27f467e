use std::path::Path;

use super::{FeatureKind, FeatureSchema, RawExample, RawValue};
use crate::error::{Error, Result};

/// Loads a UTF-8, comma-separated file with a header row. Every schema
/// column must appear in the header; extra columns are ignored. Rows come
/// back in file order. Malformed rows are reported with their line number.
pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<Vec<RawExample>> {
    schema.validate()?;
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io {
        path: display.clone(),
        source: std::io::Error::other(e),
    })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?} in {display}")))
    };
    let feature_cols: Vec<usize> = schema
        .features
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<_>>()?;
    let label_col = column(&schema.label)?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Schema(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| Error::CsvRow {
            path: display.clone(),
            line,
            message,
        };

        let mut values = Vec::with_capacity(schema.features.len());
        for (f, &col) in schema.features.iter().zip(&feature_cols) {
            let raw = record
                .get(col)
                .ok_or_else(|| row_err(format!("row too short for column {:?}", f.name)))?;
            values.push(match f.kind {
                FeatureKind::Categorical => RawValue::Categorical(raw.to_string()),
                FeatureKind::Continuous => {
                    let v: f64 = raw.trim().parse().map_err(|_| {
                        row_err(format!("cannot parse {raw:?} as number for {:?}", f.name))
                    })?;
                    if !v.is_finite() {
                        return Err(row_err(format!("non-finite value for {:?}", f.name)));
                    }
                    RawValue::Continuous(v)
                }
            });
        }

        let raw_label = record
            .get(label_col)
            .ok_or_else(|| row_err("row too short for label".into()))?;
        let label: f64 = raw_label
            .trim()
            .parse()
            .map_err(|_| row_err(format!("cannot parse label {raw_label:?}")))?;
        if !label.is_finite() {
            return Err(row_err("label is not finite".into()));
        }
        if label < 0.0 {
            return Err(row_err(format!("label must be >= 0, got {label}")));
        }
        rows.push(RawExample { values, label });
    }
    Ok(rows)
}

/// Writes rows back in the same CSV format `load_csv` reads. Floats print
/// in shortest round-trip form, so identical data gives identical bytes.
pub fn write_csv(path: &Path, schema: &FeatureSchema, rows: &[RawExample]) -> Result<()> {
    let display = path.display().to_string();
    let io_err = |e: std::io::Error| Error::Io {
        path: display.clone(),
        source: e,
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| io_err(std::io::Error::other(e)))?;
    let mut header: Vec<&str> = schema.features.iter().map(|f| f.name.as_str()).collect();
    header.push(&schema.label);
    writer
        .write_record(&header)
        .map_err(|e| io_err(std::io::Error::other(e)))?;
    for row in rows {
        let mut record: Vec<String> = row
            .values
            .iter()
            .map(|v| match v {
                RawValue::Categorical(s) => s.clone(),
                RawValue::Continuous(x) => format!("{x}"),
            })
            .collect();
        record.push(format!("{}", row.label));
        writer
            .write_record(&record)
            .map_err(|e| io_err(std::io::Error::other(e)))?;
    }
    writer.flush().map_err(io_err)?;
    Ok(())
}
