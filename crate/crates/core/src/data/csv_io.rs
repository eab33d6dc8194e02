//! Gridded-sample CSV: `lat, lon, label, ls_t{t}_b{band}…, bio01…bio19`.
//! An empty observation cell marks a missing (e.g. cloud-covered) value.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::classes::{is_known_class, CURATED_CLASSES};
use super::{curate_classes, Dataset, Provenance, Schema};
use crate::error::{Error, Result};

/// A parsed row before class curation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub lat: f64,
    pub lon: f64,
    pub label: String,
    pub timeseries: Vec<f64>,
    pub missing: Vec<bool>,
    pub climate: Vec<f64>,
}

pub fn csv_header(schema: &Schema) -> Vec<String> {
    let mut cols = vec!["lat".to_string(), "lon".to_string(), "label".to_string()];
    for t in 0..schema.timepoints {
        for name in &schema.channel_names {
            cols.push(format!("ls_t{t}_{}", name.to_lowercase()));
        }
    }
    cols.extend(schema.climate_names.iter().cloned());
    cols
}

/// Parse rows against `schema`. Labels must be recognized land-cover names.
pub fn parse_csv<R: Read>(input: R, schema: &Schema, source: &Path) -> Result<Vec<RawSample>> {
    let header = csv_header(schema);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };

    let mut records = reader.records();
    let first = records
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?
        .map_err(|e| parse_err(1, e.to_string()))?;
    let got: Vec<&str> = first.iter().map(str::trim).collect();
    if got != header {
        let at = got.iter().zip(&header).position(|(a, b)| a != b);
        let message = match at {
            Some(i) => format!("header column {} is '{}', expected '{}'", i + 1, got[i], header[i]),
            None => format!("header has {} columns, expected {}", got.len(), header.len()),
        };
        return Err(parse_err(1, message));
    }

    let cells = schema.cells();
    let d = schema.climate_dim();
    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| parse_err(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        let num = |col: usize| -> Result<f64> {
            let field = rec[col].trim();
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("column '{}': cannot parse '{field}' as a number", header[col])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column '{}': non-finite value", header[col])));
            }
            Ok(v)
        };
        let lat = num(0)?;
        let lon = num(1)?;
        let label = rec[2].trim().to_string();
        if !is_known_class(&label) {
            return Err(parse_err(line, format!("unknown label '{label}'")));
        }
        let mut timeseries = Vec::with_capacity(cells);
        let mut missing = Vec::with_capacity(cells);
        for col in 3..3 + cells {
            if rec[col].trim().is_empty() {
                timeseries.push(0.0);
                missing.push(true);
            } else {
                timeseries.push(num(col)?);
                missing.push(false);
            }
        }
        let climate = (3 + cells..3 + cells + d).map(num).collect::<Result<Vec<_>>>()?;
        out.push(RawSample {
            lat,
            lon,
            label,
            timeseries,
            missing,
            climate,
        });
    }
    Ok(out)
}

/// Read a Landsat-schema CSV, keep the curated crop classes and impute
/// missing observation cells. The number of imputed cells is reported in
/// [`Dataset::imputed_cells`].
pub fn ingest_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let schema = Schema::landsat();
    let raw = parse_csv(file, &schema, path)?;
    if raw.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    curate_classes(
        raw,
        &CURATED_CLASSES,
        schema,
        Provenance::Ingested {
            source: path.display().to_string(),
        },
    )
}

/// Write `dataset` in the CSV schema. Missing cells are written empty; all
/// other values use the shortest round-tripping decimal form.
pub fn write_csv<W: Write>(dataset: &Dataset, output: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(output);
    let to_err = |e: csv::Error| Error::Data(format!("csv write failed: {e}"));
    w.write_record(csv_header(&dataset.schema)).map_err(to_err)?;
    let mut row: Vec<String> = Vec::new();
    for s in &dataset.samples {
        row.clear();
        row.push(s.lat.to_string());
        row.push(s.lon.to_string());
        row.push(dataset.classes[s.label].clone());
        for (v, miss) in s.timeseries.iter().zip(&s.missing) {
            row.push(if *miss { String::new() } else { v.to_string() });
        }
        row.extend(s.climate.iter().map(f64::to_string));
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("csv write failed: {e}")))
}
