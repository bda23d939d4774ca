//! CSV ingestion and the CSV outputs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mixhmm::{EventObservation, Family, Series, SeriesSet, Variable};

use crate::CliError;

const SERIES: &str = "series_id";
const INDEX: &str = "event_index";
const EXPOSED: &str = "exposed";

/// Formats a number with 17 significant digits; infinities as `inf`/`-inf`.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn fmt_value(family: Family, x: f64) -> String {
    match family {
        Family::Poisson => format!("{}", x as u64),
        _ => fmt_num(x),
    }
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

/// Reads a data file against a declared schema.
///
/// The header must hold `series_id`, `event_index`, `exposed` and one column
/// per variable, in any order. Series keep the order of their first row;
/// events are ordered by `event_index`, which must run 1, 2, ... without gaps.
pub fn ingest(path: &Path, schema: &[Variable]) -> Result<SeriesSet, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data_err(path, e))?;
    let header = reader.headers().map_err(|e| data_err(path, e))?.clone();

    let mut columns: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        let known = name == SERIES || name == INDEX || name == EXPOSED || schema.iter().any(|v| v.name == name);
        if !known {
            return Err(data_err(path, format!("unknown column '{name}'")));
        }
        if columns.insert(name, i).is_some() {
            return Err(data_err(path, format!("duplicate column '{name}'")));
        }
    }
    let col = |name: &str| columns.get(name).copied().ok_or_else(|| data_err(path, format!("missing column '{name}'")));
    let (c_series, c_index, c_exposed) = (col(SERIES)?, col(INDEX)?, col(EXPOSED)?);
    let c_vars = schema.iter().map(|v| col(&v.name)).collect::<Result<Vec<_>, _>>()?;

    // Per series: (event_index, row, event).
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, u64, EventObservation)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| data_err(path, e))?;
        let row = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(c_series).to_string();
        if id.is_empty() {
            return Err(data_err(path, format!("row {row}: empty series_id")));
        }
        let index: usize = field(c_index)
            .parse()
            .map_err(|_| data_err(path, format!("row {row}: invalid event_index '{}'", field(c_index))))?;
        let exposed = match field(c_exposed) {
            "0" => false,
            "1" => true,
            other => return Err(data_err(path, format!("row {row}: exposed must be 0 or 1, got '{other}'"))),
        };
        let mut values = Vec::with_capacity(schema.len());
        for (var, &c) in schema.iter().zip(&c_vars) {
            let text = field(c);
            if text.is_empty() {
                values.push(None);
                continue;
            }
            let x: f64 = text
                .parse()
                .map_err(|_| data_err(path, format!("row {row}: variable '{}' has non-numeric value '{text}'", var.name)))?;
            if !var.family.in_support(x) {
                return Err(data_err(
                    path,
                    format!("row {row}: value {text} of variable '{}' is out of support for the {} family", var.name, var.family.name()),
                ));
            }
            values.push(Some(x));
        }
        let events = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if let Some((_, first, _)) = events.iter().find(|(i, _, _)| *i == index) {
            return Err(data_err(path, format!("row {row}: duplicate event {index} of series '{id}' (first at row {first})")));
        }
        events.push((index, row, EventObservation::new(values, exposed)));
    }

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let mut events = rows.remove(&id).unwrap_or_default();
        events.sort_by_key(|(i, _, _)| *i);
        for (expected, (i, row, _)) in (1..).zip(&events) {
            if *i != expected {
                return Err(data_err(
                    path,
                    format!("row {row}: series '{id}' event_index {i} breaks the run 1, 2, ... (expected {expected})"),
                ));
            }
        }
        series.push(Series { id, events: events.into_iter().map(|(_, _, e)| e).collect() });
    }
    SeriesSet::new(schema.to_vec(), series).map_err(|e| data_err(path, e))
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let file = File::create(path).map_err(|e| data_err(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<(), CliError> {
    w.flush().map_err(|e| data_err(path, e))
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| data_err(path, e)
}

/// Writes a dataset in the ingestion format.
pub fn write_series(path: &Path, data: &SeriesSet) -> Result<(), CliError> {
    let mut w = create(path)?;
    let mut header = vec![SERIES.to_string(), INDEX.to_string()];
    header.extend(data.schema.iter().map(|v| v.name.clone()));
    header.push(EXPOSED.to_string());
    w.write_record(&header).map_err(io_err(path))?;
    for s in &data.series {
        for (d, e) in s.events.iter().enumerate() {
            let mut rec = vec![s.id.clone(), (d + 1).to_string()];
            rec.extend(
                e.values
                    .iter()
                    .zip(&data.schema)
                    .map(|(v, var)| v.map(|x| fmt_value(var.family, x)).unwrap_or_default()),
            );
            rec.push(if e.exposed { "1" } else { "0" }.to_string());
            w.write_record(&rec).map_err(io_err(path))?;
        }
    }
    finish(path, w)
}

/// Writes rows of pre-formatted fields under `header`.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_record(header).map_err(io_err(path))?;
    for r in rows {
        w.write_record(r).map_err(io_err(path))?;
    }
    finish(path, w)
}
