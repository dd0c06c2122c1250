//! CSV layout: `patient_id,label,<code>_od,<code>_os,<code>_ie` for each
//! biomarker in schema order. Labels are 0/1 and N/A IE cells are empty.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{BiomarkerSchema, Dataset, EyeValues, Label, PatientRecord};
use crate::error::{Error, Result};

fn header(schema: &BiomarkerSchema) -> Vec<String> {
    let mut h = vec!["patient_id".to_string(), "label".to_string()];
    for b in schema.biomarkers() {
        for suffix in ["od", "os", "ie"] {
            h.push(format!("{}_{suffix}", b.code));
        }
    }
    h
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        column: 0,
        message: e.to_string(),
    }
}

pub fn write_csv<W: Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io = |e: csv::Error| Error::Protocol(format!("CSV write failed: {e}"));
    w.write_record(header(&d.schema)).map_err(io)?;
    for r in &d.records {
        let mut row = Vec::with_capacity(2 + 3 * r.values.len());
        row.push(r.patient_id.clone());
        row.push(r.label.as_u8().to_string());
        for v in &r.values {
            row.push(v.od.to_string());
            row.push(v.os.to_string());
            row.push(v.ie.map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Protocol(format!("CSV flush failed: {e}")))?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(d, std::io::BufWriter::new(file))
}

pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
    let schema = BiomarkerSchema::glaucoma();
    let expected = header(&schema);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rdr.records();

    let head = match rows.next() {
        None => {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "empty file, expected a header row".into(),
            })
        }
        Some(r) => r.map_err(csv_error)?,
    };
    for (i, want) in expected.iter().enumerate() {
        match head.get(i) {
            Some(got) if got == want => {}
            got => {
                return Err(Error::Parse {
                    line: 1,
                    column: i + 1,
                    message: format!("expected header `{want}`, found {got:?}"),
                })
            }
        }
    }
    if head.len() != expected.len() {
        return Err(Error::Parse {
            line: 1,
            column: expected.len() + 1,
            message: format!("unexpected extra header fields ({} total)", head.len()),
        });
    }

    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != expected.len() {
            return Err(Error::Parse {
                line,
                column: row.len().min(expected.len()) + 1,
                message: format!("expected {} fields, found {}", expected.len(), row.len()),
            });
        }
        let num = |col: usize| -> Result<f64> {
            let s = &row[col];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    column: col + 1,
                    message: format!("`{s}` is not a finite number"),
                })
        };
        let label = row[1]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| Error::Parse {
                line,
                column: 2,
                message: format!("label `{}` is not 0 or 1", &row[1]),
            })?;
        let mut values = Vec::with_capacity(schema.len());
        for (k, def) in schema.biomarkers().iter().enumerate() {
            let base = 2 + 3 * k;
            let od = num(base)?;
            let os = num(base + 1)?;
            let ie = if row[base + 2].is_empty() {
                None
            } else {
                Some(num(base + 2)?)
            };
            if ie.is_some() != def.has_ie {
                return Err(Error::Parse {
                    line,
                    column: base + 3,
                    message: format!(
                        "{}_ie must be {}",
                        def.code,
                        if def.has_ie { "present" } else { "empty (N/A)" }
                    ),
                });
            }
            values.push(EyeValues { od, os, ie });
        }
        let record = PatientRecord {
            patient_id: row[0].to_string(),
            label,
            values,
        };
        record
            .validate(&schema)
            .map_err(|message| Error::Validation { line, message })?;
        records.push(record);
    }
    Ok(Dataset { schema, records })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}
