//! Recording CSV: `trial,time_s,theta_h_deg,theta_v_deg`, one row per
//! sample, trials stored contiguously. Line numbers in errors count the
//! header as line 1.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{RawRecording, Trial};
use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["trial", "time_s", "theta_h_deg", "theta_v_deg"];

fn ingest(location: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Ingest {
        location: location.into(),
        reason: reason.into(),
    }
}

/// Reads a recording file.
pub fn read_recording(path: &Path, sample_rate: f64, subject: &str) -> Result<RawRecording> {
    let file = File::open(path).map_err(|e| ingest(path.display().to_string(), e.to_string()))?;
    read_recording_from(file, sample_rate, subject).map_err(|e| match e {
        Error::Ingest { location, reason } => {
            ingest(format!("{}: {location}", path.display()), reason)
        }
        other => other,
    })
}

/// Parses a recording from any reader.
pub fn read_recording_from<R: Read>(
    reader: R,
    sample_rate: f64,
    subject: &str,
) -> Result<RawRecording> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = csv
        .headers()
        .map_err(|e| ingest("line 1", e.to_string()))?
        .clone();
    if let Some(bad) = header.iter().find(|h| !HEADER.contains(&h.trim())) {
        return Err(ingest("line 1", format!("unknown column '{bad}'")));
    }
    if header.len() != HEADER.len() || header.iter().zip(HEADER).any(|(h, e)| h.trim() != e) {
        return Err(ingest(
            "line 1",
            format!("expected header {}", HEADER.join(",")),
        ));
    }

    let mut trials: Vec<Trial> = Vec::new();
    for row in csv.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest(format!("line {line}"), e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let at = || format!("line {line}");
        let field = |i: usize| -> Result<&str> {
            let v = row.get(i).map(str::trim).unwrap_or("");
            if v.is_empty() {
                Err(ingest(at(), format!("empty field '{}'", HEADER[i])))
            } else {
                Ok(v)
            }
        };
        let id: u64 = field(0)?.parse().map_err(|_| {
            ingest(
                at(),
                format!("bad trial index '{}'", row.get(0).unwrap_or("")),
            )
        })?;
        let num = |i: usize| -> Result<f64> {
            let s = field(i)?;
            let v: f64 = s
                .parse()
                .map_err(|_| ingest(at(), format!("bad number '{s}' in '{}'", HEADER[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ingest(at(), format!("non-finite value in '{}'", HEADER[i])))
            }
        };
        let (t, h, v) = (num(1)?, num(2)?, num(3)?);

        match trials.last_mut() {
            Some(cur) if cur.id == id => {
                if !(t > *cur.time.last().expect("trial has a sample")) {
                    return Err(ingest(
                        at(),
                        format!("time {t} does not increase within trial {id}"),
                    ));
                }
                cur.time.push(t);
                cur.horizontal.push(h);
                cur.vertical.push(v);
            }
            _ => {
                if trials.iter().any(|tr| tr.id == id) {
                    return Err(ingest(
                        at(),
                        format!("trial {id} is not stored contiguously"),
                    ));
                }
                trials.push(Trial {
                    id,
                    time: vec![t],
                    horizontal: vec![h],
                    vertical: vec![v],
                    target: None,
                });
            }
        }
    }
    let rec = RawRecording {
        sample_rate,
        subject: subject.to_string(),
        trials,
    };
    rec.validate()?;
    Ok(rec)
}

/// Writes a recording file.
pub fn write_recording(path: &Path, rec: &RawRecording) -> Result<()> {
    let file = File::create(path)?;
    write_recording_to(file, rec)
}

/// Serializes a recording; floats use the shortest round-trip representation.
pub fn write_recording_to<W: Write>(writer: W, rec: &RawRecording) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    out.write_record(HEADER).map_err(io)?;
    for trial in &rec.trials {
        for k in 0..trial.len() {
            out.write_record([
                trial.id.to_string(),
                format!("{}", trial.time[k]),
                format!("{}", trial.horizontal[k]),
                format!("{}", trial.vertical[k]),
            ])
            .map_err(io)?;
        }
    }
    out.flush()?;
    Ok(())
}
