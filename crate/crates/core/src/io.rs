//! File formats: scans and ground truth as JSON Lines, estimate traces as CSV.
//!
//! Every JSONL reader reports the 1-based line number of the first malformed
//! line. Blank lines are skipped. Observation indices in `a` are 0-based
//! positions in the scan of the same step.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::em::EstimateTrace;
use crate::error::{MttError, Result};
use crate::model::CvParam;
use crate::simulator::{AssociationRecord, GroundTruth, ObservationScan};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanLine {
    t: usize,
    y: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthLine {
    t: usize,
    c_s: Vec<bool>,
    c_d: Vec<bool>,
    k_b: usize,
    k_f: usize,
    a: Vec<usize>,
    x: Vec<[f64; 4]>,
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Parse non-blank lines as JSON, checking that the `t` fields run 1, 2, ….
fn read_lines<R: BufRead, T, F>(reader: R, mut t_of: F) -> Result<Vec<(usize, T)>>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(&T) -> usize,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(&line).map_err(|e| MttError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = out.len() + 1;
        if t_of(&value) != expected {
            return Err(MttError::Parse {
                line: line_no,
                message: format!("expected t={expected}, found t={}", t_of(&value)),
            });
        }
        out.push((line_no, value));
    }
    Ok(out)
}

pub fn write_scans<W: Write>(w: &mut W, scans: &[ObservationScan]) -> Result<()> {
    for s in scans {
        let y = s.points.iter().map(|p| [p[0], p[1]]).collect();
        write_line(w, &ScanLine { t: s.t, y })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scans<R: BufRead>(reader: R) -> Result<Vec<ObservationScan>> {
    Ok(read_lines(reader, |l: &ScanLine| l.t)?
        .into_iter()
        .map(|(_, l)| ObservationScan {
            t: l.t,
            points: l.y.iter().map(|p| DVector::from_column_slice(p)).collect(),
        })
        .collect())
}

pub fn write_truth<W: Write>(w: &mut W, truth: &GroundTruth) -> Result<()> {
    for (i, (z, xs)) in truth.records.iter().zip(&truth.states).enumerate() {
        let line = TruthLine {
            t: i + 1,
            c_s: z.c_s.clone(),
            c_d: z.c_d.clone(),
            k_b: z.k_b,
            k_f: z.k_f,
            a: z.a.clone(),
            x: xs.iter().map(|x| [x[0], x[1], x[2], x[3]]).collect(),
        };
        write_line(w, &line)?;
    }
    w.flush()?;
    Ok(())
}

/// Read ground truth; every record is checked against its own invariants and
/// against the target count it inherits from the previous line.
pub fn read_truth<R: BufRead>(reader: R) -> Result<GroundTruth> {
    let mut records = Vec::new();
    let mut states = Vec::new();
    let mut prev = 0;
    for (line, l) in read_lines(reader, |l: &TruthLine| l.t)? {
        let bad = |message: String| MttError::Parse { line, message };
        let z = AssociationRecord {
            c_s: l.c_s,
            c_d: l.c_d,
            k_b: l.k_b,
            k_f: l.k_f,
            a: l.a,
        };
        z.validate().map_err(|e| bad(e.to_string()))?;
        if z.k_x_prev() != prev {
            return Err(bad(format!(
                "c_s has {} entries but {prev} targets were alive",
                z.k_x_prev()
            )));
        }
        if l.x.len() != z.k_x() {
            return Err(bad(format!("{} states for {} targets", l.x.len(), z.k_x())));
        }
        prev = z.k_x();
        states.push(l.x.iter().map(|x| DVector::from_column_slice(x)).collect());
        records.push(z);
    }
    Ok(GroundTruth { records, states })
}

/// A float with 17 significant digits (round-trips exactly).
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// CSV header line of an estimate trace (without newline).
pub fn trace_header() -> String {
    let mut cols = vec!["index"];
    cols.extend(CvParam::ALL.iter().map(|p| p.name()));
    cols.push("loglik");
    cols.join(",")
}

pub fn write_trace<W: Write>(w: &mut W, trace: &EstimateTrace) -> Result<()> {
    writeln!(w, "{}", trace_header())?;
    for e in &trace.entries {
        let mut row = vec![e.index.to_string()];
        row.extend(CvParam::ALL.iter().map(|&p| format_float(e.theta.get(p))));
        row.push(e.loglik.map(format_float).unwrap_or_default());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
