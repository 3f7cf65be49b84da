use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `patient_id,c0,...,c{d-1}` with shortest round-trip float formatting.
pub fn embeddings_csv(ids: &[String], rows: &[Vec<f64>]) -> String {
    let d = rows.first().map_or(0, Vec::len);
    let mut out = String::from("patient_id");
    for j in 0..d {
        write!(out, ",c{j}").expect("write to string");
    }
    out.push('\n');
    for (id, row) in ids.iter().zip(rows) {
        out.push_str(id);
        for v in row {
            write!(out, ",{v}").expect("write to string");
        }
        out.push('\n');
    }
    out
}

pub fn parse_embeddings_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let width = header.split(',').count();
    if !header.starts_with("patient_id") || width < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "expected header patient_id,c0,...".into(),
        });
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let row = fields[1..]
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(fields[0].to_string());
        rows.push(row);
    }
    Ok((ids, rows))
}

pub fn write_embeddings(path: impl AsRef<Path>, ids: &[String], rows: &[Vec<f64>]) -> Result<()> {
    write(path.as_ref(), embeddings_csv(ids, rows))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    parse_embeddings_csv(&read(path.as_ref())?)
}

/// Cluster indices as label strings.
pub fn cluster_labels(assignments: &[usize]) -> Vec<String> {
    assignments.iter().map(usize::to_string).collect()
}

/// `patient_id<TAB>cluster` lines.
pub fn assignments_tsv(ids: &[String], clusters: &[String]) -> String {
    ids.iter().zip(clusters).map(|(id, c)| format!("{id}\t{c}\n")).collect()
}

pub fn write_assignments(path: impl AsRef<Path>, ids: &[String], clusters: &[String]) -> Result<()> {
    write(path.as_ref(), assignments_tsv(ids, clusters))
}

pub fn read_assignments(path: impl AsRef<Path>) -> Result<IndexMap<String, String>> {
    crate::synth::parse_labels(&read(path.as_ref())?)
}

/// `patient_id,x,y,label`.
pub fn plot_csv(ids: &[String], xy: &[Vec<f64>], labels: &[String]) -> String {
    let mut out = String::from("patient_id,x,y,label\n");
    for ((id, p), l) in ids.iter().zip(xy).zip(labels) {
        writeln!(out, "{id},{},{},{l}", p[0], p.get(1).copied().unwrap_or(0.0)).expect("write to string");
    }
    out
}

/// `k,wss`.
pub fn wss_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("k,wss\n");
    for (k, w) in curve {
        writeln!(out, "{k},{w}").expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_round_trip_exactly() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec![0.1, -2.5e-17], vec![1.0 / 3.0, 7.0]];
        let (i2, r2) = parse_embeddings_csv(&embeddings_csv(&ids, &rows)).unwrap();
        assert_eq!(i2, ids);
        assert_eq!(r2, rows);
    }

    #[test]
    fn ragged_row_is_rejected() {
        assert!(parse_embeddings_csv("patient_id,c0,c1\na,1,2\nb,1\n").is_err());
    }
}
