use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClaimType, Demographics, Gender, PatientRecord, Visit, MAX_AGE, MAX_DATE};
use crate::error::{Error, Result};

/// One JSONL line as it appears on disk, before cleaning and validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPatient {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    #[serde(default)]
    pub visits: Vec<RawVisit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawVisit {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<i64>,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub claim_type: Option<String>,
    #[serde(default)]
    pub diag: Vec<String>,
    #[serde(default)]
    pub proc: Vec<String>,
    #[serde(default)]
    pub drug: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CleanOutcome {
    Kept(RawPatient),
    Rejected(String),
}

/// Applies the preprocessing rules: records without a patient id are
/// rejected, dateless visits are dropped, negative paid amounts become
/// zero, and surviving visits are stably sorted by date.
pub fn clean_record(raw: &RawPatient) -> CleanOutcome {
    if raw.patient_id.is_none() {
        return CleanOutcome::Rejected("missing patient_id".to_string());
    }
    let mut visits: Vec<RawVisit> = raw
        .visits
        .iter()
        .filter(|v| v.date.is_some())
        .cloned()
        .map(|mut v| {
            if let Some(c) = v.cost {
                if c < 0.0 {
                    v.cost = Some(0.0);
                }
            }
            v
        })
        .collect();
    visits.sort_by_key(|v| v.date);
    CleanOutcome::Kept(RawPatient {
        visits,
        ..raw.clone()
    })
}

impl RawPatient {
    pub fn from_record(record: &PatientRecord) -> Self {
        RawPatient {
            patient_id: Some(record.patient_id.clone()),
            age: Some(record.demographics.age_years as i64),
            gender: Some(record.demographics.gender.as_str().to_string()),
            visits: record
                .visits
                .iter()
                .map(|v| RawVisit {
                    date: Some(v.date as i64),
                    claim_type: Some(v.claim_type.as_str().to_string()),
                    diag: v.diag_codes.clone(),
                    proc: v.proc_codes.clone(),
                    drug: v.drug_codes.clone(),
                    cost: Some(v.cost),
                })
                .collect(),
        }
    }

    /// Validates a cleaned record. `line` is only used for error messages.
    pub fn validate(&self, line: usize) -> Result<PatientRecord> {
        let id = match &self.patient_id {
            Some(id) if !id.is_empty() => id.clone(),
            _ => return Err(Error::EmptyPatientId { line }),
        };
        let fail = |field: String, message: String| Error::Validation {
            patient_id: id.clone(),
            field,
            message,
        };
        let age = match self.age {
            Some(a) if (0..=MAX_AGE as i64).contains(&a) => a as u8,
            Some(a) => return Err(fail("age".into(), format!("{a} outside [0, {MAX_AGE}]"))),
            None => return Err(fail("age".into(), "missing".into())),
        };
        let gender = match self.gender.as_deref() {
            Some("F") => Gender::F,
            Some("M") => Gender::M,
            other => return Err(fail("gender".into(), format!("expected F or M, got {other:?}"))),
        };
        if self.visits.is_empty() {
            return Err(fail("visits".into(), "no visits".into()));
        }
        let mut visits = Vec::with_capacity(self.visits.len());
        for (i, v) in self.visits.iter().enumerate() {
            let field = |name: &str| format!("visits[{i}].{name}");
            let date = match v.date {
                Some(d) if (0..=MAX_DATE as i64).contains(&d) => d as u16,
                Some(d) => {
                    return Err(fail(field("date"), format!("{d} outside [0, {MAX_DATE}]")))
                }
                None => return Err(fail(field("date"), "missing".into())),
            };
            let claim_type = match v.claim_type.as_deref().and_then(ClaimType::parse) {
                Some(t) => t,
                None => {
                    return Err(fail(
                        field("type"),
                        format!("expected IP, OP or RX, got {:?}", v.claim_type),
                    ))
                }
            };
            let cost = match v.cost {
                Some(c) if c.is_finite() && c >= 0.0 => c,
                Some(c) => return Err(fail(field("cost"), format!("{c} is not a nonnegative amount"))),
                None => return Err(fail(field("cost"), "missing".into())),
            };
            for (name, codes) in [("diag", &v.diag), ("proc", &v.proc), ("drug", &v.drug)] {
                if codes.iter().any(|c| c.is_empty()) {
                    return Err(fail(field(name), "empty code string".into()));
                }
            }
            if v.diag.len() + v.proc.len() + v.drug.len() == 0 {
                return Err(fail(field("codes"), "visit carries no codes".into()));
            }
            if claim_type == ClaimType::RX && v.drug.is_empty() {
                return Err(fail(field("drug"), "RX visit without drug codes".into()));
            }
            if let Some(prev) = visits.last().map(|p: &Visit| p.date) {
                if date < prev {
                    return Err(fail(field("date"), "visits not sorted by date".into()));
                }
            }
            visits.push(Visit {
                date,
                claim_type,
                diag_codes: v.diag.clone(),
                proc_codes: v.proc.clone(),
                drug_codes: v.drug.clone(),
                cost,
            });
        }
        Ok(PatientRecord {
            patient_id: id,
            demographics: Demographics {
                age_years: age,
                gender,
            },
            visits,
        })
    }
}

/// Parses, cleans and validates JSONL text. Rejected records (no patient
/// id) are skipped; everything else that fails is an error.
pub fn parse_claims(text: &str) -> Result<Vec<PatientRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut rejected = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPatient = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let cleaned = match clean_record(&raw) {
            CleanOutcome::Kept(r) => r,
            CleanOutcome::Rejected(reason) => {
                log::debug!("line {line_no}: record removed ({reason})");
                rejected += 1;
                continue;
            }
        };
        let record = cleaned.validate(line_no)?;
        if !seen.insert(record.patient_id.clone()) {
            return Err(Error::DuplicatePatient(record.patient_id));
        }
        records.push(record);
    }
    if rejected > 0 {
        log::info!("{rejected} record(s) removed during cleaning");
    }
    Ok(records)
}

pub fn load_claims(path: impl AsRef<Path>) -> Result<Vec<PatientRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_claims(&text)
}

pub fn to_jsonl(records: &[PatientRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&RawPatient::from_record(r)).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_claims(records: &[PatientRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(visits: &str) -> String {
        let visits = visits.split_whitespace().collect::<Vec<_>>().join(" ");
        format!(r#"{{"patient_id": "p1", "age": 7, "gender": "F", "visits": [{visits}]}}"#)
    }

    #[test]
    fn loads_and_sorts_visits() {
        let text = line(
            r#"{"date": 40, "type": "OP", "diag": ["A"], "cost": 10.0},
               {"date": 3, "type": "RX", "drug": ["X"], "cost": 5.5}"#,
        );
        let recs = parse_claims(&text).unwrap();
        assert_eq!(recs.len(), 1);
        let dates: Vec<u16> = recs[0].visits.iter().map(|v| v.date).collect();
        assert_eq!(dates, vec![3, 40]);
    }

    #[test]
    fn same_day_visits_keep_input_order() {
        let text = line(
            r#"{"date": 9, "type": "OP", "diag": ["B"], "cost": 1.0},
               {"date": 2, "type": "OP", "diag": ["Z"], "cost": 1.0},
               {"date": 9, "type": "OP", "diag": ["A"], "cost": 1.0}"#,
        );
        let recs = parse_claims(&text).unwrap();
        let first: Vec<&str> = recs[0].visits.iter().map(|v| v.diag_codes[0].as_str()).collect();
        assert_eq!(first, vec!["Z", "B", "A"]);
    }

    #[test]
    fn empty_patient_id_is_a_validation_error() {
        let err = parse_claims(r#"{"patient_id": ""}"#).unwrap_err();
        assert!(err.to_string().contains("empty patient_id"), "{err}");
    }

    #[test]
    fn negative_cost_is_clamped() {
        let text = line(r#"{"date": 1, "type": "OP", "diag": ["A"], "cost": -12.5}"#);
        let recs = parse_claims(&text).unwrap();
        assert_eq!(recs[0].visits[0].cost, 0.0);
    }

    #[test]
    fn out_of_window_date_names_patient_and_field() {
        let text = line(r#"{"date": 400, "type": "OP", "diag": ["A"], "cost": 1.0}"#);
        match parse_claims(&text).unwrap_err() {
            Error::Validation {
                patient_id, field, ..
            } => {
                assert_eq!(patient_id, "p1");
                assert_eq!(field, "visits[0].date");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!(
            "{}\n{{not json\n",
            line(r#"{"date": 1, "type": "OP", "diag": ["A"], "cost": 1.0}"#)
        );
        match parse_claims(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn codeless_visit_and_drugless_rx_are_rejected() {
        let text = line(r#"{"date": 1, "type": "OP", "cost": 1.0}"#);
        assert!(matches!(parse_claims(&text), Err(Error::Validation { .. })));
        let text = line(r#"{"date": 1, "type": "RX", "diag": ["A"], "cost": 1.0}"#);
        assert!(matches!(parse_claims(&text), Err(Error::Validation { .. })));
    }

    #[test]
    fn missing_patient_id_is_removed_not_fatal() {
        let text = format!(
            "{}\n{}\n",
            r#"{"age": 3, "gender": "M", "visits": []}"#,
            line(r#"{"date": 1, "type": "OP", "diag": ["A"], "cost": 1.0}"#)
        );
        assert_eq!(parse_claims(&text).unwrap().len(), 1);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let l = line(r#"{"date": 1, "type": "OP", "diag": ["A"], "cost": 1.0}"#);
        let text = format!("{l}\n{l}\n");
        assert!(matches!(parse_claims(&text), Err(Error::DuplicatePatient(_))));
    }

    #[test]
    fn clean_drops_dateless_visits_and_clamps() {
        let raw: RawPatient = serde_json::from_str(&line(
            r#"{"type": "OP", "diag": ["A"], "cost": 3.0},
               {"date": 5, "type": "OP", "diag": ["B"], "cost": -1.0}"#,
        ))
        .unwrap();
        let CleanOutcome::Kept(c) = clean_record(&raw) else {
            panic!("rejected")
        };
        assert_eq!(c.visits.len(), 1);
        assert_eq!(c.visits[0].diag, vec!["B".to_string()]);
        assert_eq!(c.visits[0].cost, Some(0.0));
        let again = clean_record(&c);
        assert_eq!(again, CleanOutcome::Kept(c.clone()));
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            match again {
                CleanOutcome::Kept(r) => serde_json::to_string(&r).unwrap(),
                _ => unreachable!(),
            }
        );
    }
}
