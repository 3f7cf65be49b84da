//! Claims schema, cleaning rules, vocabulary construction and visit encoding.

mod claims;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use claims::{
    clean_record, load_claims, parse_claims, to_jsonl, write_claims, CleanOutcome, RawPatient, RawVisit,
};
pub use vocab::{build_vocabulary, encode_visit, CategoryMap, CodeVocabulary, EncodedVisit};

/// Last admissible day offset within the one-year window.
pub const MAX_DATE: u16 = 365;
pub const MAX_AGE: u8 = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "DIAG")]
    Diag,
    #[serde(rename = "PROC")]
    Proc,
    #[serde(rename = "DRUG")]
    Drug,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Diag, Modality::Proc, Modality::Drug];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Diag => "DIAG",
            Modality::Proc => "PROC",
            Modality::Drug => "DRUG",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "DIAG" => Some(Modality::Diag),
            "PROC" => Some(Modality::Proc),
            "DRUG" => Some(Modality::Drug),
            _ => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Utilization token of a visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClaimType {
    IP,
    OP,
    RX,
}

impl ClaimType {
    pub const ALL: [ClaimType; 3] = [ClaimType::IP, ClaimType::OP, ClaimType::RX];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClaimType::IP => "IP",
            ClaimType::OP => "OP",
            ClaimType::RX => "RX",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "IP" => Some(ClaimType::IP),
            "OP" => Some(ClaimType::OP),
            "RX" => Some(ClaimType::RX),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MedicalCode {
    pub text: String,
    pub modality: Modality,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Visit {
    /// Day offset from the start of the enrollment year.
    pub date: u16,
    pub claim_type: ClaimType,
    pub diag_codes: Vec<String>,
    pub proc_codes: Vec<String>,
    pub drug_codes: Vec<String>,
    /// Paid amount in dollars.
    pub cost: f64,
}

impl Visit {
    pub fn codes(&self, modality: Modality) -> &[String] {
        match modality {
            Modality::Diag => &self.diag_codes,
            Modality::Proc => &self.proc_codes,
            Modality::Drug => &self.drug_codes,
        }
    }

    pub fn all_codes(&self) -> impl Iterator<Item = MedicalCode> + '_ {
        Modality::ALL.into_iter().flat_map(move |m| {
            self.codes(m).iter().map(move |c| MedicalCode {
                text: c.clone(),
                modality: m,
            })
        })
    }

    pub fn code_count(&self) -> usize {
        self.diag_codes.len() + self.proc_codes.len() + self.drug_codes.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Demographics {
    pub age_years: u8,
    pub gender: Gender,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub demographics: Demographics,
    /// Sorted ascending by date; same-day visits keep input order.
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    pub fn total_cost(&self) -> f64 {
        self.visits.iter().map(|v| v.cost).sum()
    }

    pub fn count_visits(&self, claim_type: ClaimType) -> usize {
        self.visits
            .iter()
            .filter(|v| v.claim_type == claim_type)
            .count()
    }

    pub fn cost_of(&self, claim_type: ClaimType) -> f64 {
        self.visits
            .iter()
            .filter(|v| v.claim_type == claim_type)
            .map(|v| v.cost)
            .sum()
    }
}
