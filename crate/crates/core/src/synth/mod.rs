//! Labeled synthetic claims: cohort-level generation and the two
//! clustering benchmarks (four conditions, three cost tiers).

mod benchmarks;
mod blobs;

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::index::sample_weighted;
use rand::Rng as _;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};

pub use benchmarks::{
    condition_specs, cost_tier_specs, generate_condition_benchmark, generate_cost_tier_benchmark, generate_custom,
    generate_cost_tier_benchmark_with_counts, CustomBenchmark, CustomCohort, CONDITION_LABELS, COST_TIER_COUNTS,
    COST_TIER_LABELS, DEFAULT_PER_COHORT,
};
pub use blobs::planted_blobs;

use crate::data::{write_claims, CategoryMap, ClaimType, Demographics, Gender, Modality, PatientRecord, Visit, MAX_DATE};
use crate::error::{Error, Result};
use crate::rng;

/// Resampling budget per patient when enforcing an annual cost range.
pub const MAX_COST_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub code: String,
    pub weight: f64,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub label: String,
    /// Weighted code pools for DIAG, PROC and DRUG.
    pub code_pool: [Vec<PoolEntry>; 3],
    /// Inclusive range of visits per patient.
    pub visits_per_year: (usize, usize),
    /// Inclusive code-count ranges per modality. IP/OP visits draw DIAG and
    /// PROC codes (at least one DIAG); RX visits draw DRUG codes only (at
    /// least one).
    pub codes_per_visit: [(usize, usize); 3],
    /// Median dollars of a single visit before the claim-type factor.
    pub cost_median: f64,
    /// Log-scale standard deviation of visit costs.
    pub cost_dispersion: f64,
    /// Multiplier on visit cost for IP, OP and RX.
    pub claim_type_cost_factor: [f64; 3],
    /// Inclusive bounds on a patient's summed annual cost.
    pub annual_cost_range: Option<(f64, f64)>,
    /// Probabilities of IP, OP and RX.
    pub claim_type_mix: [f64; 3],
    /// Inclusive age range in years.
    pub age_range: (u8, u8),
    pub female_fraction: f64,
    /// Success probability of the geometric inter-visit gap.
    pub gap_p: f64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InfeasibleSpec {
            spec: self.label.clone(),
            message,
        };
        if self.label.is_empty() {
            return Err(Error::invalid("cohort spec label is empty"));
        }
        let mix: f64 = self.claim_type_mix.iter().sum();
        if (mix - 1.0).abs() > 1e-9 || self.claim_type_mix.iter().any(|p| *p < 0.0) {
            return Err(bad(format!("claim type mix sums to {mix}")));
        }
        let (lo, hi) = self.visits_per_year;
        if lo < 1 || lo > hi {
            return Err(bad(format!("visits_per_year [{lo}, {hi}] is empty or allows zero visits")));
        }
        for m in Modality::ALL {
            let (a, b) = self.codes_per_visit[m.index()];
            if a > b {
                return Err(bad(format!("{m} codes_per_visit [{a}, {b}] is empty")));
            }
            let pool = &self.code_pool[m.index()];
            if pool.iter().any(|e| !(e.weight > 0.0 && e.weight.is_finite()) || e.code.is_empty()) {
                return Err(bad(format!("{m} pool has an empty code or nonpositive weight")));
            }
            if pool.len() < b.max(1) {
                return Err(bad(format!("{m} pool has {} codes, fewer than {}", pool.len(), b.max(1))));
            }
        }
        if !(self.cost_median > 0.0 && self.cost_median.is_finite()) {
            return Err(bad("cost median must be positive".into()));
        }
        if !(self.cost_dispersion >= 0.0 && self.cost_dispersion.is_finite()) {
            return Err(bad("cost dispersion must be nonnegative".into()));
        }
        if self.claim_type_cost_factor.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(bad("claim type cost factors must be positive".into()));
        }
        if let Some((a, b)) = self.annual_cost_range {
            if !(a >= 0.0 && a <= b) {
                return Err(bad(format!("annual cost range [{a}, {b}] is empty")));
            }
        }
        let (a, b) = self.age_range;
        if a > b || b > crate::data::MAX_AGE {
            return Err(bad(format!("age range [{a}, {b}] invalid")));
        }
        if !(0.0..=1.0).contains(&self.female_fraction) {
            return Err(bad("female fraction outside [0, 1]".into()));
        }
        if !(self.gap_p > 0.0 && self.gap_p <= 1.0) {
            return Err(bad("gap_p must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Category of every pooled code.
    pub fn category_map(&self) -> CategoryMap {
        let mut map = CategoryMap::new();
        for m in Modality::ALL {
            for e in &self.code_pool[m.index()] {
                map.insert(m, e.code.clone(), e.category.clone());
            }
        }
        map
    }
}

fn draw_codes(rng: &mut rng::Rng, pool: &[PoolEntry], (lo, hi): (usize, usize), at_least_one: bool) -> Vec<String> {
    let n = rng.random_range(lo..=hi).max(usize::from(at_least_one));
    if n == 0 {
        return Vec::new();
    }
    let picked = sample_weighted(rng, pool.len(), |i| pool[i].weight, n).expect("validated positive weights");
    let mut codes: Vec<String> = picked.into_iter().map(|i| pool[i].code.clone()).collect();
    codes.sort();
    codes
}

/// Sorted dates in `[0, 365]` from geometric gaps rescaled to the year.
fn draw_dates(rng: &mut rng::Rng, n: usize, gap_p: f64) -> Vec<u16> {
    let geo = Geometric::new(gap_p).expect("validated gap_p");
    let gaps: Vec<f64> = (0..=n).map(|_| 1.0 + geo.sample(rng) as f64).collect();
    let span: f64 = gaps.iter().sum();
    let mut pos = 0.0;
    gaps[..n]
        .iter()
        .map(|g| {
            pos += g;
            ((pos / span) * f64::from(MAX_DATE)).floor().min(f64::from(MAX_DATE)) as u16
        })
        .collect()
}

fn round_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn draw_visits(spec: &CohortSpec, cost: &LogNormal<f64>, rng: &mut rng::Rng) -> Vec<Visit> {
    let n = rng.random_range(spec.visits_per_year.0..=spec.visits_per_year.1);
    let dates = draw_dates(rng, n, spec.gap_p);
    let pools = &spec.code_pool;
    let ranges = &spec.codes_per_visit;
    dates
        .into_iter()
        .map(|date| {
            let u: f64 = rng.random();
            let claim_type = if u < spec.claim_type_mix[0] {
                ClaimType::IP
            } else if u < spec.claim_type_mix[0] + spec.claim_type_mix[1] || spec.claim_type_mix[2] == 0.0 {
                ClaimType::OP
            } else {
                ClaimType::RX
            };
            let (diag_codes, proc_codes, drug_codes) = match claim_type {
                ClaimType::RX => (Vec::new(), Vec::new(), draw_codes(rng, &pools[2], ranges[2], true)),
                _ => (
                    draw_codes(rng, &pools[0], ranges[0], true),
                    draw_codes(rng, &pools[1], ranges[1], false),
                    Vec::new(),
                ),
            };
            let cost = round_cents(cost.sample(rng) * spec.claim_type_cost_factor[claim_type.index()]);
            Visit {
                date,
                claim_type,
                diag_codes,
                proc_codes,
                drug_codes,
                cost,
            }
        })
        .collect()
}

/// Draws demographics, then redraws the whole visit sequence until the
/// annual cost lands in range.
fn generate_patient(spec: &CohortSpec, id: String, rng: &mut rng::Rng) -> Result<PatientRecord> {
    let age_years = rng.random_range(spec.age_range.0..=spec.age_range.1);
    let gender = if rng.random_bool(spec.female_fraction) { Gender::F } else { Gender::M };
    let cost = LogNormal::new(spec.cost_median.ln(), spec.cost_dispersion).map_err(|e| Error::InfeasibleSpec {
        spec: spec.label.clone(),
        message: e.to_string(),
    })?;
    for _ in 0..MAX_COST_RESAMPLES {
        let visits = draw_visits(spec, &cost, rng);
        let total: f64 = visits.iter().map(|v| v.cost).sum();
        if spec.annual_cost_range.is_none_or(|(lo, hi)| (lo..=hi).contains(&total)) {
            return Ok(PatientRecord {
                patient_id: id,
                demographics: Demographics { age_years, gender },
                visits,
            });
        }
    }
    let (lo, hi) = spec.annual_cost_range.expect("range present when resampling fails");
    Err(Error::InfeasibleSpec {
        spec: spec.label.clone(),
        message: format!("annual cost range [{lo}, {hi}] not reached after {MAX_COST_RESAMPLES} resamples"),
    })
}

/// Generates `n` patients with ids `{label}-{i}`; patient `i` uses its own
/// stream derived from `(seed, label, i)`.
pub fn generate_cohort(spec: &CohortSpec, n: usize, seed: u64) -> Result<Vec<PatientRecord>> {
    if n == 0 {
        return Err(Error::invalid("cohort size must be at least 1"));
    }
    spec.validate()?;
    let stream_label = format!("cohort:{}", spec.label);
    (0..n)
        .map(|i| {
            let mut rng = rng::indexed_stream(seed, &stream_label, i as u64);
            generate_patient(spec, format!("{}-{i:04}", spec.label), &mut rng)
        })
        .collect()
}

/// Records with one ground-truth label each and the category map covering
/// every code.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub records: Vec<PatientRecord>,
    pub truth_labels: IndexMap<String, String>,
    pub category_map: CategoryMap,
}

pub const CLAIMS_FILE: &str = "claims.jsonl";
pub const LABELS_FILE: &str = "truth_labels.tsv";
pub const CATEGORIES_FILE: &str = "categories.tsv";

impl LabeledDataset {
    /// Concatenates cohorts and labels every record with its cohort label.
    pub fn from_cohorts(cohorts: Vec<(String, Vec<PatientRecord>)>, category_map: CategoryMap) -> Result<Self> {
        let mut records = Vec::new();
        let mut truth_labels = IndexMap::new();
        for (label, cohort) in cohorts {
            for r in cohort {
                if truth_labels.insert(r.patient_id.clone(), label.clone()).is_some() {
                    return Err(Error::DuplicatePatient(r.patient_id));
                }
                records.push(r);
            }
        }
        Ok(LabeledDataset {
            records,
            truth_labels,
            category_map,
        })
    }

    /// Distinct labels in order of first appearance.
    pub fn labels(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for l in self.truth_labels.values() {
            if !seen.contains(l) {
                seen.push(l.clone());
            }
        }
        seen
    }

    /// Label of each record as an index into [`Self::labels`].
    pub fn label_indices(&self) -> Vec<usize> {
        let labels = self.labels();
        self.records
            .iter()
            .map(|r| {
                let l = &self.truth_labels[&r.patient_id];
                labels.iter().position(|x| x == l).expect("known label")
            })
            .collect()
    }

    pub fn labels_tsv(&self) -> String {
        self.truth_labels
            .iter()
            .map(|(id, l)| format!("{id}\t{l}\n"))
            .collect()
    }

    /// Writes claims, truth labels and the category map into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_claims(&self.records, dir.join(CLAIMS_FILE))?;
        let labels = dir.join(LABELS_FILE);
        fs::write(&labels, self.labels_tsv()).map_err(|e| Error::io(&labels, e))?;
        self.category_map.write(dir.join(CATEGORIES_FILE))
    }
}

/// Parses `patient_id<TAB>label` lines.
pub fn parse_labels(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected patient_id<TAB>label".into(),
        })?;
        if out.insert(id.to_string(), label.to_string()).is_some() {
            return Err(Error::DuplicatePatient(id.to_string()));
        }
    }
    Ok(out)
}
