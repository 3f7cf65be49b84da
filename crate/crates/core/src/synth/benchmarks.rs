use serde::{Deserialize, Serialize};

use super::{generate_cohort, CohortSpec, LabeledDataset, PoolEntry};
use crate::data::{CategoryMap, Modality};
use crate::error::{Error, Result};

pub const CONDITION_LABELS: [&str; 4] = ["asthma", "diabetes", "depression", "seizure"];
pub const COST_TIER_LABELS: [&str; 3] = ["high", "medium", "low"];
pub const DEFAULT_PER_COHORT: usize = 300;
pub const COST_TIER_COUNTS: [usize; 3] = [100, 500, 500];

const CATEGORIES: usize = 40;
const CATEGORIES_PER_COHORT: usize = CATEGORIES / CONDITION_LABELS.len();
/// (own codes per cohort, shared codes) for DIAG, PROC and DRUG. Four
/// cohorts give vocabularies of 200, 100 and 80 codes.
const POOL_LAYOUT: [(usize, usize); 3] = [(45, 20), (20, 20), (16, 16)];
const RARE_FRACTION: f64 = 0.1;
const RARE_WEIGHT_FACTOR: f64 = 0.01;

fn code_prefix(m: Modality) -> char {
    match m {
        Modality::Diag => 'D',
        Modality::Proc => 'P',
        Modality::Drug => 'R',
    }
}

fn category_name(i: usize) -> String {
    format!("C{i:02}")
}

/// Pool of cohort `c` for one modality: its own codes (mildly skewed
/// weights, categories from the cohort's block of ten) plus the shared
/// codes. The last tenth of the own codes is made 100x rarer.
fn cohort_pool(c: usize, m: Modality) -> Vec<PoolEntry> {
    let (own, shared) = POOL_LAYOUT[m.index()];
    let prefix = code_prefix(m);
    let n_cohorts = CONDITION_LABELS.len();
    let rare = ((own + shared) as f64 * RARE_FRACTION).round() as usize;
    let mut pool: Vec<PoolEntry> = (0..own)
        .map(|j| {
            let base = 1.0 / (1.0 + j as f64 / 10.0);
            let weight = if j >= own - rare { base * RARE_WEIGHT_FACTOR } else { base };
            PoolEntry {
                code: format!("{prefix}{:03}", c * own + j),
                weight,
                category: category_name(c * CATEGORIES_PER_COHORT + j % CATEGORIES_PER_COHORT),
            }
        })
        .collect();
    pool.extend((0..shared).map(|j| PoolEntry {
        code: format!("{prefix}{:03}", n_cohorts * own + j),
        weight: 0.8,
        category: category_name((j * 2 + 1) % CATEGORIES),
    }));
    pool
}

/// The four condition cohorts. Beyond their code pools they differ in
/// visit frequency, claim-type mix, cost level and age.
pub fn condition_specs() -> Vec<CohortSpec> {
    // (visits, mix IP/OP/RX, cost median, ages, female fraction)
    let shapes: [((usize, usize), [f64; 3], f64, (u8, u8), f64); 4] = [
        ((6, 14), [0.05, 0.60, 0.35], 120.0, (2, 17), 0.40),
        ((10, 18), [0.05, 0.35, 0.60], 90.0, (6, 18), 0.50),
        ((8, 16), [0.03, 0.67, 0.30], 150.0, (10, 18), 0.60),
        ((5, 12), [0.20, 0.50, 0.30], 200.0, (0, 18), 0.45),
    ];
    CONDITION_LABELS
        .iter()
        .zip(shapes)
        .enumerate()
        .map(|(c, (label, (visits, mix, median, ages, female)))| CohortSpec {
            label: label.to_string(),
            code_pool: Modality::ALL.map(|m| cohort_pool(c, m)),
            visits_per_year: visits,
            codes_per_visit: [(1, 3), (0, 2), (1, 2)],
            cost_median: median,
            cost_dispersion: 0.7,
            claim_type_cost_factor: [8.0, 1.0, 0.6],
            annual_cost_range: None,
            claim_type_mix: mix,
            age_range: ages,
            female_fraction: female,
            gap_p: 0.15,
        })
        .collect()
}

/// Three tiers over one shared code pool (the first condition's), with
/// identical visit counts and code-count ranges; they differ only in visit
/// cost distribution, claim-type mix and the enforced annual cost range.
pub fn cost_tier_specs() -> Vec<CohortSpec> {
    let base = condition_specs().swap_remove(0);
    // (mix IP/OP/RX, median, dispersion, annual range)
    let tiers: [([f64; 3], f64, f64, (f64, f64)); 3] = [
        ([0.30, 0.50, 0.20], 900.0, 0.6, (8000.01, 1e7)),
        ([0.05, 0.60, 0.35], 150.0, 0.5, (1000.0, 2000.0)),
        ([0.00, 0.60, 0.40], 35.0, 0.5, (100.0, 500.0)),
    ];
    COST_TIER_LABELS
        .iter()
        .zip(tiers)
        .map(|(label, (mix, median, dispersion, range))| CohortSpec {
            label: label.to_string(),
            visits_per_year: (10, 12),
            claim_type_mix: mix,
            cost_median: median,
            cost_dispersion: dispersion,
            claim_type_cost_factor: [4.0, 1.0, 0.5],
            annual_cost_range: Some(range),
            ..base.clone()
        })
        .collect()
}

fn merged_categories<'a>(specs: impl IntoIterator<Item = &'a CohortSpec>) -> Result<CategoryMap> {
    let mut map = CategoryMap::new();
    for spec in specs {
        for (m, code, cat) in spec.category_map().iter() {
            match map.get(m, code) {
                Some(existing) if existing != cat => {
                    return Err(Error::InfeasibleSpec {
                        spec: spec.label.clone(),
                        message: format!("{m} code {code} has categories {existing} and {cat}"),
                    })
                }
                Some(_) => {}
                None => map.insert(m, code, cat),
            }
        }
    }
    Ok(map)
}

fn assemble(specs: &[CohortSpec], counts: &[usize], seed: u64) -> Result<LabeledDataset> {
    let categories = merged_categories(specs)?;
    let cohorts = specs
        .iter()
        .zip(counts)
        .map(|(spec, &n)| Ok((spec.label.clone(), generate_cohort(spec, n, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::from_cohorts(cohorts, categories)
}

/// Four condition cohorts of `n_per_cohort` patients each.
pub fn generate_condition_benchmark(n_per_cohort: usize, seed: u64) -> Result<LabeledDataset> {
    if n_per_cohort < 2 {
        return Err(Error::invalid("condition benchmark needs at least 2 patients per cohort"));
    }
    let specs = condition_specs();
    assemble(&specs, &[n_per_cohort; 4], seed)
}

/// 100 high, 500 medium and 500 low cost patients.
pub fn generate_cost_tier_benchmark(seed: u64) -> Result<LabeledDataset> {
    generate_cost_tier_benchmark_with_counts(COST_TIER_COUNTS, seed)
}

pub fn generate_cost_tier_benchmark_with_counts(counts: [usize; 3], seed: u64) -> Result<LabeledDataset> {
    assemble(&cost_tier_specs(), &counts, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomCohort {
    pub spec: CohortSpec,
    pub n: usize,
}

/// User-supplied cohort list, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomBenchmark {
    pub cohorts: Vec<CustomCohort>,
}

pub fn generate_custom(bench: &CustomBenchmark, seed: u64) -> Result<LabeledDataset> {
    if bench.cohorts.is_empty() {
        return Err(Error::invalid("custom benchmark has no cohorts"));
    }
    let specs: Vec<CohortSpec> = bench.cohorts.iter().map(|c| c.spec.clone()).collect();
    let counts: Vec<usize> = bench.cohorts.iter().map(|c| c.n).collect();
    assemble(&specs, &counts, seed)
}
