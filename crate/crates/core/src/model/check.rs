//! End-to-end finite-difference check of the joint loss over every TMAE
//! parameter on a tiny fixed batch.

use rand::Rng as _;

use super::{ModelConfig, PreparedPatient, TmaeNet};
use crate::data::{build_vocabulary, CategoryMap, ClaimType, Demographics, Gender, Modality, PatientRecord, Visit};
use crate::embedding::{init_code_tables, CostBinner};
use crate::error::Result;
use crate::rng;
use crate::tensor::{grad_check, ParamSet};

/// Perturbation applied to every parameter before checking, which moves
/// max-pool comparisons off exact ties.
pub const JITTER: f64 = 1e-3;
pub const DEFAULT_EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates: usize,
    pub patients: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

/// Three patients with two to four visits each over a 13-code vocabulary.
pub fn fixture(seed: u64) -> (Vec<PatientRecord>, CategoryMap) {
    let mut rng = rng::stream(seed, "gradcheck-fixture");
    let sizes = [6usize, 4, 3];
    let mut categories = CategoryMap::new();
    for m in Modality::ALL {
        for i in 0..sizes[m.index()] {
            categories.insert(m, format!("{}{i}", m.as_str()), format!("cat{}", i % 3));
        }
    }
    let pick = |rng: &mut rng::Rng, m: Modality, n: usize| -> Vec<String> {
        let mut codes: Vec<String> = (0..n)
            .map(|_| format!("{}{}", m.as_str(), rng.random_range(0..sizes[m.index()])))
            .collect();
        codes.sort();
        codes.dedup();
        codes
    };
    let records = (0..3)
        .map(|p| {
            let n = 2 + p;
            let mut dates: Vec<u16> = (0..n).map(|_| rng.random_range(0..=365)).collect();
            dates.sort_unstable();
            let visits = dates
                .into_iter()
                .map(|date| {
                    let claim_type = ClaimType::ALL[rng.random_range(0..3)];
                    let (diag, proc, drug) = match claim_type {
                        ClaimType::RX => (vec![], vec![], pick(&mut rng, Modality::Drug, 2)),
                        _ => (pick(&mut rng, Modality::Diag, 3), pick(&mut rng, Modality::Proc, 1), vec![]),
                    };
                    Visit {
                        date,
                        claim_type,
                        diag_codes: diag,
                        proc_codes: proc,
                        drug_codes: drug,
                        cost: rng.random_range(20.0..900.0),
                    }
                })
                .collect();
            PatientRecord {
                patient_id: format!("g{p}"),
                demographics: Demographics {
                    age_years: rng.random_range(0..18),
                    gender: if p % 2 == 0 { Gender::F } else { Gender::M },
                },
                visits,
            }
        })
        .collect();
    (records, categories)
}

/// Runs the check for a `d`-wide model with `heads` heads on [`fixture`].
pub fn tmae_grad_check(cfg: &ModelConfig, seed: u64, eps: f64) -> Result<GradCheckReport> {
    cfg.validate()?;
    let (records, categories) = fixture(seed);
    let vocab = build_vocabulary(&records, &categories)?;
    let patients = records
        .iter()
        .map(|r| PreparedPatient::new(r, &vocab))
        .collect::<Result<Vec<_>>>()?;
    let costs: Vec<f64> = records.iter().flat_map(|r| r.visits.iter().map(|v| v.cost)).collect();
    // The batch has too few visits to fit 100 quantiles; bin against a
    // fixed grid spanning the fixture's cost range instead.
    let grid: Vec<f64> = (0..200).map(|i| i as f64 * 5.0).collect();
    let binner = CostBinner::fit(&grid)?;
    let cost_scale = costs.iter().sum::<f64>() / costs.len() as f64;
    let width = if cfg.use_category_concat { cfg.d / 2 } else { cfg.d };
    let tables = init_code_tables(&vocab, width, cfg.use_category_concat, seed);
    let mut params = ParamSet::new();
    let net = TmaeNet::register(&mut params, cfg, &vocab, tables, cost_scale, seed)?;
    let mut jitter = rng::stream(seed, "gradcheck-jitter");
    for p in params.iter_mut() {
        for v in p.value.data_mut() {
            *v += jitter.random_range(-JITTER..=JITTER);
        }
    }
    let batch: Vec<&PreparedPatient> = patients.iter().collect();
    let max_relative_error = grad_check(
        |tape| Ok(net.batch_loss(tape, &batch, &binner, None)?.total),
        &mut params,
        eps,
    )?;
    Ok(GradCheckReport {
        max_relative_error,
        coordinates: params.coordinate_count(),
        patients: patients.len(),
    })
}
