//! End-to-end stratification benchmark: generate both synthetic tasks,
//! train the three model variants, embed, cluster and score against the
//! PCA baseline.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{build_vocabulary, Modality, PatientRecord};
use crate::embedding::embed_code;
use crate::error::{Error, Result};
use crate::eval::{calinski_harabasz, davies_bouldin, kmeans, pca_baseline, purity};
use crate::model::{ModelConfig, Variant};
use crate::synth::{generate_condition_benchmark, generate_cost_tier_benchmark_with_counts, LabeledDataset, COST_TIER_COUNTS, DEFAULT_PER_COHORT};
use crate::train::{train_variant, ModelState, TrainConfig};

/// Codes seen fewer than this many times count as rare.
pub const RARE_THRESHOLD: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub n_per_cohort: usize,
    pub tier_counts: [usize; 3],
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// PCA baseline on 0/1 presence instead of visit counts.
    pub pca_binary: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 7,
            n_per_cohort: DEFAULT_PER_COHORT,
            tier_counts: COST_TIER_COUNTS,
            model: ModelConfig::with_width(32, 4),
            train: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
            pca_binary: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = BenchmarkConfig::default();
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg
    }
}

/// Indices are computed against the ground-truth labels; purity compares
/// k-means clusters with them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodScore {
    pub method: String,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
    pub purity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskTable {
    pub task: usize,
    pub name: String,
    pub k: usize,
    pub rows: Vec<MethodScore>,
}

impl TaskTable {
    pub fn score(&self, method: &str) -> Option<&MethodScore> {
        self.rows.iter().find(|r| r.method == method)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub tasks: Vec<TaskTable>,
    /// Mean rare-code to category-centroid cosine under TMAE and P-TMAE.
    pub rare_code_similarity: Option<(f64, f64)>,
}

impl BenchmarkReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "seed {}", self.seed).expect("write to string");
        writeln!(out, "{:<8} {:>6} {:>12} {:>8} {:>8}", "method", "task", "C-H", "D-B", "purity").expect("write");
        for t in &self.tasks {
            for r in &t.rows {
                writeln!(
                    out,
                    "{:<8} {:>6} {:>12.3} {:>8.4} {:>8.4}",
                    r.method, t.task, r.calinski_harabasz, r.davies_bouldin, r.purity
                )
                .expect("write to string");
            }
        }
        if let Some((t, p)) = self.rare_code_similarity {
            writeln!(out, "rare-code cosine: TMAE {t:.4}  P-TMAE {p:.4}").expect("write to string");
        }
        out
    }
}

pub fn embed_records(state: &ModelState, records: &[PatientRecord]) -> Result<Vec<Vec<f64>>> {
    state.embed_all(records)
}

/// k-means with `k` clusters, purity against `truth`, and both indices on
/// the truth partition.
pub fn evaluate_embeddings(method: &str, points: &[Vec<f64>], truth: &[usize], k: usize, seed: u64) -> Result<MethodScore> {
    let clusters = kmeans(points, k, seed)?;
    Ok(MethodScore {
        method: method.to_string(),
        calinski_harabasz: calinski_harabasz(points, truth)?,
        davies_bouldin: davies_bouldin(points, truth)?,
        purity: purity(&clusters.assignments, truth)?,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine between each rare code's embedding row and the centroid of
/// the common codes sharing its category. Rare codes whose category has no
/// common code are skipped; returns the mean and the number of codes used.
pub fn rare_code_similarity(state: &ModelState, records: &[PatientRecord]) -> Result<(f64, usize)> {
    let vocab = &state.vocab;
    let mut counts: HashMap<(Modality, usize), usize> = HashMap::new();
    for r in records {
        for v in &r.visits {
            for code in v.all_codes() {
                let idx = vocab.index_of(code.modality, &code.text).ok_or_else(|| Error::UnknownCode {
                    code: code.text.clone(),
                    modality: code.modality.to_string(),
                })?;
                *counts.entry((code.modality, idx)).or_default() += 1;
            }
        }
    }
    let net = state.net();
    let mut rare = Vec::new();
    let mut common: HashMap<usize, Vec<Vec<f64>>> = HashMap::new();
    for m in Modality::ALL {
        for i in 0..vocab.size(m) {
            let cat = vocab.category_of(m, i).expect("index in range");
            let e = embed_code(&state.params, &net.tables, m, i, cat)?;
            let n = counts.get(&(m, i)).copied().unwrap_or(0);
            if n == 0 {
                continue;
            }
            if n < RARE_THRESHOLD {
                rare.push((cat, e));
            } else {
                common.entry(cat).or_default().push(e);
            }
        }
    }
    let mut total = 0.0;
    let mut used = 0;
    for (cat, e) in &rare {
        let Some(members) = common.get(cat) else { continue };
        let mut centroid = vec![0.0; e.len()];
        for m in members {
            for (c, x) in centroid.iter_mut().zip(m) {
                *c += x / members.len() as f64;
            }
        }
        total += cosine(e, &centroid);
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("no rare code shares a category with a common code"));
    }
    Ok((total / used as f64, used))
}

/// Trains each variant on `data` and scores it next to the PCA baseline.
/// Returns the table and the trained states in `variants` order.
pub fn run_task(
    task: usize,
    name: &str,
    data: &LabeledDataset,
    k: usize,
    variants: &[Variant],
    cfg: &BenchmarkConfig,
) -> Result<(TaskTable, Vec<ModelState>)> {
    let truth = data.label_indices();
    let vocab = build_vocabulary(&data.records, &data.category_map)?;
    let baseline = pca_baseline(&data.records, &vocab, cfg.model.d, cfg.pca_binary)?;
    let mut rows = vec![evaluate_embeddings("PCA", &baseline, &truth, k, cfg.seed)?];
    let mut states = Vec::new();
    for &variant in variants {
        log::info!("task {task}: training {variant}");
        let outcome = train_variant(variant, &data.records, &data.category_map, &cfg.model, &cfg.train)?;
        let points = embed_records(&outcome.state, &data.records)?;
        rows.push(evaluate_embeddings(variant.name(), &points, &truth, k, cfg.seed)?);
        states.push(outcome.state);
    }
    Ok((
        TaskTable {
            task,
            name: name.to_string(),
            k,
            rows,
        },
        states,
    ))
}

/// Both tasks, all three variants.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    let variants = [Variant::PTmae, Variant::CTmae, Variant::Tmae];
    let conditions = generate_condition_benchmark(cfg.n_per_cohort, cfg.seed)?;
    let (task1, states) = run_task(1, "conditions", &conditions, 4, &variants, cfg)?;
    let tmae = rare_code_similarity(&states[2], &conditions.records)?.0;
    let ptmae = rare_code_similarity(&states[0], &conditions.records)?.0;
    drop(states);
    let tiers = generate_cost_tier_benchmark_with_counts(cfg.tier_counts, cfg.seed)?;
    let (task2, _) = run_task(2, "cost-tiers", &tiers, 3, &variants, cfg)?;
    Ok(BenchmarkReport {
        seed: cfg.seed,
        tasks: vec![task1, task2],
        rare_code_similarity: Some((tmae, ptmae)),
    })
}
