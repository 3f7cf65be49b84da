//! Skip-gram with negative sampling over within-visit co-occurrence, used
//! to initialize the code and category tables.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use rand::Rng as _;

use super::uniform_table;
use crate::data::{encode_visit, CodeVocabulary, Modality, PatientRecord};
use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;

/// Code tables per modality and the optional category table.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeTables {
    pub codes: [Tensor; 3],
    pub categories: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 15,
            negatives: 5,
            learning_rate: 0.025,
        }
    }
}

/// Uniform `[-0.05, 0.05]` tables: `width` columns for codes, `width`
/// columns for categories when `with_categories`.
pub fn init_code_tables(vocab: &CodeVocabulary, width: usize, with_categories: bool, seed: u64) -> CodeTables {
    let mut rng = rng::stream(seed, "code-tables");
    let codes = Modality::ALL.map(|m| uniform_table(vocab.size(m), width, &mut rng));
    let categories = with_categories.then(|| uniform_table(vocab.category_count(), width, &mut rng));
    CodeTables { codes, categories }
}

/// Starts from [`init_code_tables`] and, for `epochs > 0`, trains code
/// vectors on co-occurring code pairs and category vectors on co-occurring
/// category pairs. The returned vector of a token is the sum of its input
/// and output vectors; output vectors start at zero, so zero epochs return
/// the initialization unchanged.
pub fn pretrain_code_embeddings(
    records: &[PatientRecord],
    vocab: &CodeVocabulary,
    width: usize,
    with_categories: bool,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<CodeTables> {
    let mut tables = init_code_tables(vocab, width, with_categories, seed);
    if cfg.epochs == 0 {
        return Ok(tables);
    }
    let offsets: Vec<usize> = Modality::ALL.iter().map(|&m| vocab.offset(m)).collect();
    let total = vocab.total_codes();
    let mut code_visits: Vec<Vec<usize>> = Vec::new();
    let mut cat_visits: Vec<Vec<usize>> = Vec::new();
    for r in records {
        for v in &r.visits {
            let e = encode_visit(v, vocab)?;
            let mut codes = Vec::new();
            let mut cats = Vec::new();
            for m in Modality::ALL {
                for &i in e.indices(m) {
                    codes.push(offsets[m.index()] + i);
                    cats.push(vocab.category_of(m, i).expect("encoded index"));
                }
            }
            cats.sort_unstable();
            cats.dedup();
            code_visits.push(codes);
            cat_visits.push(cats);
        }
    }

    // input vectors are the concatenated per-modality tables
    let mut input = vec![0.0; total * width];
    for m in Modality::ALL {
        let t = &tables.codes[m.index()];
        input[offsets[m.index()] * width..(offsets[m.index()] + vocab.size(m)) * width].copy_from_slice(t.data());
    }
    let trained = sgns(&code_visits, input, total, width, cfg, &mut rng::stream(seed, "pretrain-codes"));
    for m in Modality::ALL {
        let start = offsets[m.index()] * width;
        let end = start + vocab.size(m) * width;
        tables.codes[m.index()] = Tensor::matrix(vocab.size(m), width, trained[start..end].to_vec())?;
    }
    if let Some(cat_table) = tables.categories.take() {
        let n = vocab.category_count();
        let trained = sgns(
            &cat_visits,
            cat_table.into_data(),
            n,
            width,
            cfg,
            &mut rng::stream(seed, "pretrain-categories"),
        );
        tables.categories = Some(Tensor::matrix(n, width, trained)?);
    }
    Ok(tables)
}

fn sgns(
    visits: &[Vec<usize>],
    mut input: Vec<f64>,
    vocab_size: usize,
    width: usize,
    cfg: &PretrainConfig,
    rng: &mut rng::Rng,
) -> Vec<f64> {
    let mut pairs = Vec::new();
    let mut counts = vec![0.0f64; vocab_size];
    for v in visits {
        for &a in v {
            counts[a] += 1.0;
            for &b in v {
                if a != b {
                    pairs.push((a, b));
                }
            }
        }
    }
    if pairs.is_empty() {
        return input;
    }
    // unigram^0.75 cumulative table for negative draws
    let mut cumulative = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for c in &counts {
        acc += c.powf(0.75);
        cumulative.push(acc);
    }
    let mut output = vec![0.0; vocab_size * width];
    let total_updates = (cfg.epochs * pairs.len()) as f64;
    let mut step = 0usize;
    let mut grad_in = vec![0.0; width];
    for _ in 0..cfg.epochs {
        pairs.shuffle(rng);
        for &(center, context) in &pairs {
            let lr = cfg.learning_rate * (1.0 - step as f64 / total_updates).max(1e-4);
            step += 1;
            grad_in.fill(0.0);
            let mut targets = Vec::with_capacity(cfg.negatives + 1);
            targets.push((context, 1.0));
            for _ in 0..cfg.negatives {
                let mut tries = 0;
                loop {
                    let u = rng.random::<f64>() * acc;
                    let neg = cumulative.partition_point(|c| *c <= u).min(vocab_size - 1);
                    if neg != center && neg != context {
                        targets.push((neg, 0.0));
                        break;
                    }
                    tries += 1;
                    if tries > 10 {
                        break;
                    }
                }
            }
            let ci = center * width;
            for (t, label) in targets {
                let to = t * width;
                let dot: f64 = (0..width).map(|k| input[ci + k] * output[to + k]).sum();
                let g = lr * (label - crate::tensor::kernels::sigmoid_value(dot));
                for k in 0..width {
                    grad_in[k] += g * output[to + k];
                    output[to + k] += g * input[ci + k];
                }
            }
            for k in 0..width {
                input[ci + k] += grad_in[k];
            }
        }
    }
    input.iter().zip(&output).map(|(i, o)| i + o).collect()
}
