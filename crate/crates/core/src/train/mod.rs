//! Mini-batch training of TMAE, model state, and checkpoints.

mod checkpoint;
mod optim;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION, MAGIC};
pub use optim::{Optimizer, OptimizerKind};

use crate::data::{build_vocabulary, CategoryMap, CodeVocabulary, PatientRecord};
use crate::embedding::{init_code_tables, pretrain_code_embeddings, CostBinner, PretrainConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PreparedPatient, TmaeNet, Variant};
use crate::rng;
use crate::tensor::{Gradients, ParamSet, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stops early once this many optimizer steps have been taken.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub shuffle: bool,
    pub pretrain_embeddings: bool,
    pub pretrain: PretrainConfig,
    pub log_every: usize,
    /// Fraction of patients held out of optimization and only scored.
    pub holdout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            max_steps: None,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 0,
            shuffle: true,
            pretrain_embeddings: true,
            pretrain: PretrainConfig::default(),
            log_every: 20,
            holdout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be nonnegative, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::invalid(format!("holdout must lie in [0, 1), got {}", self.holdout)));
        }
        if self.max_steps == Some(0) {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        Ok(())
    }

    /// Number of optimizer steps for `n` training patients.
    pub fn total_steps(&self, n: usize) -> usize {
        let full = self.epochs * n.div_ceil(self.batch_size);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub l_loss: f64,
    pub l_code: f64,
    pub l_cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub variant: String,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<LossRecord>,
    pub train_patients: usize,
}

/// Everything needed to embed patients: parameters, configuration, the
/// vocabulary they were trained against, and the fitted cost binner.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub params: ParamSet,
    pub config: ModelConfig,
    pub vocab: CodeVocabulary,
    pub binner: CostBinner,
    pub cost_scale: f64,
    pub metadata: TrainMetadata,
    net: TmaeNet,
}

impl ModelState {
    pub fn new(
        params: ParamSet,
        config: ModelConfig,
        vocab: CodeVocabulary,
        binner: CostBinner,
        cost_scale: f64,
        metadata: TrainMetadata,
    ) -> Result<Self> {
        let net = TmaeNet::from_params(&params, &config, &vocab, cost_scale)?;
        Ok(ModelState {
            params,
            config,
            vocab,
            binner,
            cost_scale,
            metadata,
            net,
        })
    }

    pub fn net(&self) -> &TmaeNet {
        &self.net
    }

    pub fn fingerprint(&self) -> String {
        self.vocab.fingerprint()
    }

    pub fn ensure_fingerprint(&self, expected: &str) -> Result<()> {
        let found = self.fingerprint();
        if found != expected {
            return Err(Error::FingerprintMismatch {
                checkpoint: found,
                data: expected.to_string(),
            });
        }
        Ok(())
    }

    /// Checks that the stored configuration equals `expected`.
    pub fn ensure_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.config != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has d={} heads={} ff_width={}, expected d={} heads={} ff_width={}",
                self.config.d, self.config.heads, self.config.ff_width, expected.d, expected.heads, expected.ff_width
            )));
        }
        Ok(())
    }

    /// The patient embedding `pe` (dropout off).
    pub fn patient_embedding(&self, record: &PatientRecord) -> Result<Vec<f64>> {
        let patient = PreparedPatient::new(record, &self.vocab)?;
        self.embed_prepared(&patient)
    }

    pub fn embed_prepared(&self, patient: &PreparedPatient) -> Result<Vec<f64>> {
        let mut tape = Tape::with_params(&self.params).finite_checks(false);
        let out = self.net.encode_patient(&mut tape, patient, &self.binner, None)?;
        Ok(tape.value(out.pe).data().to_vec())
    }

    pub fn embed_all(&self, records: &[PatientRecord]) -> Result<Vec<Vec<f64>>> {
        records.iter().map(|r| self.patient_embedding(r)).collect()
    }

    /// Mean loss terms over `patients`, weighted by visits.
    pub fn evaluate(&self, patients: &[PreparedPatient]) -> Result<LossRecord> {
        let batch: Vec<&PreparedPatient> = patients.iter().collect();
        let mut tape = Tape::with_params(&self.params).finite_checks(false);
        let terms = self.net.batch_loss(&mut tape, &batch, &self.binner, None)?;
        Ok(LossRecord {
            step: self.metadata.steps,
            l_loss: scalar(&tape, terms.total),
            l_code: scalar(&tape, terms.code),
            l_cost: scalar(&tape, terms.cost),
        })
    }
}

fn scalar(tape: &Tape<'_>, v: crate::tensor::Var) -> f64 {
    tape.value(v).item().expect("scalar loss")
}

/// Per-step information handed to a training observer.
pub struct StepInfo<'a> {
    pub record: LossRecord,
    pub grads: &'a Gradients,
    pub params: &'a ParamSet,
    pub net: &'a TmaeNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub state: ModelState,
    pub history: Vec<LossRecord>,
    /// Loss on held-out patients at each logged step.
    pub holdout_history: Vec<LossRecord>,
    /// `lambda * L_code / L_cost` at step 100 (or the last step if earlier).
    pub balance_ratio: Option<f64>,
}

pub fn train(
    records: &[PatientRecord],
    categories: &CategoryMap,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(records, categories, model_cfg, train_cfg, |_| {})
}

/// Applies `variant` to `model_cfg` and trains.
pub fn train_variant(
    variant: Variant,
    records: &[PatientRecord],
    categories: &CategoryMap,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut outcome = train(records, categories, &variant.apply(model_cfg), train_cfg)?;
    outcome.state.metadata.variant = variant.name().to_string();
    Ok(outcome)
}

/// Step at which the loss-balance diagnostic is taken.
pub const BALANCE_STEP: usize = 100;

/// Trains and calls `observe` after every optimizer step with that step's
/// loss terms and gradients.
pub fn train_observed(
    records: &[PatientRecord],
    categories: &CategoryMap,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut observe: impl FnMut(&StepInfo<'_>),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let vocab = build_vocabulary(records, categories)?;
    let prepared = records
        .iter()
        .map(|r| PreparedPatient::new(r, &vocab))
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let n_holdout = (train_cfg.holdout * prepared.len() as f64).floor() as usize;
    if n_holdout > 0 {
        order.shuffle(&mut rng::stream(train_cfg.seed, "holdout"));
    }
    let (holdout_idx, train_idx) = order.split_at(n_holdout);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let holdout: Vec<PreparedPatient> = holdout_idx.iter().map(|&i| prepared[i].clone()).collect();
    if train_idx.is_empty() {
        return Err(Error::invalid("holdout leaves no training patients"));
    }

    let costs: Vec<f64> = train_idx
        .iter()
        .flat_map(|&i| prepared[i].costs.data().iter().copied())
        .collect();
    let binner = CostBinner::fit(&costs)?;
    let mean_cost = costs.iter().sum::<f64>() / costs.len() as f64;
    let cost_scale = if model_cfg.scale_cost_target && mean_cost > 0.0 {
        mean_cost
    } else {
        1.0
    };

    let width = if model_cfg.use_category_concat {
        model_cfg.d / 2
    } else {
        model_cfg.d
    };
    let tables = if train_cfg.pretrain_embeddings {
        let train_records: Vec<PatientRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();
        pretrain_code_embeddings(
            &train_records,
            &vocab,
            width,
            model_cfg.use_category_concat,
            &train_cfg.pretrain,
            train_cfg.seed,
        )?
    } else {
        init_code_tables(&vocab, width, model_cfg.use_category_concat, train_cfg.seed)
    };
    let mut params = ParamSet::new();
    let net = TmaeNet::register(&mut params, model_cfg, &vocab, tables, cost_scale, train_cfg.seed)?;
    let mut optimizer = Optimizer::new(train_cfg.optimizer, train_cfg.learning_rate, &params);
    let mut dropout_rng = rng::stream(train_cfg.seed, "dropout");
    let use_dropout = model_cfg.dropout > 0.0;

    let total_steps = train_cfg.total_steps(train_idx.len());
    let mut history = Vec::with_capacity(total_steps);
    let mut holdout_history = Vec::new();
    let mut balance_ratio = None;
    let mut metadata = TrainMetadata {
        variant: "custom".to_string(),
        seed: train_cfg.seed,
        steps: 0,
        final_loss: None,
        train_patients: train_idx.len(),
    };
    let snapshot = |params: &ParamSet, metadata: &TrainMetadata| {
        ModelState::new(params.clone(), model_cfg.clone(), vocab.clone(), binner.clone(), cost_scale, metadata.clone())
    };

    let mut last_good: Option<(ParamSet, TrainMetadata)> = None;
    let mut step = 0;
    'epochs: for epoch in 0..train_cfg.epochs {
        let mut epoch_order = train_idx.clone();
        if train_cfg.shuffle {
            epoch_order.shuffle(&mut rng::indexed_stream(train_cfg.seed, "shuffle", epoch as u64));
        }
        for chunk in epoch_order.chunks(train_cfg.batch_size) {
            if step >= total_steps {
                break 'epochs;
            }
            let batch: Vec<&PreparedPatient> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (record, grads) = {
                let mut tape = Tape::with_params(&params).finite_checks(false);
                let dropout = if use_dropout { Some(&mut dropout_rng) } else { None };
                let terms = net.batch_loss(&mut tape, &batch, &binner, dropout)?;
                let record = LossRecord {
                    step,
                    l_loss: scalar(&tape, terms.total),
                    l_code: scalar(&tape, terms.code),
                    l_cost: scalar(&tape, terms.cost),
                };
                if ![record.l_loss, record.l_code, record.l_cost].iter().all(|x| x.is_finite()) {
                    drop(tape);
                    // the current parameters produced this loss; hand back
                    // the ones from before the previous update
                    let (good, meta) = last_good.take().unwrap_or_else(|| (params.clone(), metadata.clone()));
                    return Err(Error::NonFiniteLoss {
                        step,
                        last_good: Box::new(snapshot(&good, &meta)?),
                    });
                }
                (record, tape.backward(terms.total)?)
            };
            last_good = Some((params.clone(), metadata.clone()));
            optimizer.step(&mut params, &grads);
            observe(&StepInfo {
                record,
                grads: &grads,
                params: &params,
                net: &net,
            });
            history.push(record);
            step += 1;
            metadata.steps = step;
            metadata.final_loss = Some(record);

            if step == BALANCE_STEP || (step == total_steps && balance_ratio.is_none()) {
                let ratio = model_cfg.lambda * record.l_code / record.l_cost;
                balance_ratio = Some(ratio);
                if !(1e-2..=1e2).contains(&ratio) {
                    log::warn!(
                        "loss terms unbalanced at step {step}: lambda*L_code = {:.3e}, L_cost = {:.3e}",
                        model_cfg.lambda * record.l_code,
                        record.l_cost
                    );
                }
            }
            let log_now = train_cfg.log_every > 0 && (step % train_cfg.log_every == 0 || step == total_steps);
            if log_now {
                log::info!(
                    "epoch {epoch} step {step}/{total_steps} loss {:.4} code {:.5} cost {:.4}",
                    record.l_loss,
                    record.l_code,
                    record.l_cost
                );
                if !holdout.is_empty() {
                    let mut held = snapshot(&params, &metadata)?.evaluate(&holdout)?;
                    held.step = step;
                    holdout_history.push(held);
                }
            }
        }
    }

    Ok(TrainOutcome {
        state: snapshot(&params, &metadata)?,
        history,
        holdout_history,
        balance_ratio,
    })
}

pub fn loss_history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,l_loss,l_code,l_cost\n");
    for r in history {
        writeln!(out, "{},{},{},{}", r.step, r.l_loss, r.l_code, r.l_cost).expect("write to string");
    }
    out
}

pub fn write_loss_history(history: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, loss_history_csv(history)).map_err(|e| Error::io(path, e))
}
