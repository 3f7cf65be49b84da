use super::config::ModelConfig;
use super::transformer::{Linear, TransformerBlock};
use crate::data::{encode_visit, ClaimType, CodeVocabulary, Demographics, EncodedVisit, Modality, PatientRecord};
use crate::embedding::{build_visit_matrix, embed_demographics, pool_visit, AgeGrouper, CodeTables, CostBinner, EmbeddingTables};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

/// A patient encoded against a vocabulary, with reconstruction targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPatient {
    pub patient_id: String,
    pub demographics: Demographics,
    pub visits: Vec<EncodedVisit>,
    /// Multi-hot code targets, `T x (|C_diag| + |C_proc| + |C_drug|)`.
    pub targets: Tensor,
    /// Visit costs in dollars, length `T`.
    pub costs: Tensor,
}

impl PreparedPatient {
    pub fn new(record: &PatientRecord, vocab: &CodeVocabulary) -> Result<Self> {
        if record.visits.is_empty() {
            return Err(Error::NoVisits);
        }
        let visits = record
            .visits
            .iter()
            .map(|v| encode_visit(v, vocab))
            .collect::<Result<Vec<_>>>()?;
        let width = vocab.total_codes();
        let mut targets = Vec::with_capacity(visits.len() * width);
        for v in &visits {
            targets.extend(v.multi_hot(vocab));
        }
        Ok(PreparedPatient {
            patient_id: record.patient_id.clone(),
            demographics: record.demographics,
            targets: Tensor::matrix(visits.len(), width, targets)?,
            costs: Tensor::vector(visits.iter().map(|v| v.cost).collect()),
            visits,
        })
    }

    pub fn visit_count(&self) -> usize {
        self.visits.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// Patient embedding, row 0 of the encoder output (`1 x d`).
    pub pe: Var,
    /// Contextual visit vectors, rows 1..=T (`T x d`).
    pub visits: Var,
    /// Whole output sequence, `(T + 1) x d`.
    pub sequence: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput {
    /// `T x (|C_diag| + |C_proc| + |C_drug|)`.
    pub code_logits: Var,
    /// Predicted dollars per visit, `T x 1`.
    pub cost_pred: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub code: Var,
    pub cost: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub encoder: EncoderOutput,
    pub decoder: DecoderOutput,
}

/// Parameter handles and fixed lookups of one TMAE instance. Parameter
/// values live in a separate [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct TmaeNet {
    pub config: ModelConfig,
    pub tables: EmbeddingTables,
    pub encoder: Vec<TransformerBlock>,
    pub decoder: Vec<TransformerBlock>,
    pub code_head: Linear,
    pub cost_head: Linear,
    pub grouper: AgeGrouper,
    /// Category index of each code, per modality.
    pub categories: [Vec<usize>; 3],
    /// Multiplier applied to the cost head output.
    pub cost_scale: f64,
}

impl TmaeNet {
    /// Registers a freshly initialized network in `params`.
    pub fn register(
        params: &mut ParamSet,
        cfg: &ModelConfig,
        vocab: &CodeVocabulary,
        code_tables: CodeTables,
        cost_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let grouper = AgeGrouper::default();
        let tables = EmbeddingTables::register(params, cfg, code_tables, &grouper, seed)?;
        let mut rng = rng::stream(seed, "transformer-init");
        let encoder = (0..cfg.enc_layers)
            .map(|i| TransformerBlock::register(params, &format!("enc.{i}"), cfg, false, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.dec_layers)
            .map(|i| TransformerBlock::register(params, &format!("dec.{i}"), cfg, cfg.cross_attend, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let code_head = Linear::register(params, "head.code", cfg.d, vocab.total_codes(), &mut rng)?;
        let cost_head = Linear::register(params, "head.cost", cfg.d, 1, &mut rng)?;
        Self::assemble(cfg, vocab, tables, encoder, decoder, code_head, cost_head, grouper, cost_scale)
    }

    /// Rebinds handles to parameters already present in `params`.
    pub fn from_params(params: &ParamSet, cfg: &ModelConfig, vocab: &CodeVocabulary, cost_scale: f64) -> Result<Self> {
        cfg.validate()?;
        let tables = EmbeddingTables::from_params(params, cfg)?;
        let encoder = (0..cfg.enc_layers)
            .map(|i| TransformerBlock::lookup(params, &format!("enc.{i}"), false))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.dec_layers)
            .map(|i| TransformerBlock::lookup(params, &format!("dec.{i}"), cfg.cross_attend))
            .collect::<Result<Vec<_>>>()?;
        let code_head = Linear::lookup(params, "head.code")?;
        let cost_head = Linear::lookup(params, "head.cost")?;
        let net = Self::assemble(
            cfg,
            vocab,
            tables,
            encoder,
            decoder,
            code_head,
            cost_head,
            AgeGrouper::default(),
            cost_scale,
        )?;
        for m in Modality::ALL {
            if params.value(net.tables.codes[m.index()]).rows() != vocab.size(m) {
                return Err(Error::ConfigMismatch(format!("{m} table does not match vocabulary size")));
            }
        }
        if params.value(net.code_head.weight).shape() != [cfg.d, vocab.total_codes()] {
            return Err(Error::ConfigMismatch(format!(
                "code head has shape {:?}, expected [{}, {}]",
                params.value(net.code_head.weight).shape(),
                cfg.d,
                vocab.total_codes()
            )));
        }
        Ok(net)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: &ModelConfig,
        vocab: &CodeVocabulary,
        tables: EmbeddingTables,
        encoder: Vec<TransformerBlock>,
        decoder: Vec<TransformerBlock>,
        code_head: Linear,
        cost_head: Linear,
        grouper: AgeGrouper,
        cost_scale: f64,
    ) -> Result<Self> {
        if !(cost_scale.is_finite() && cost_scale > 0.0) {
            return Err(Error::invalid(format!("cost scale must be positive, got {cost_scale}")));
        }
        Ok(TmaeNet {
            config: cfg.clone(),
            tables,
            encoder,
            decoder,
            code_head,
            cost_head,
            grouper,
            categories: Modality::ALL.map(|m| vocab.categories_of(m)),
            cost_scale,
        })
    }

    /// Pooled visit vectors `e_t`, each `1 x d`.
    pub fn embed_visits(&self, tape: &mut Tape<'_>, visits: &[EncodedVisit], binner: &CostBinner) -> Result<Vec<Var>> {
        visits
            .iter()
            .map(|v| {
                let m = build_visit_matrix(tape, v, &self.categories, &self.tables, binner)?;
                pool_visit(tape, m)
            })
            .collect()
    }

    pub fn embed_demographics(&self, tape: &mut Tape<'_>, demo: &Demographics) -> Result<Var> {
        embed_demographics(tape, demo, &self.tables, &self.grouper)
    }

    /// Runs the encoder stack over `[demo_token; e_1..e_T]`.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        demo_token: Var,
        visit_vectors: &[Var],
        mut dropout: Option<&mut Rng>,
    ) -> Result<EncoderOutput> {
        if visit_vectors.is_empty() {
            return Err(Error::NoVisits);
        }
        let mut rows = Vec::with_capacity(visit_vectors.len() + 1);
        rows.push(demo_token);
        rows.extend_from_slice(visit_vectors);
        let mut x = tape.concat_rows(&rows)?;
        for block in &self.encoder {
            x = block.forward(tape, x, None, &self.config, dropout.as_deref_mut())?;
        }
        let n = tape.value(x).rows();
        Ok(EncoderOutput {
            pe: tape.slice_rows(x, 0, 1)?,
            visits: tape.slice_rows(x, 1, n)?,
            sequence: x,
        })
    }

    /// Row 0 is `pe`; row `t` is the date row plus the utilization row of
    /// visit `t`. Codes and costs never enter.
    pub fn build_decoder_queries(&self, tape: &mut Tape<'_>, dates: &[u16], claim_types: &[ClaimType], pe: Var) -> Result<Var> {
        if dates.len() != claim_types.len() {
            return Err(Error::shape("build_decoder_queries", &[dates.len()], &[claim_types.len()]));
        }
        if dates.is_empty() {
            return Err(Error::NoVisits);
        }
        let date_rows = dates
            .iter()
            .map(|&d| self.tables.date_row(tape, d))
            .collect::<Result<Vec<_>>>()?;
        let dates = tape.concat_rows(&date_rows)?;
        let util = tape.param(self.tables.utilization);
        let types: Vec<usize> = claim_types.iter().map(|t| t.index()).collect();
        let util = tape.gather_rows(util, &types)?;
        let queries = tape.add(dates, util)?;
        tape.concat_rows(&[pe, queries])
    }

    /// Unmasked decoder stack over the query sequence; rows 1..=T feed the
    /// code and cost heads.
    pub fn decode(
        &self,
        tape: &mut Tape<'_>,
        queries: Var,
        memory: Option<Var>,
        mut dropout: Option<&mut Rng>,
    ) -> Result<DecoderOutput> {
        let mut x = queries;
        for block in &self.decoder {
            x = block.forward(tape, x, memory, &self.config, dropout.as_deref_mut())?;
        }
        let n = tape.value(x).rows();
        let h = tape.slice_rows(x, 1, n)?;
        let code_logits = self.code_head.forward(tape, h)?;
        let raw_cost = self.cost_head.forward(tape, h)?;
        let cost_pred = tape.scale(raw_cost, self.cost_scale);
        Ok(DecoderOutput { code_logits, cost_pred })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        patient: &PreparedPatient,
        binner: &CostBinner,
        mut dropout: Option<&mut Rng>,
    ) -> Result<ForwardPass> {
        let encoder = self.encode_patient(tape, patient, binner, dropout.as_deref_mut())?;
        let dates: Vec<u16> = patient.visits.iter().map(|v| v.date).collect();
        let types: Vec<ClaimType> = patient.visits.iter().map(|v| v.claim_type).collect();
        let queries = self.build_decoder_queries(tape, &dates, &types, encoder.pe)?;
        let memory = self.config.cross_attend.then_some(encoder.visits);
        let decoder = self.decode(tape, queries, memory, dropout)?;
        Ok(ForwardPass { encoder, decoder })
    }

    pub fn encode_patient(
        &self,
        tape: &mut Tape<'_>,
        patient: &PreparedPatient,
        binner: &CostBinner,
        dropout: Option<&mut Rng>,
    ) -> Result<EncoderOutput> {
        let visit_vectors = self.embed_visits(tape, &patient.visits, binner)?;
        let demo = self.embed_demographics(tape, &patient.demographics)?;
        self.encode(tape, demo, &visit_vectors, dropout)
    }

    pub fn loss(&self, tape: &mut Tape<'_>, out: &DecoderOutput, patient: &PreparedPatient) -> Result<LossTerms> {
        joint_loss(tape, out, &patient.targets, &patient.costs, &self.config)
    }

    /// Loss over a batch of variable-length patients without padding. Each
    /// patient's terms are weighted by its share of the batch's visits, so
    /// the result equals the mean over every visit position in the batch.
    pub fn batch_loss(
        &self,
        tape: &mut Tape<'_>,
        batch: &[&PreparedPatient],
        binner: &CostBinner,
        mut dropout: Option<&mut Rng>,
    ) -> Result<LossTerms> {
        let total_visits: usize = batch.iter().map(|p| p.visit_count()).sum();
        if total_visits == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let mut acc: Option<LossTerms> = None;
        for patient in batch {
            let pass = self.forward(tape, patient, binner, dropout.as_deref_mut())?;
            let terms = self.loss(tape, &pass.decoder, patient)?;
            let w = patient.visit_count() as f64 / total_visits as f64;
            let weighted = LossTerms {
                total: tape.scale(terms.total, w),
                code: tape.scale(terms.code, w),
                cost: tape.scale(terms.cost, w),
            };
            acc = Some(match acc {
                None => weighted,
                Some(a) => LossTerms {
                    total: tape.add(a.total, weighted.total)?,
                    code: tape.add(a.code, weighted.code)?,
                    cost: tape.add(a.cost, weighted.cost)?,
                },
            });
        }
        Ok(acc.expect("non-empty batch"))
    }
}

/// `L_loss = L_cost + lambda * L_code`, with `L_code` the mean sigmoid
/// cross-entropy over all `T * |C|` entries and `L_cost` the mean absolute
/// dollar error over visits. With `use_cost_loss` off the total is
/// `lambda * L_code` and `L_cost` is reported only.
pub fn joint_loss(
    tape: &mut Tape<'_>,
    out: &DecoderOutput,
    targets: &Tensor,
    costs: &Tensor,
    cfg: &ModelConfig,
) -> Result<LossTerms> {
    if targets.data().iter().any(|y| *y != 0.0 && *y != 1.0) {
        return Err(Error::invalid("code targets must be 0 or 1"));
    }
    if costs.data().iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::invalid("cost targets must be nonnegative"));
    }
    let code = tape.bce_with_logits_mean(out.code_logits, targets)?;
    let cost = tape.l1_mean(out.cost_pred, costs)?;
    let weighted = tape.scale(code, cfg.lambda);
    let total = if cfg.use_cost_loss {
        tape.add(cost, weighted)?
    } else {
        weighted
    };
    Ok(LossTerms { total, code, cost })
}
