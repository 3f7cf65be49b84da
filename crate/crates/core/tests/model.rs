use rand::Rng as _;

use tmae::data::{build_vocabulary, ClaimType, CodeVocabulary, Modality};
use tmae::embedding::{init_code_tables, sinusoid_embed, CostBinner};
use tmae::error::Error;
use tmae::model::{
    gradcheck_fixture, joint_loss, tmae_grad_check, transformer::TransformerBlock, DecoderOutput, ModelConfig,
    PreparedPatient, TmaeNet, Variant,
};
use tmae::rng;
use tmae::tensor::{ParamSet, Tape, Tensor};

const D: usize = 8;

struct Fixture {
    params: ParamSet,
    net: TmaeNet,
    vocab: CodeVocabulary,
    patients: Vec<PreparedPatient>,
    binner: CostBinner,
}

fn fixture(cfg: &ModelConfig) -> Fixture {
    let (records, categories) = gradcheck_fixture(4);
    let vocab = build_vocabulary(&records, &categories).unwrap();
    let patients = records.iter().map(|r| PreparedPatient::new(r, &vocab).unwrap()).collect();
    let width = if cfg.use_category_concat { cfg.d / 2 } else { cfg.d };
    let tables = init_code_tables(&vocab, width, cfg.use_category_concat, 4);
    let mut params = ParamSet::new();
    let net = TmaeNet::register(&mut params, cfg, &vocab, tables, 1.0, 4).unwrap();
    let binner = CostBinner::fit(&(0..200).map(|i| i as f64 * 5.0).collect::<Vec<_>>()).unwrap();
    Fixture {
        params,
        net,
        vocab,
        patients,
        binner,
    }
}

fn small() -> ModelConfig {
    ModelConfig::with_width(D, 2)
}

fn pe_of(f: &Fixture, p: &PreparedPatient) -> Vec<f64> {
    let mut tape = Tape::with_params(&f.params);
    let out = f.net.encode_patient(&mut tape, p, &f.binner, None).unwrap();
    tape.value(out.pe).data().to_vec()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "matrix");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn single_token_attention_is_the_value_path() {
    let cfg = small();
    let f = fixture(&cfg);
    let block = &f.net.encoder[0];
    let x = random_matrix(1, D, 1);
    let mut tape = Tape::with_params(&f.params);
    let xv = tape.constant(x);
    let attn = block.attention.forward(&mut tape, xv, xv, cfg.heads).unwrap();
    let v = block.attention.value.forward(&mut tape, xv).unwrap();
    let direct = block.attention.output.forward(&mut tape, v).unwrap();
    let (a, b) = (tape.value(attn).data(), tape.value(direct).data());
    assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12));
}

#[test]
fn block_is_shape_preserving_and_permutation_equivariant() {
    let cfg = small();
    let f = fixture(&cfg);
    let block: &TransformerBlock = &f.net.encoder[0];
    let x = random_matrix(4, D, 2);
    let perm = [2usize, 0, 3, 1];
    let xp = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let run = |x: Tensor| {
        let mut tape = Tape::with_params(&f.params);
        let v = tape.constant(x);
        let y = block.forward(&mut tape, v, None, &cfg, None).unwrap();
        tape.value(y).clone()
    };
    let y = run(x);
    let yp = run(xp);
    assert_eq!(y.shape(), [4, D]);
    for (dst, &src) in perm.iter().enumerate() {
        for c in 0..D {
            assert!((yp.get(dst, c) - y.get(src, c)).abs() <= 1e-12);
        }
    }
    let mut tape = Tape::with_params(&f.params);
    let wrong = tape.constant(random_matrix(3, D + 2, 3));
    assert!(block.forward(&mut tape, wrong, None, &cfg, None).is_err());
}

#[test]
fn encoder_prefixes_demographics_and_exposes_pe() {
    let f = fixture(&small());
    let mut p = f.patients[2].clone();
    p.visits.truncate(1);
    let mut tape = Tape::with_params(&f.params);
    let out = f.net.encode_patient(&mut tape, &p, &f.binner, None).unwrap();
    assert_eq!(tape.shape(out.sequence), [2, D]);
    assert_eq!(tape.value(out.pe).data(), tape.value(out.sequence).row(0));
    assert_eq!(tape.shape(out.visits), [1, D]);
    for p in &f.patients {
        assert_eq!(pe_of(&f, p).len(), D);
    }
    let demo = f.net.embed_demographics(&mut tape, &p.demographics).unwrap();
    assert!(matches!(f.net.encode(&mut tape, demo, &[], None), Err(Error::NoVisits)));
}

fn pooled(f: &Fixture, p: &PreparedPatient, t: usize) -> Vec<f64> {
    let mut tape = Tape::with_params(&f.params);
    let rows = f.net.embed_visits(&mut tape, &p.visits[t..=t], &f.binner).unwrap();
    tape.value(rows[0]).data().to_vec()
}

/// Random single-visit edits; returns (edits that moved the pooled visit
/// vector, edits that moved pe). Panics if pe ever ignores a moved pool.
fn sensitivity_trials(f: &Fixture, trials: usize) -> (usize, usize) {
    let mut r = rng::stream(9, "trials");
    let (mut pooled_moved, mut pe_moved) = (0, 0);
    for trial in 0..trials {
        let base = &f.patients[r.random_range(0..f.patients.len())];
        let t = r.random_range(0..base.visit_count());
        let mut changed = base.clone();
        let v = &mut changed.visits[t];
        match trial % 4 {
            0 => v.date = (v.date + 1 + r.random_range(0..30)) % 366,
            1 => v.cost += 300.0,
            2 => {
                v.claim_type = match v.claim_type {
                    ClaimType::IP => ClaimType::OP,
                    _ => ClaimType::IP,
                }
            }
            _ => {
                let m = if v.diag.is_empty() { Modality::Drug } else { Modality::Diag };
                let old = v.indices(m).to_vec();
                let fresh: Vec<usize> = (0..f.vocab.size(m)).filter(|i| !old.contains(i)).take(1).collect();
                match m {
                    Modality::Diag => v.diag = fresh,
                    _ => v.drug = fresh,
                }
            }
        }
        let moved = pooled(f, base, t) != pooled(f, &changed, t);
        let delta = distance(&pe_of(f, base), &pe_of(f, &changed));
        if moved {
            pooled_moved += 1;
            assert!(delta > 1e-9, "trial {trial}: pooled visit moved but |dpe| = {delta}");
        }
        if delta > 1e-9 {
            pe_moved += 1;
        }
    }
    (pooled_moved, pe_moved)
}

#[test]
fn pe_responds_whenever_a_pooled_visit_changes() {
    // Max-pooling hides an edit whose row is beaten in every column, so the
    // guarantee is conditional on the pooled vector moving.
    let f = fixture(&small());
    let (moved, pe_moved) = sensitivity_trials(&f, 200);
    assert_eq!(moved, pe_moved);
    assert!(moved > 0);
}

#[test]
fn decoder_queries_are_additive_and_code_free() {
    let cfg = small();
    let mut f = fixture(&cfg);
    let dates = [3u16, 3, 200];
    let types = [ClaimType::OP, ClaimType::OP, ClaimType::RX];
    let queries = |f: &Fixture| {
        let mut tape = Tape::with_params(&f.params);
        let pe = tape.constant(Tensor::zeros(&[1, D]));
        let q = f.net.build_decoder_queries(&mut tape, &dates, &types, pe).unwrap();
        tape.value(q).clone()
    };
    let q = queries(&f);
    assert_eq!(q.shape(), [4, D]);
    assert_eq!(q.row(0), vec![0.0; D]);
    assert_eq!(q.row(1), q.row(2));
    assert_ne!(q.row(2), q.row(3));

    let util = f.net.tables.utilization;
    f.params.get_mut(util).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let q = queries(&f);
    for (t, &date) in dates.iter().enumerate() {
        assert_eq!(q.row(t + 1), sinusoid_embed(date as usize, D).unwrap());
    }

    let mut tape = Tape::with_params(&f.params);
    let pe = tape.constant(Tensor::zeros(&[1, D]));
    assert!(f.net.build_decoder_queries(&mut tape, &dates, &types[..2], pe).is_err());
}

#[test]
fn decoder_sees_only_pe_dates_and_types() {
    let cfg = small();
    let f = fixture(&cfg);
    let base = &f.patients[1];
    let mut other = base.clone();
    other.demographics.age_years = (other.demographics.age_years + 9) % 18;
    for v in &mut other.visits {
        v.cost *= 3.0;
        v.proc.clear();
        v.diag = vec![0];
    }
    let decode = |p: &PreparedPatient, zero_pe: bool| {
        let mut tape = Tape::with_params(&f.params);
        let enc = f.net.encode_patient(&mut tape, p, &f.binner, None).unwrap();
        let pe = if zero_pe { tape.constant(Tensor::zeros(&[1, D])) } else { enc.pe };
        let dates: Vec<u16> = p.visits.iter().map(|v| v.date).collect();
        let types: Vec<ClaimType> = p.visits.iter().map(|v| v.claim_type).collect();
        let q = f.net.build_decoder_queries(&mut tape, &dates, &types, pe).unwrap();
        let out = f.net.decode(&mut tape, q, None, None).unwrap();
        (tape.value(out.code_logits).clone(), tape.value(out.cost_pred).clone())
    };
    let (logits, costs) = decode(base, false);
    let t = base.visit_count();
    assert_eq!(logits.shape(), [t, f.vocab.total_codes()]);
    assert_eq!(costs.len(), t);
    assert!(logits.is_finite() && costs.is_finite());
    assert_eq!(decode(base, true), decode(&other, true));
    assert_ne!(decode(base, false), decode(&other, false));
}

#[test]
fn decoder_attention_is_unmasked() {
    let cfg = small();
    let f = fixture(&cfg);
    let first_row = |last_date: u16| {
        let mut tape = Tape::with_params(&f.params);
        let pe = tape.constant(random_matrix(1, D, 5));
        let q = f
            .net
            .build_decoder_queries(&mut tape, &[10, 20, last_date], &[ClaimType::OP; 3], pe)
            .unwrap();
        let out = f.net.decode(&mut tape, q, None, None).unwrap();
        tape.value(out.code_logits).row(0).to_vec()
    };
    assert_ne!(first_row(30), first_row(300));
}

fn outputs(tape: &mut Tape<'_>, logits: Tensor, costs: Tensor) -> DecoderOutput {
    DecoderOutput {
        code_logits: tape.constant(logits),
        cost_pred: tape.constant(costs),
    }
}

#[test]
fn joint_loss_examples() {
    let mut r = rng::stream(2, "targets");
    let targets = Tensor::matrix(3, 7, (0..21).map(|_| f64::from(r.random_bool(0.4) as u8)).collect()).unwrap();
    let costs = Tensor::vector(vec![12.5, 0.0, 300.0]);
    let cfg = small();

    let mut tape = Tape::new();
    let out = outputs(&mut tape, Tensor::zeros(&[3, 7]), Tensor::vector(vec![10.0, 1.0, 310.0]));
    let l = joint_loss(&mut tape, &out, &targets, &costs, &cfg).unwrap();
    let code = tape.value(l.code).item().unwrap();
    let cost = tape.value(l.cost).item().unwrap();
    let total = tape.value(l.total).item().unwrap();
    assert!((code - std::f64::consts::LN_2).abs() <= 1e-12);
    assert!((cost - 13.5 / 3.0).abs() <= 1e-12);
    assert!((total - (cost + cfg.lambda * code)).abs() <= 1e-12);

    let out = outputs(&mut tape, random_matrix(3, 7, 8), costs.clone());
    let l = joint_loss(&mut tape, &out, &targets, &costs, &cfg).unwrap();
    assert_eq!(tape.value(l.cost).item(), Some(0.0));

    let zero_lambda = ModelConfig { lambda: 0.0, ..small() };
    let out = outputs(&mut tape, random_matrix(3, 7, 9), Tensor::vector(vec![1.0, 2.0, 3.0]));
    let l = joint_loss(&mut tape, &out, &targets, &costs, &zero_lambda).unwrap();
    assert_eq!(tape.value(l.total).item(), tape.value(l.cost).item());

    let no_cost = Variant::CTmae.apply(&small());
    let l = joint_loss(&mut tape, &out, &targets, &costs, &no_cost).unwrap();
    let code = tape.value(l.code).item().unwrap();
    assert_eq!(tape.value(l.total).item(), Some(no_cost.lambda * code));

    let mut half = targets.clone();
    half.data_mut()[4] = 0.5;
    assert!(joint_loss(&mut tape, &out, &half, &costs, &cfg).is_err());
    let negative = Tensor::vector(vec![1.0, -1.0, 2.0]);
    assert!(joint_loss(&mut tape, &out, &targets, &negative, &cfg).is_err());
}

#[test]
fn joint_loss_identity_holds_on_real_outputs() {
    let cfg = small();
    let f = fixture(&cfg);
    for p in &f.patients {
        let mut tape = Tape::with_params(&f.params);
        let pass = f.net.forward(&mut tape, p, &f.binner, None).unwrap();
        let l = f.net.loss(&mut tape, &pass.decoder, p).unwrap();
        let [total, code, cost] = [l.total, l.code, l.cost].map(|v| tape.value(v).item().unwrap());
        assert!(code.is_finite() && cost.is_finite());
        assert!((total - (cost + cfg.lambda * code)).abs() <= 1e-12);
    }
}

#[test]
fn cost_head_gets_no_gradient_without_cost_loss() {
    let cfg = Variant::CTmae.apply(&small());
    let f = fixture(&cfg);
    let batch: Vec<&PreparedPatient> = f.patients.iter().collect();
    let mut tape = Tape::with_params(&f.params);
    let l = f.net.batch_loss(&mut tape, &batch, &f.binner, None).unwrap();
    let grads = tape.backward(l.total).unwrap();
    for id in [f.net.cost_head.weight, f.net.cost_head.bias] {
        if let Some(g) = grads.get(id) {
            assert!(g.data().iter().all(|v| *v == 0.0));
        }
    }
    let code_grad = grads.get(f.net.code_head.weight).unwrap();
    assert!(code_grad.norm() > 0.0);
}

#[test]
fn batch_loss_is_the_mean_over_visit_positions() {
    let cfg = small();
    let f = fixture(&cfg);
    let mut tape = Tape::with_params(&f.params);
    let batch: Vec<&PreparedPatient> = f.patients.iter().collect();
    let joint = f.net.batch_loss(&mut tape, &batch, &f.binner, None).unwrap();
    let joint = tape.value(joint.cost).item().unwrap();
    let mut sum = 0.0;
    let mut visits = 0;
    for p in &f.patients {
        let l = f.net.batch_loss(&mut tape, &[p], &f.binner, None).unwrap();
        sum += tape.value(l.cost).item().unwrap() * p.visit_count() as f64;
        visits += p.visit_count();
    }
    assert!((joint - sum / visits as f64).abs() <= 1e-9);
}

#[test]
fn end_to_end_gradient_check_for_every_configuration() {
    let base = small();
    let mut configs: Vec<ModelConfig> = Variant::ALL.iter().map(|v| v.apply(&base)).collect();
    configs.push(ModelConfig { learned_date_cost: true, ..base.clone() });
    configs.push(ModelConfig { cross_attend: true, ..base.clone() });
    for cfg in configs {
        let report = tmae_grad_check(&cfg, 21, 1e-5).unwrap();
        assert!(report.passed(), "{cfg:?}: {}", report.max_relative_error);
    }
}
