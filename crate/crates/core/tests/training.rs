use std::sync::OnceLock;

use rand::seq::IndexedRandom;

use tmae::data::{build_vocabulary, CategoryMap, ClaimType, Demographics, Gender, Modality, PatientRecord, Visit};
use tmae::embedding::init_code_tables;
use tmae::error::Error;
use tmae::model::{ModelConfig, TmaeNet, Variant};
use tmae::rng;
use tmae::synth::{generate_condition_benchmark, LabeledDataset};
use tmae::tensor::ParamSet;
use tmae::train::{
    loss_history_csv, read_checkpoint, save_checkpoint, load_checkpoint, train, train_observed, train_variant,
    write_checkpoint, ModelState, OptimizerKind, TrainConfig, TrainOutcome, CHECKPOINT_VERSION,
};

fn data() -> &'static LabeledDataset {
    static DATA: OnceLock<LabeledDataset> = OnceLock::new();
    DATA.get_or_init(|| generate_condition_benchmark(20, 3).unwrap())
}

fn model() -> ModelConfig {
    ModelConfig::with_width(16, 2)
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        epochs: 5,
        max_steps: Some(steps),
        batch_size: 16,
        seed: 11,
        pretrain: tmae::embedding::PretrainConfig {
            epochs: 1,
            ..Default::default()
        },
        log_every: 0,
        ..Default::default()
    }
}

fn trained() -> &'static TrainOutcome {
    static OUT: OnceLock<TrainOutcome> = OnceLock::new();
    OUT.get_or_init(|| train(&data().records, &data().category_map, &model(), &quick(12)).unwrap())
}

fn same_params(a: &ParamSet, b: &ParamSet) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|((_, x), (_, y))| {
            x.name == y.name
                && x.value.shape() == y.value.shape()
                && x.value.data().iter().zip(y.value.data()).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

/// One patient with enough visits to fit the cost binner on its own.
fn long_patient() -> (PatientRecord, CategoryMap) {
    let mut categories = CategoryMap::new();
    categories.insert(Modality::Diag, "D1", "c1");
    categories.insert(Modality::Diag, "D2", "c2");
    categories.insert(Modality::Proc, "P1", "c1");
    categories.insert(Modality::Drug, "R1", "c2");
    let visits = (0..120u16)
        .map(|i| {
            let rx = i % 3 == 0;
            Visit {
                date: i * 3,
                claim_type: if rx { ClaimType::RX } else { ClaimType::OP },
                diag_codes: if rx { vec![] } else { vec![if i % 2 == 0 { "D1" } else { "D2" }.into()] },
                proc_codes: if rx { vec![] } else { vec!["P1".into()] },
                drug_codes: if rx { vec!["R1".into()] } else { vec![] },
                cost: 10.0 + f64::from(i) * 7.5,
            }
        })
        .collect();
    let record = PatientRecord {
        patient_id: "solo".into(),
        demographics: Demographics {
            age_years: 7,
            gender: Gender::M,
        },
        visits,
    };
    (record, categories)
}

#[test]
fn zero_learning_rate_leaves_initialization_bitwise() {
    let (record, categories) = long_patient();
    let cfg = model();
    let tc = TrainConfig {
        epochs: 1,
        learning_rate: 0.0,
        pretrain_embeddings: false,
        seed: 4,
        log_every: 0,
        ..Default::default()
    };
    let out = train(std::slice::from_ref(&record), &categories, &cfg, &tc).unwrap();
    assert_eq!(out.history.len(), 1);

    let vocab = build_vocabulary(std::slice::from_ref(&record), &categories).unwrap();
    let mut fresh = ParamSet::new();
    let tables = init_code_tables(&vocab, cfg.d / 2, true, tc.seed);
    TmaeNet::register(&mut fresh, &cfg, &vocab, tables, out.state.cost_scale, tc.seed).unwrap();
    assert!(same_params(&fresh, &out.state.params));
}

#[test]
fn training_is_deterministic() {
    let a = trained();
    let b = train(&data().records, &data().category_map, &model(), &quick(12)).unwrap();
    assert_eq!(a.history, b.history);
    assert!(same_params(&a.state.params, &b.state.params));
    assert_eq!(a.history.len(), 12);
    assert!(a.history.iter().all(|r| r.l_loss.is_finite()));
    let other_seed = train(&data().records, &data().category_map, &model(), &TrainConfig { seed: 12, ..quick(12) }).unwrap();
    assert_ne!(a.history, other_seed.history);
}

#[test]
fn c_tmae_never_touches_the_cost_head() {
    let mut steps = 0;
    let out = train_observed(
        &data().records,
        &data().category_map,
        &Variant::CTmae.apply(&model()),
        &quick(6),
        |info| {
            steps += 1;
            for id in [info.net.cost_head.weight, info.net.cost_head.bias] {
                let norm = info.grads.get(id).map_or(0.0, |g| g.norm());
                assert_eq!(norm, 0.0, "step {}", info.record.step);
            }
        },
    )
    .unwrap();
    assert_eq!(steps, 6);
    let lambda = model().lambda;
    assert!(out.history.iter().all(|r| (r.l_loss - lambda * r.l_code).abs() <= 1e-12 * r.l_loss.abs()));
}

#[test]
fn every_variant_trains_and_p_tmae_has_no_category_half() {
    for v in Variant::ALL {
        let out = train_variant(v, &data().records, &data().category_map, &model(), &quick(3)).unwrap();
        assert_eq!(out.state.metadata.variant, v.name());
        assert_eq!(out.history.len(), 3);
        let net = out.state.net();
        let code_width = out.state.params.value(net.tables.codes[0]).cols();
        if v == Variant::PTmae {
            assert!(net.tables.category.is_none());
            assert_eq!(code_width, 16);
            assert!(out.state.params.by_name("emb.category").is_none());
        } else {
            assert_eq!(code_width, 8);
        }
    }
}

#[test]
fn exploding_updates_abort_with_the_last_finite_state() {
    let tc = TrainConfig {
        learning_rate: 1e300,
        optimizer: OptimizerKind::Sgd,
        ..quick(50)
    };
    match train(&data().records, &data().category_map, &model(), &tc) {
        Err(Error::NonFiniteLoss { step, last_good }) => {
            assert!(step >= 1);
            assert_eq!(last_good.metadata.steps, step - 1);
            assert!(last_good.params.iter().all(|(_, p)| p.value.is_finite()));
        }
        other => panic!("expected a non-finite loss abort, got {:?}", other.map(|o| o.history.len())),
    }
}

#[test]
fn holdout_is_monitored_not_trained_on() {
    let tc = TrainConfig {
        holdout: 0.25,
        log_every: 2,
        ..quick(4)
    };
    let out = train(&data().records, &data().category_map, &model(), &tc).unwrap();
    assert_eq!(out.state.metadata.train_patients, 60);
    assert_eq!(out.holdout_history.len(), 2);
    assert!(out.holdout_history.iter().all(|r| r.l_loss.is_finite()));
    assert!(train(&data().records, &data().category_map, &model(), &TrainConfig { holdout: 1.0, ..quick(1) }).is_err());
}

#[test]
fn loss_history_csv_layout() {
    let csv = loss_history_csv(&trained().history);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,l_loss,l_code,l_cost"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    let r = trained().history[0];
    assert_eq!(first, vec![0.0, r.l_loss, r.l_code, r.l_cost]);
    assert_eq!(csv.lines().count(), 13);
}

#[test]
fn patient_embeddings_are_deterministic_and_cost_sensitive() {
    let state = &trained().state;
    let record = &data().records[5];
    let pe = state.patient_embedding(record).unwrap();
    assert_eq!(pe.len(), 16);
    assert_eq!(pe, state.patient_embedding(record).unwrap());

    let mut dearer = record.clone();
    let v = &mut dearer.visits[0];
    assert_ne!(state.binner.bin(v.cost), state.binner.bin(v.cost * 50.0 + 1000.0));
    v.cost = v.cost * 50.0 + 1000.0;
    assert_ne!(pe, state.patient_embedding(&dearer).unwrap());

    let mut unknown = record.clone();
    unknown.visits[0].drug_codes.push("not-a-code".into());
    unknown.visits[0].claim_type = ClaimType::RX;
    assert!(matches!(state.patient_embedding(&unknown), Err(Error::UnknownCode { .. })));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let state = &trained().state;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tmae");
    save_checkpoint(state, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert!(same_params(&state.params, &loaded.params));
    assert_eq!(loaded.config, state.config);
    assert_eq!(loaded.binner, state.binner);
    assert_eq!(loaded.metadata, state.metadata);
    assert_eq!(loaded.fingerprint(), state.fingerprint());
    let mut r = rng::stream(1, "pick");
    for record in data().records.choose_multiple(&mut r, 10) {
        let a = state.patient_embedding(record).unwrap();
        let b = loaded.patient_embedding(record).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(write_checkpoint(&loaded).unwrap(), write_checkpoint(state).unwrap());
}

#[test]
fn damaged_checkpoints_give_distinct_errors() {
    let bytes = write_checkpoint(&trained().state).unwrap();
    for cut in [0, 2, 7, 15, 40, bytes.len() - 1] {
        assert!(matches!(read_checkpoint(&bytes[..cut]), Err(Error::TruncatedCheckpoint)), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad), Err(Error::BadMagic)));
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(read_checkpoint(&future), Err(Error::VersionMismatch { .. })));
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 8]);
    assert!(matches!(read_checkpoint(&long), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn loaded_state_is_checked_against_expectations() {
    let state = &trained().state;
    assert!(state.ensure_fingerprint(&state.fingerprint()).is_ok());
    assert!(matches!(state.ensure_fingerprint("0000"), Err(Error::FingerprintMismatch { .. })));
    assert!(state.ensure_config(&model()).is_ok());
    assert!(matches!(state.ensure_config(&ModelConfig::with_width(64, 4)), Err(Error::ConfigMismatch(_))));
    let wider = ModelState::new(
        state.params.clone(),
        ModelConfig::with_width(64, 4),
        state.vocab.clone(),
        state.binner.clone(),
        state.cost_scale,
        state.metadata.clone(),
    );
    assert!(matches!(wider, Err(Error::ConfigMismatch(_))));
}
