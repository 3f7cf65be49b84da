use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

use tmae::data::{build_vocabulary, ClaimType, CodeVocabulary, Demographics, EncodedVisit, Gender, Modality};
use tmae::embedding::{
    build_visit_matrix, embed_code, embed_demographics, init_code_tables, pool_visit, sinusoid_embed, AgeGrouper,
    CodeTables, CostBinner, EmbeddingTables, COST_BINS,
};
use tmae::model::{gradcheck_fixture, ModelConfig};
use tmae::rng;
use tmae::tensor::{ParamSet, Tape, Tensor};

const D: usize = 8;

fn vocab() -> CodeVocabulary {
    let (records, categories) = gradcheck_fixture(3);
    build_vocabulary(&records, &categories).unwrap()
}

fn tables(vocab: &CodeVocabulary, concat: bool) -> (ParamSet, EmbeddingTables) {
    let mut cfg = ModelConfig::with_width(D, 2);
    cfg.use_category_concat = concat;
    let width = if concat { D / 2 } else { D };
    let mut params = ParamSet::new();
    let code_tables = init_code_tables(vocab, width, concat, 5);
    let tables = EmbeddingTables::register(&mut params, &cfg, code_tables, &AgeGrouper::default(), 5).unwrap();
    (params, tables)
}

fn zero_all(params: &mut ParamSet) {
    for p in params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

fn visit(diag: Vec<usize>, proc: Vec<usize>, drug: Vec<usize>, claim_type: ClaimType, date: u16) -> EncodedVisit {
    EncodedVisit {
        diag,
        proc,
        drug,
        claim_type,
        date,
        cost: 120.0,
    }
}

fn binner() -> CostBinner {
    CostBinner::fit(&(0..1000).map(f64::from).collect::<Vec<_>>()).unwrap()
}

fn matrix(params: &ParamSet, tables: &EmbeddingTables, vocab: &CodeVocabulary, v: &EncodedVisit) -> Tensor {
    let cats = Modality::ALL.map(|m| vocab.categories_of(m));
    let mut tape = Tape::with_params(params);
    let m = build_visit_matrix(&mut tape, v, &cats, tables, &binner()).unwrap();
    tape.value(m).clone()
}

fn differing_rows(a: &Tensor, b: &Tensor) -> Vec<usize> {
    (0..a.rows()).filter(|&r| a.row(r) != b.row(r)).collect()
}

#[test]
fn binner_on_a_thousand_integers() {
    let b = binner();
    for (i, e) in b.edges()[..COST_BINS].iter().enumerate() {
        assert_eq!(*e, (10 * i) as f64);
    }
    assert_eq!(b.bin(5.0), 0);
    assert_eq!(b.bin(995.0), 99);
    assert_eq!(b.bin(9990.0), 99);
    assert_eq!(b.bin(-3.0), 0);
    assert_eq!(b.bin(10.0), 1);
    assert_eq!(b.fitted_on(), 1000);
}

#[test]
fn binner_degenerate_and_short_inputs() {
    let b = CostBinner::fit(&[42.0; 300]).unwrap();
    assert!(b.edges().iter().all(|e| *e == 42.0));
    for q in [0.0, 41.0, 42.0, 43.0, 1e9] {
        assert_eq!(b.bin(q), 0);
    }
    assert!(CostBinner::fit(&[1.0; 99]).is_err());
    assert!(CostBinner::fit(&[f64::NAN; 200]).is_err());
    assert!(CostBinner::from_edges(vec![0.0; 100], 1).is_err());
}

#[test]
fn sinusoid_examples() {
    for d in [2, 4, 8, 64] {
        let z = sinusoid_embed(0, d).unwrap();
        assert!(z.chunks(2).all(|p| p == [0.0, 1.0]));
    }
    let v = sinusoid_embed(1, 2).unwrap();
    assert!((v[0] - 1f64.sin()).abs() <= 1e-12);
    assert!((v[1] - 1f64.cos()).abs() <= 1e-12);
    let v = sinusoid_embed(1, 4).unwrap();
    assert!((v[2] - 0.01f64.sin()).abs() <= 1e-12);
    assert!(sinusoid_embed(3, 7).is_err());
}

#[test]
fn sinusoid_is_bounded_and_injective_over_a_year() {
    for d in [8, 16, 32, 64] {
        let rows: Vec<Vec<f64>> = (0..=365).map(|i| sinusoid_embed(i, d).unwrap()).collect();
        assert!(rows.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j], "d={d}: {i} and {j} collide");
            }
        }
    }
}

#[test]
fn embed_code_concatenation() {
    let vocab = vocab();
    let (mut params, t) = tables(&vocab, true);
    let m = Modality::Diag;
    let c0 = vocab.category_of(m, 0).unwrap();
    let same = (1..vocab.size(m)).find(|&i| vocab.category_of(m, i) == Some(c0)).unwrap();
    let a = embed_code(&params, &t, m, 0, c0).unwrap();
    let b = embed_code(&params, &t, m, same, c0).unwrap();
    assert_eq!(a.len(), D);
    assert_eq!(a[D / 2..], b[D / 2..]);
    assert_ne!(a[..D / 2], b[..D / 2]);
    assert_eq!(&a[..D / 2], params.value(t.codes[0]).row(0));
    assert!(embed_code(&params, &t, m, vocab.size(m), c0).is_err());
    assert!(embed_code(&params, &t, m, 0, vocab.category_count()).is_err());
    zero_all(&mut params);
    assert_eq!(embed_code(&params, &t, m, 0, c0).unwrap(), vec![0.0; D]);
}

#[test]
fn visit_matrix_rows_and_locality() {
    let vocab = vocab();
    let (params, t) = tables(&vocab, true);
    let base = visit(vec![1], vec![], vec![0], ClaimType::IP, 40);
    let m = matrix(&params, &t, &vocab, &base);
    assert_eq!(m.shape(), [5, D]);

    let moved = visit(vec![1], vec![], vec![0], ClaimType::IP, 41);
    assert_eq!(differing_rows(&m, &matrix(&params, &t, &vocab, &moved)), vec![3]);
    let rx = visit(vec![1], vec![], vec![0], ClaimType::RX, 40);
    assert_eq!(differing_rows(&m, &matrix(&params, &t, &vocab, &rx)), vec![2]);

    let busy = visit(vec![0, 1, 2, 3], vec![0, 1], vec![0, 1, 2], ClaimType::OP, 0);
    assert_eq!(matrix(&params, &t, &vocab, &busy).rows(), 4 + 2 + 3 + 3);
    // without category concatenation code rows are full width
    let (p2, t2) = tables(&vocab, false);
    assert_eq!(matrix(&p2, &t2, &vocab, &busy).shape(), [12, D]);
}

#[test]
fn pooling_is_order_invariant_and_fixed_width() {
    let mut r = rng::stream(1, "pool");
    for rows in [1usize, 5, 50] {
        let data: Vec<f64> = (0..rows * D).map(|_| r.random_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(rows, D, data).unwrap();
        let pooled = |x: &Tensor| {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let p = pool_visit(&mut tape, v).unwrap();
            tape.value(p).data().to_vec()
        };
        let reference = pooled(&x);
        assert_eq!(reference.len(), D);
        if rows == 1 {
            assert_eq!(reference, x.data());
        }
        let mut order: Vec<usize> = (0..rows).collect();
        for _ in 0..100 {
            order.shuffle(&mut r);
            let perm: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
            assert_eq!(pooled(&Tensor::from_rows(&perm).unwrap()), reference);
        }
    }
    let mut tape = Tape::new();
    let empty = tape.constant(Tensor::zeros(&[0, D]));
    assert!(pool_visit(&mut tape, empty).is_err());
}

#[test]
fn demographics_token() {
    let g = AgeGrouper::default();
    assert_eq!(g.group(6), 2);
    assert_eq!(g.group(5), 2);
    assert_eq!(g.group(4), 1);
    assert_eq!(g.group(0), 0);
    assert_eq!(g.group(120), g.group_count() - 1);
    assert!(g.boundaries().windows(2).all(|w| w[0] < w[1]));

    let vocab = vocab();
    let (mut params, t) = tables(&vocab, true);
    let token = |params: &ParamSet, age: u8, gender: Gender| {
        let mut tape = Tape::with_params(params);
        let v = embed_demographics(&mut tape, &Demographics { age_years: age, gender }, &t, &g).unwrap();
        tape.value(v).data().to_vec()
    };
    let a = token(&params, 9, Gender::F);
    assert_eq!(a.len(), D);
    assert_eq!(a, token(&params, 11, Gender::F));
    assert_ne!(a, token(&params, 12, Gender::F));
    assert_ne!(a, token(&params, 9, Gender::M));
    zero_all(&mut params);
    assert_eq!(token(&params, 9, Gender::F), vec![0.0; D]);
}

#[test]
fn register_rejects_missing_category_table() {
    let vocab = vocab();
    let cfg = ModelConfig::with_width(D, 2);
    let CodeTables { codes, .. } = init_code_tables(&vocab, D / 2, true, 0);
    let mut params = ParamSet::new();
    let no_cats = CodeTables { codes, categories: None };
    assert!(EmbeddingTables::register(&mut params, &cfg, no_cats, &AgeGrouper::default(), 0).is_err());
}

proptest! {
    #[test]
    fn equal_frequency_bins(n in 1000usize..3000, seed in any::<u64>()) {
        let mut r = rng::stream(seed, "costs");
        let mut costs: Vec<f64> = (0..n).map(|i| i as f64 + r.random_range(0.0..0.5)).collect();
        costs.shuffle(&mut r);
        let b = CostBinner::fit(&costs).unwrap();
        let mut counts = [0usize; COST_BINS];
        for c in &costs {
            counts[b.bin(*c)] += 1;
        }
        let lo = n / COST_BINS;
        for (i, k) in counts.iter().enumerate() {
            prop_assert!(*k == lo || *k == lo + 1, "bin {} holds {} of {}", i, k, n);
        }
    }
}
