mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;

use tmae::eval::{
    calinski_harabasz, davies_bouldin, elbow_select, kmeans, kmeans_with, pca_fit_transform, purity, wss_curve,
    KMeansOptions,
};
use tmae::rng;
use tmae::synth::planted_blobs;

use common::{close, instance, oracle_ch, oracle_db};

#[test]
fn hand_computed_two_cluster_example() {
    let points = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![10.0, 0.0], vec![11.0, 0.0]];
    let labels = [0, 0, 1, 1];
    assert!((calinski_harabasz(&points, &labels).unwrap() - 200.0).abs() <= 1e-12);
    assert!((davies_bouldin(&points, &labels).unwrap() - 0.1).abs() <= 1e-12);
}

#[test]
fn far_singletons_have_zero_db() {
    let points = vec![vec![0.0], vec![100.0], vec![200.0], vec![200.5]];
    assert_eq!(davies_bouldin(&points[..3], &[0, 1, 2]).unwrap(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn indices_match_brute_force(seed in any::<u64>()) {
        let (points, labels, k) = instance(seed);
        let ch = calinski_harabasz(&points, &labels).unwrap();
        let db = davies_bouldin(&points, &labels).unwrap();
        prop_assert!(close(ch, oracle_ch(&points, &labels, k), 1e-9), "CH {} vs {}", ch, oracle_ch(&points, &labels, k));
        prop_assert!(close(db, oracle_db(&points, &labels, k), 1e-9), "DB {} vs {}", db, oracle_db(&points, &labels, k));
    }

    #[test]
    fn indices_are_invariant(seed in any::<u64>(), shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
        let (points, labels, k) = instance(seed);
        let ch = calinski_harabasz(&points, &labels).unwrap();
        let db = davies_bouldin(&points, &labels).unwrap();

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng::stream(seed, "perm"));
        let relabelled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        prop_assert_eq!(calinski_harabasz(&points, &relabelled).unwrap(), ch);
        prop_assert_eq!(davies_bouldin(&points, &relabelled).unwrap(), db);

        let moved: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| x + shift).collect()).collect();
        prop_assert!(close(calinski_harabasz(&moved, &labels).unwrap(), ch, 1e-9));
        prop_assert!(close(davies_bouldin(&moved, &labels).unwrap(), db, 1e-9));

        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect();
        prop_assert!(close(calinski_harabasz(&scaled, &labels).unwrap(), ch, 1e-9));
        prop_assert!(close(davies_bouldin(&scaled, &labels).unwrap(), db, 1e-9));
    }

    #[test]
    fn lloyd_iterations_never_raise_wss(seed in any::<u64>()) {
        let (points, _, k) = instance(seed);
        let opts = KMeansOptions { n_init: 3, ..KMeansOptions::new(k, seed) };
        let r = kmeans_with(&points, &opts).unwrap();
        prop_assert!(r.wss_trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.wss_trace);
        prop_assert_eq!(r.wss, *r.wss_trace.last().unwrap());
        let mut used = r.assignments.clone();
        used.sort_unstable();
        used.dedup();
        prop_assert_eq!(used.len(), k);
    }

    #[test]
    fn wss_never_rises_with_k(seed in any::<u64>()) {
        let (points, _, _) = instance(seed);
        let hi = points.len().min(8);
        let runs = wss_curve(&points, 1..=hi, seed).unwrap();
        prop_assert!(runs.windows(2).all(|w| w[1].wss <= w[0].wss));
    }

    #[test]
    fn pca_columns_are_orthogonal_and_ordered(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let (points, _, _) = instance(seed);
        let d = points[0].len();
        let out = d.min(points.len());
        let (proj, pca) = pca_fit_transform(&points, out).unwrap();
        let col = |j: usize| proj.iter().map(|p| p[j]).collect::<Vec<f64>>();
        let norm: f64 = proj.iter().flatten().map(|x| x * x).sum::<f64>().max(1.0);
        for a in 0..out {
            for b in a + 1..out {
                let dot: f64 = col(a).iter().zip(col(b)).map(|(x, y)| x * y).sum();
                prop_assert!(dot.abs() <= 1e-10 * norm, "columns {} {} dot {}", a, b, dot);
            }
        }
        prop_assert!(pca.explained_variance.windows(2).all(|w| w[0] >= w[1]));
        let moved: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| x + shift).collect()).collect();
        let (proj2, _) = pca_fit_transform(&moved, out).unwrap();
        for (p, q) in proj.iter().zip(&proj2) {
            for (x, y) in p.iter().zip(q) {
                prop_assert!((x - y).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn elbow_recovers_planted_blob_counts() {
    for k in [3, 4] {
        for seed in 0..10 {
            let (points, truth) = planted_blobs(k, 40, 10.0, 1.0, seed).unwrap();
            let elbow = elbow_select(&points, 1..=10, seed).unwrap();
            assert_eq!(elbow.k, k, "blobs {k} seed {seed}: {:?}", elbow.curve);
            assert_eq!(elbow.curve.len(), 10);
            let r = kmeans(&points, k, seed).unwrap();
            assert_eq!(purity(&r.assignments, &truth).unwrap(), 1.0);
        }
    }
}

#[test]
fn kmeans_is_deterministic_for_a_seed() {
    let (points, _, _) = instance(5);
    assert_eq!(kmeans(&points, 3, 9).unwrap(), kmeans(&points, 3, 9).unwrap());
}
