use anmmm::clustering::{adjusted_rand_index, kmeans, KMeansOptions};
use anmmm::gppom::{objective, GppomState, Hyperparams};
use anmmm::io::{parse_pairs, subsample_indices, to_csv};
use anmmm::kernels::{hsic_biased, rbf_gram, KernelWidths};
use anmmm::synth::{generate, Family, MixtureSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn points(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, n)
}

fn gram(v: &[f64], g: f64) -> anmmm::kernels::GramMatrix {
    rbf_gram(&DMatrix::from_column_slice(v.len(), 1, v), &KernelWidths::uniform(1, g).unwrap()).unwrap()
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hsic_symmetric_and_nonnegative((a, b) in (2usize..15).prop_flat_map(|n| (points(n), points(n))), g in 0.1..3.0f64) {
        let k = gram(&a, g);
        let l = gram(&b, 1.0);
        let kl = hsic_biased(&k, &l).unwrap();
        let lk = hsic_biased(&l, &k).unwrap();
        prop_assert!((kl - lk).abs() <= 1e-14);
        prop_assert!(kl >= -1e-14);
    }

    #[test]
    fn rbf_gram_is_permutation_equivariant((v, perm) in (2usize..12).prop_flat_map(|n| (points(n), permutation(n)))) {
        let k = gram(&v, 0.7);
        let pv: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
        let pk = gram(&pv, 0.7);
        for i in 0..v.len() {
            for j in 0..v.len() {
                prop_assert_eq!(pk.matrix()[(i, j)], k.matrix()[(perm[i], perm[j])]);
            }
        }
    }

    #[test]
    fn unpenalized_objective_is_permutation_invariant(
        (x, y, t, perm) in (3usize..10).prop_flat_map(|n| (points(n), points(n), points(n), permutation(n)))
    ) {
        let state = |x: &[f64], y: &[f64], t: &[f64]| {
            let hyper = Hyperparams::new(20.0, KernelWidths::uniform(1, 0.8).unwrap(), KernelWidths::uniform(1, 1.3).unwrap()).unwrap();
            GppomState::new(
                DMatrix::from_column_slice(x.len(), 1, x),
                DVector::from_column_slice(y),
                DMatrix::from_column_slice(t.len(), 1, t),
                hyper,
            )
            .unwrap()
        };
        let p = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let a = objective(&state(&x, &y, &t), 0.0).unwrap().total;
        let b = objective(&state(&p(&x), &p(&y), &p(&t)), 0.0).unwrap().total;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn ari_symmetric_and_relabel_invariant(
        (a, b) in (2usize..40).prop_flat_map(|n| (prop::collection::vec(1usize..4, n), prop::collection::vec(1usize..5, n)))
    ) {
        let ab = adjusted_rand_index(&a, &b);
        let ba = adjusted_rand_index(&b, &a);
        match (ab, ba) {
            (Ok(x), Ok(y)) => {
                prop_assert!((x - y).abs() <= 1e-12);
                let relabeled: Vec<usize> = a.iter().map(|&l| 10 - l).collect();
                prop_assert!((adjusted_rand_index(&relabeled, &b).unwrap() - x).abs() <= 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&x));
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "symmetry of failure"),
        }
    }

    #[test]
    fn kmeans_trace_monotone_and_fixed_point(v in (2usize..30).prop_flat_map(points), c in 1usize..4, seed in 0u64..1000) {
        prop_assume!(c <= v.len());
        let m = DMatrix::from_column_slice(v.len(), 1, &v);
        let r = kmeans(&m, c, &KMeansOptions { seed, ..KMeansOptions::default() }).unwrap();
        prop_assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(r.labels.iter().all(|&l| (1..=c).contains(&l)));
        for (i, &l) in r.labels.iter().enumerate() {
            let own = (v[i] - r.centroids[(l - 1, 0)]).powi(2);
            for k in 0..c {
                prop_assert!(own <= (v[i] - r.centroids[(k, 0)]).powi(2) + 1e-12);
            }
        }
    }

    #[test]
    fn subsample_returns_distinct_indices(n in 1usize..200, frac in 0.0..=1.0f64, seed: u64) {
        let k = (n as f64 * frac) as usize;
        let mut idx = subsample_indices(n, k, seed).unwrap();
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.iter().all(|&i| i < n));
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), k);
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e6..1e6f64, 3), 1..20)) {
        let text = to_csv(&rows, &["generated".to_string()]);
        let back = parse_pairs(&text, 0, 2).unwrap();
        prop_assert_eq!(back.rows, rows);
    }

    #[test]
    fn synth_is_deterministic(seed: u64, c in 1usize..5, n in 1usize..60) {
        let spec = MixtureSpec::standard(Family::F3, c, n).unwrap();
        prop_assert_eq!(generate(&spec, seed).unwrap(), generate(&spec, seed).unwrap());
    }
}
