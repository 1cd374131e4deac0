mod common;

use lmprior::prior::{
    build_graph, build_knn, global_bandwidth, global_similarity, local_moments, shrink, Cholesky,
    GraphParams, KernelKind, SimilarityGraph,
};
use lmprior::regularizer::{graph_penalty, laplacian_form, PrecisionBlocks};
use ndarray::Array2;
use proptest::prelude::*;

use common::*;

fn points(max_n: usize, max_d: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        (
            proptest::collection::vec(-3.0f64..3.0, n * d),
            proptest::collection::vec(any::<prop::sample::Index>(), n),
        )
            .prop_map(move |(v, dup)| {
                let mut x = Array2::from_shape_vec((n, d), v).unwrap();
                // copy roughly a quarter of the rows from earlier rows
                for i in 1..n {
                    if dup[i].index(4) == 0 {
                        let j = dup[i].index(i);
                        let row = x.row(j).to_owned();
                        x.row_mut(i).assign(&row);
                    }
                }
                x
            })
    })
}

fn symmetric_similarity(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..=1.0], n * n).prop_map(move |v| {
            let mut s = Array2::zeros((n, n));
            for i in 0..n {
                for k in i + 1..n {
                    s[[i, k]] = v[i * n + k];
                    s[[k, i]] = v[i * n + k];
                }
            }
            s
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_matches_full_sort(x in points(40, 5), kf in 0.0f64..1.0) {
        let k = 1 + (kf * (x.nrows() - 1) as f64) as usize;
        let got = build_knn(x.view(), k).unwrap();
        let want = knn_oracle(x.view(), k);
        for i in 0..x.nrows() {
            prop_assert_eq!(got.of(i)[0], i);
            prop_assert_eq!(got.of(i), want[i].as_slice());
        }
    }

    #[test]
    fn graph_weights_in_unit_interval_and_symmetric(x in points(30, 4), local in any::<bool>()) {
        prop_assume!(x.nrows() >= 2);
        let kind = if local { KernelKind::Local } else { KernelKind::Global };
        let spread = global_bandwidth(x.view());
        prop_assume!(spread.is_ok());
        let g = build_graph(x.view(), GraphParams { eps: 0.2, ..GraphParams::new(x.nrows().min(5), kind) }).unwrap();
        for i in 0..x.nrows() {
            prop_assert_eq!(g.weight(i, i), 1.0);
            for &(k, s) in g.neighbors(i) {
                prop_assert!(s > 0.0 && s <= 1.0);
                prop_assert_eq!(g.weight(i, k as usize), g.weight(k as usize, i));
            }
        }
    }

    #[test]
    fn global_bandwidth_matches_oracle(x in points(30, 6)) {
        prop_assume!(x.nrows() >= 2);
        if let Ok(l) = global_bandwidth(x.view()) {
            let o = global_lambda_oracle(x.view());
            prop_assert!(((l - o) / o).abs() < 1e-10);
        }
    }

    #[test]
    fn global_kernel_rotation_scale_invariant(seed in any::<u64>(), n in 2usize..20, d in 1usize..6, c in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x = uniform_matrix(&mut r, n, d, 1.0);
        let q = random_orthogonal(&mut r, d);
        let y = x.dot(&q) * c;
        let lx = global_bandwidth(x.view()).unwrap();
        let ly = global_bandwidth(y.view()).unwrap();
        for i in 0..n {
            for j in 0..n {
                let a = global_similarity(x.row(i), x.row(j), lx);
                let b = global_similarity(y.row(i), y.row(j), ly);
                prop_assert!(((a - b) / a).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shrunk_covariance_is_positive_definite(seed in any::<u64>(), k in 1usize..6, d in 1usize..10, eps in 1e-4f64..10.0) {
        let mut r = rng(seed);
        let x = uniform_matrix(&mut r, k, d, 2.0);
        let nb: Vec<usize> = (0..k).collect();
        let raw = local_moments(x.view(), &nb).cov;
        let raw_min = to_na(raw.view()).symmetric_eigen().eigenvalues.min();
        prop_assert!(raw_min >= -1e-12);
        let s = shrink(&raw, eps);
        let eig = to_na(s.view()).symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > 0.0);
        prop_assert!(Cholesky::factor(&s).is_ok());
        // shrinkage shifts every eigenvalue by the same ridge
        let tr: f64 = raw.diag().sum();
        let ridge = if tr > 0.0 { eps * tr / d as f64 } else { eps };
        let mut a: Vec<f64> = to_na(raw.view()).symmetric_eigen().eigenvalues.iter().map(|v| v + ridge).collect();
        let mut b: Vec<f64> = eig.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn local_weights_match_linear_algebra_oracle(seed in any::<u64>(), n in 4usize..25, d in 1usize..5) {
        let mut r = rng(seed);
        let x = uniform_matrix(&mut r, n, d, 1.0);
        let k = 4.min(n);
        let knn = build_knn(x.view(), k).unwrap();
        for i in 0..n {
            let cov = shrink(&local_moments(x.view(), knn.of(i)).cov, 0.3);
            let kern = lmprior::prior::LocalKernel::new(&cov).unwrap();
            let s = shrunk_cov_oracle(x.view(), knn.of(i), 0.3);
            for &j in knn.of(i) {
                let got = kern.similarity(x.row(i), x.row(j));
                let want = mahalanobis_weight(&s, &x.row(i).to_vec(), &x.row(j).to_vec()).max(lmprior::prior::MIN_WEIGHT);
                prop_assert!(((got - want) / want).abs() <= 1e-8, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn laplacian_identity(s in symmetric_similarity(8), seed in any::<u64>(), d in 1usize..=4) {
        let n = s.nrows();
        let z = uniform_matrix(&mut rng(seed), n, d, 2.0);
        let q = laplacian_form(z.view(), s.view()).unwrap();
        let mut sum = 0.0;
        for i in 0..n {
            for k in 0..n {
                let diff = &z.row(i) - &z.row(k);
                sum += s[[i, k]] * diff.dot(&diff);
            }
        }
        prop_assert!(q >= 0.0);
        prop_assert!((q - sum).abs() <= 1e-10 * sum.max(1e-300));
        // the dense matrix agrees with the block form
        let lam = PrecisionBlocks::from_similarity(s.view()).unwrap().dense(d);
        let flat = ndarray::Array1::from_iter(z.iter().copied());
        let dense_q = flat.dot(&lam.dot(&flat));
        prop_assert!((dense_q - q).abs() <= 1e-10 * q.abs().max(1.0));
        // constant embeddings have zero penalty
        let zc = Array2::from_shape_fn((n, d), |(_, j)| z[[0, j]]);
        prop_assert!(laplacian_form(zc.view(), s.view()).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn full_batch_penalty_is_the_laplacian_form(seed in any::<u64>(), n in 2usize..10, d in 1usize..4) {
        let mut r = rng(seed);
        let x = uniform_matrix(&mut r, n, 2, 1.0);
        let g = build_graph(x.view(), GraphParams::new(n.min(4), KernelKind::Global)).unwrap();
        let z = uniform_matrix(&mut r, n, d, 1.0);
        let s = Array2::from_shape_fn((n, n), |(i, k)| if i == k { 0.0 } else { g.weight(i, k) });
        let all: Vec<usize> = (0..n).collect();
        let p = graph_penalty(z.view(), &g, &all).unwrap().value;
        let q = laplacian_form(z.view(), s.view()).unwrap();
        prop_assert!((p - q).abs() <= 1e-10 * q.max(1e-300));
    }

    #[test]
    fn graph_file_round_trips(x in points(20, 3)) {
        prop_assume!(x.nrows() >= 2 && global_bandwidth(x.view()).is_ok());
        let g = build_graph(x.view(), GraphParams { eps: 0.5, ..GraphParams::new(3.min(x.nrows()), KernelKind::Local) }).unwrap();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        let back = SimilarityGraph::read_from(&buf[..]).unwrap();
        prop_assert!(back == g);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(buf, again);
    }
}
