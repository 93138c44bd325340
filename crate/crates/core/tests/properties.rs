use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use otcil::learners::{RegStyle, SubLearner};
use otcil::metrics::{immediate_kl, immediate_regret, TraceSeries};
use otcil::rvfl::softmax_rows;
use otcil::solver::{
    bregman_quadratic, offline_kf_fit, offline_ridge_fit, offline_ridge_fit_dual, woodbury_update, PsdMatrix,
};
use otcil::stream::{batchify, split_class_incremental, LabeledDataset, Split, TaskSplitSpec};
use proptest::prelude::*;

fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// A well-conditioned SPD matrix `A A^T / d + I`, returned with its inverse
/// as the learning-rate argument.
fn spd_eta(d: usize) -> impl Strategy<Value = PsdMatrix> {
    matrix(d, d).prop_map(move |a| {
        let mut m = a.dot(&a.t()) / d as f64;
        for i in 0..d {
            m[[i, i]] += 1.0;
        }
        let inv = to_na(m.view()).try_inverse().unwrap();
        PsdMatrix::new(Array2::from_shape_fn((d, d), |(i, j)| inv[(i, j)])).unwrap()
    })
}

fn woodbury_case() -> impl Strategy<Value = (PsdMatrix, Array2<f64>, f64)> {
    (1usize..=32, 1usize..=8).prop_flat_map(|(d, b)| (spd_eta(d), matrix(b, d), 0.0f64..=4.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn woodbury_matches_direct_inverse((eta, d, c) in woodbury_case()) {
        let got = woodbury_update(&eta, d.view(), c).unwrap();
        let eta_inv = to_na(eta.view()).try_inverse().unwrap();
        let dn = to_na(d.view());
        let direct = (eta_inv + dn.transpose() * &dn * c).try_inverse().unwrap();
        let err = got.as_array().indexed_iter()
            .map(|((i, j), v)| (v - direct[(i, j)]).abs())
            .fold(0.0, f64::max);
        prop_assert!(err < 1e-8, "max abs error {err}");
        prop_assert!(got.max_asymmetry() <= 1e-14);
    }
}

fn bregman_case() -> impl Strategy<Value = (Array2<f64>, Array2<f64>, PsdMatrix)> {
    (1usize..=8, 1usize..=4).prop_flat_map(|(d, m)| (matrix(d, m), matrix(d, m), spd_eta(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bregman_is_a_symmetric_nonnegative_quadratic((a, b, metric) in bregman_case()) {
        let ab = bregman_quadratic(a.view(), b.view(), &metric).unwrap();
        let ba = bregman_quadratic(b.view(), a.view(), &metric).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert_eq!(bregman_quadratic(a.view(), a.view(), &metric).unwrap(), 0.0);

        let doubled = PsdMatrix::new(metric.as_array() * 2.0).unwrap();
        let scaled = bregman_quadratic(a.view(), b.view(), &doubled).unwrap();
        prop_assert!((scaled - 2.0 * ab).abs() <= 1e-12 * (1.0 + ab));
    }

    #[test]
    fn bregman_three_point_identity((a, b, metric) in bregman_case(), shift in -1.0f64..1.0) {
        // B(a, c) = B(a, b) + B(b, c) + (a - b)^T M (b - c) for any c.
        let c = &b + shift;
        let lhs = bregman_quadratic(a.view(), c.view(), &metric).unwrap();
        let cross = ((&a - &b) * metric.as_array().dot(&(&b - &c))).sum();
        let rhs = bregman_quadratic(a.view(), b.view(), &metric).unwrap()
            + bregman_quadratic(b.view(), c.view(), &metric).unwrap()
            + cross;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn primal_and_dual_ridge_agree(
        (d, y) in (1usize..=12, 1usize..=12).prop_flat_map(|(n, s)| (matrix(n, s), matrix(n, 3))),
        lambda in 0.05f64..5.0,
    ) {
        let primal = offline_ridge_fit(d.view(), y.view(), lambda).unwrap().theta;
        let dual = offline_ridge_fit_dual(d.view(), y.view(), lambda).unwrap();
        let scale = 1.0 + primal.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (p, q) in primal.iter().zip(dual.iter()) {
            prop_assert!((p - q).abs() <= 1e-9 * scale);
        }
    }
}

fn stream_case() -> impl Strategy<Value = (Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    (2usize..=6, 3usize..=10, 1usize..=4).prop_flat_map(|(d, t, b)| {
        (
            prop::collection::vec(matrix(b, d), t + 1),
            prop::collection::vec(matrix(b, 2), t),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kf_recursion_tracks_offline_minimizer((ds, ys) in stream_case(), k in 0.0f64..3.0) {
        let dim = ds[0].ncols();
        let mut head = SubLearner::new(dim, 2, 1.0, RegStyle::kf(k), 0).unwrap();
        for t in 0..ys.len() {
            head.step(ds[t].view(), ys[t].view(), Some(ds[t + 1].view())).unwrap();
            let oracle = offline_kf_fit(
                ds[..=t].iter().zip(&ys[..=t]).map(|(d, y)| (d.view(), y.view())),
                ds[t + 1].view(),
                k,
                1.0,
            )
            .unwrap();
            let scale = 1.0 + oracle.theta.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (p, q) in head.theta().iter().zip(oracle.theta.iter()) {
                prop_assert!((p - q).abs() <= 1e-8 * scale, "t={t}: {p} vs {q}");
            }
        }
    }

    #[test]
    fn state_size_never_grows((ds, ys) in stream_case()) {
        let mut head = SubLearner::new(ds[0].ncols(), 2, 0.5, RegStyle::kf_bayes(1.0, 1e-5), 3).unwrap();
        let before = head.state_len();
        for t in 0..ys.len() {
            head.step(ds[t].view(), ys[t].view(), Some(ds[t + 1].view())).unwrap();
            prop_assert_eq!(head.state_len(), before);
        }
    }
}

fn labelled(n_per_class: usize, classes: usize, seed: u64) -> LabeledDataset {
    let n = n_per_class * classes;
    let x = Array2::from_shape_fn((n, 3), |(i, j)| ((i * 31 + j * 7) as u64 ^ seed) as f64 % 13.0);
    LabeledDataset::new(x, (0..n).map(|i| i % classes).collect(), classes, Split::Train).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn streams_conserve_samples_and_are_deterministic(
        per_class in 1usize..20,
        q in prop::sample::select(vec![1usize, 2, 5, 10]),
        b in 1usize..30,
        seed in any::<u64>(),
        shuffle in any::<bool>(),
    ) {
        let ds = labelled(per_class, 10, seed);
        let spec = TaskSplitSpec { tasks: q, order_seed: seed, batches_per_class: None, shuffle_within_task: shuffle };
        let tasks = split_class_incremental(&ds, &spec).unwrap();
        let stream = batchify(&ds, &tasks, b).unwrap();
        prop_assert_eq!(stream.total_rows(), ds.len());

        let mut rows: Vec<usize> = tasks.iter().flat_map(|t| t.rows.clone()).collect();
        rows.sort_unstable();
        prop_assert_eq!(rows, (0..ds.len()).collect::<Vec<_>>());

        for batch in stream.learner_batches() {
            prop_assert!(batch.x.nrows() <= b);
            for row in batch.y.rows() {
                prop_assert_eq!(row.sum(), 1.0);
                prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            }
        }
        let again = batchify(&ds, &split_class_incremental(&ds, &spec).unwrap(), b).unwrap();
        prop_assert_eq!(stream.content_hash(), again.content_hash());
        prop_assert_eq!(stream.boundaries().reads(), 0);
    }

    #[test]
    fn kl_nonnegative_and_cumulative_regret_monotone(
        logits in prop::collection::vec(matrix(6, 4), 1..4),
        labels in prop::collection::vec(0usize..4, 6),
    ) {
        let y = otcil::stream::one_hot(&labels, 4);
        let probs: Vec<Array2<f64>> = logits.iter().map(|z| softmax_rows(z.view())).collect();
        let kl = immediate_kl(&probs, y.view()).unwrap();
        prop_assert!(kl >= -1e-12 && kl.is_finite());

        let mut series = TraceSeries::new(1);
        for (t, p) in probs.iter().enumerate() {
            let r = immediate_regret(std::slice::from_ref(p), y.view()).unwrap();
            prop_assert!(r >= 0.0);
            series.push(t, 0.5, 0.5, r, kl);
        }
        prop_assert!(series.validate().is_ok());
        prop_assert!(series.points.windows(2).all(|w| w[1].cum_regret >= w[0].cum_regret));
    }
}
