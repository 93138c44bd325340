use super::*;
use crate::solver::{offline_kf_fit, offline_ridge_fit, stack_batches};
use ndarray::{array, Array2};
use rand::Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn random_onehot(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((rows, classes));
    for i in 0..rows {
        y[[i, rng.random_range(0..classes)]] = 1.0;
    }
    y
}

fn rel_err(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    let scale = want.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    got.iter()
        .zip(want.iter())
        .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()))
        / scale
}

struct Stream {
    d: Vec<Array2<f64>>,
    y: Vec<Array2<f64>>,
}

fn random_stream(seed: u64, batches: usize, b: usize, dim: usize, classes: usize) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = (0..batches).map(|_| random_matrix(&mut rng, b, dim)).collect();
    let y = (0..batches).map(|_| random_onehot(&mut rng, b, classes)).collect();
    Stream { d, y }
}

#[test]
fn zero_stream_stays_zero() {
    let mut l = SubLearner::new(3, 2, 1.0, RegStyle::ridge(), 0).unwrap();
    let d = array![[1.0, 2.0, 0.5], [0.0, 1.0, -1.0]];
    l.step_ridge(d.view(), Array2::zeros((2, 2)).view()).unwrap();
    assert!(l.theta().iter().all(|v| *v == 0.0));
}

#[test]
fn ridge_scalar_first_step() {
    let mut l = SubLearner::new(1, 1, 1.0, RegStyle::ridge(), 0).unwrap();
    l.step_ridge(array![[1.0]].view(), array![[1.0]].view()).unwrap();
    assert!((l.theta()[[0, 0]] - 0.5).abs() < 1e-15);
}

#[test]
fn ridge_tracks_offline_ridge() {
    let s = random_stream(11, 10, 4, 6, 3);
    let mut l = SubLearner::new(6, 3, 1.0, RegStyle::ridge(), 0).unwrap();
    for t in 0..10 {
        l.step_ridge(s.d[t].view(), s.y[t].view()).unwrap();
        let views: Vec<_> = s.d[..=t].iter().map(|a| a.view()).collect();
        let yviews: Vec<_> = s.y[..=t].iter().map(|a| a.view()).collect();
        let d_all = stack_batches(&views).unwrap();
        let y_all = stack_batches(&yviews).unwrap();
        let oracle = offline_ridge_fit(d_all.view(), y_all.view(), 1.0).unwrap();
        assert!(rel_err(l.theta(), &oracle.theta) < 1e-9, "t={t}");
    }
}

#[test]
fn kf_zero_equals_ridge() {
    let s = random_stream(3, 8, 5, 7, 4);
    let mut ridge = SubLearner::new(7, 4, 0.5, RegStyle::ridge(), 0).unwrap();
    let mut kf = SubLearner::new(7, 4, 0.5, RegStyle::kf(0.0), 0).unwrap();
    for t in 0..7 {
        ridge.step_ridge(s.d[t].view(), s.y[t].view()).unwrap();
        kf.step_kf(s.d[t].view(), s.y[t].view(), s.d[t + 1].view()).unwrap();
        let diff = (ridge.theta() - kf.theta()).mapv(f64::abs).fold(0.0_f64, |a, v| a.max(*v));
        assert!(diff <= 1e-12);
    }
}

#[test]
fn kf_scalar_hand_solve() {
    let mut l = SubLearner::new(1, 1, 1.0, RegStyle::kf(1.0), 0).unwrap();
    l.step_kf(array![[1.0]].view(), array![[1.0]].view(), array![[2.0]].view())
        .unwrap();
    assert!((l.eta().as_array()[[0, 0]] - 1.0 / 6.0).abs() < 1e-15);
    assert!((l.theta()[[0, 0]] - 1.0 / 6.0).abs() < 1e-15);
}

#[test]
fn kf_matches_direct_minimizer_every_step() {
    for (i, &k) in [0.5, 1.0, 2.0].iter().enumerate() {
        let s = random_stream(100 + i as u64, 31, 3, 8, 3);
        let mut l = SubLearner::new(8, 3, 1.0, RegStyle::kf(k), 0).unwrap();
        for t in 0..30 {
            l.step_kf(s.d[t].view(), s.y[t].view(), s.d[t + 1].view()).unwrap();
            let past = s.d[..=t].iter().zip(&s.y[..=t]).map(|(d, y)| (d.view(), y.view()));
            let oracle = offline_kf_fit(past, s.d[t + 1].view(), k, 1.0).unwrap();
            assert!(rel_err(l.theta(), &oracle.theta) < 1e-8, "k={k} t={t}");
        }
    }
}

#[test]
fn theorem_mode_learning_rate_is_closed_form() {
    let k = 1.3;
    let s = random_stream(5, 12, 4, 6, 2);
    let mut l = SubLearner::new(6, 2, 2.0, RegStyle::kf(k), 0).unwrap();
    let mut gram = Array2::<f64>::eye(6) * 2.0;
    for t in 0..11 {
        l.step_kf(s.d[t].view(), s.y[t].view(), s.d[t + 1].view()).unwrap();
        gram += &s.d[t].t().dot(&s.d[t]);
        let mut full = gram.clone();
        full.scaled_add(k, &s.d[t + 1].t().dot(&s.d[t + 1]));
        let inv_eta = l.eta().inverse().unwrap();
        assert!(rel_err(inv_eta.as_array(), &full) < 1e-7, "t={t}");
    }
}

#[test]
fn paper_strict_skips_first_gram() {
    let style = RegStyle::kf(1.0).with_init_mode(InitMode::PaperStrict);
    let mut l = SubLearner::new(2, 2, 4.0, style, 0).unwrap();
    let d1 = array![[1.0, 0.5]];
    l.step_kf(d1.view(), array![[1.0, 0.0]].view(), array![[0.0, 1.0]].view())
        .unwrap();
    assert_eq!(l.eta_dag(), &PsdMatrix::scaled_identity(2, 0.25));
    // Second batch is absorbed normally.
    l.step_kf(array![[0.0, 1.0]].view(), array![[0.0, 1.0]].view(), array![[1.0, 1.0]].view())
        .unwrap();
    let inv = l.eta_dag().inverse().unwrap();
    let want = array![[4.0, 0.0], [0.0, 5.0]];
    assert!(rel_err(inv.as_array(), &want) < 1e-12);
}

#[test]
fn unseen_class_columns_stay_zero() {
    // Only classes 0 and 2 of 4 ever appear.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let styles = [RegStyle::ridge(), RegStyle::kf(1.0), RegStyle::kf_bayes(1.0, 1e-5)];
    for style in styles {
        let mut l = SubLearner::new(5, 4, 1.0, style, 0).unwrap();
        let mut next = random_matrix(&mut rng, 3, 5);
        for _ in 0..6 {
            let d = next;
            next = random_matrix(&mut rng, 3, 5);
            let mut y = Array2::zeros((3, 4));
            for i in 0..3 {
                y[[i, if rng.random_bool(0.5) { 0 } else { 2 }]] = 1.0;
            }
            l.step(d.view(), y.view(), Some(next.view())).unwrap();
        }
        for row in l.theta().rows() {
            assert_eq!(row[1], 0.0);
            assert_eq!(row[3], 0.0);
        }
        assert!(l.theta().column(0).iter().any(|v| *v != 0.0));
    }
}

#[test]
fn adaptive_k_identity_projection() {
    // D = [I_2 | 0], eta = I  =>  D eta D^T = I_2.
    let d = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let eta = PsdMatrix::scaled_identity(3, 1.0);
    assert_eq!(compute_adaptive_k(d.view(), &eta, 1.0, 0.0).unwrap(), 1.0);
    assert_eq!(compute_adaptive_k(d.view(), &eta, 2.5, 0.0).unwrap(), 2.5);
}

#[test]
fn adaptive_k_diag_projection() {
    let d = array![[1.0, 0.0], [0.0, 3.0_f64.sqrt()]];
    let eta = PsdMatrix::scaled_identity(2, 1.0);
    let k = compute_adaptive_k(d.view(), &eta, 1.0, 0.0).unwrap();
    assert!((k - 1.5).abs() < 1e-12);
}

#[test]
fn adaptive_k_linear_in_kappa() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = random_matrix(&mut rng, 4, 6);
    let eta = PsdMatrix::scaled_identity(6, 0.7);
    let k1 = compute_adaptive_k(d.view(), &eta, 1.0, 1e-5).unwrap();
    let k2 = compute_adaptive_k(d.view(), &eta, 2.0, 1e-5).unwrap();
    assert!((k2 - 2.0 * k1).abs() <= 1e-12 * k2);
}

#[test]
fn trace_routes_agree_for_tall_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_matrix(&mut rng, 9, 4);
    let a = random_matrix(&mut rng, 4, 4);
    let eta = PsdMatrix::new(a.t().dot(&a) + Array2::<f64>::eye(4) * 0.5).unwrap();
    for sigma in [1e-3, 0.1, 1.0] {
        let row = trace_inverse_rowspace(d.view(), &eta, sigma).unwrap();
        let col = trace_inverse_colspace(d.view(), &eta, sigma).unwrap();
        assert!((row - col).abs() <= 1e-8 * row.abs(), "sigma={sigma}: {row} vs {col}");
    }
}

#[test]
fn adaptive_k_rejects_empty_batch() {
    let eta = PsdMatrix::scaled_identity(2, 1.0);
    let d = Array2::<f64>::zeros((0, 2));
    assert!(compute_adaptive_k(d.view(), &eta, 1.0, 1e-5).is_err());
}

fn bayes_fixed(current: f64, next: f64) -> RegStyle {
    RegStyle {
        k_rule: KRule::Fixed { current, next },
        ..RegStyle::kf_bayes(1.0, 1e-5)
    }
}

#[test]
fn bayes_with_zero_k_is_ridge() {
    let s = random_stream(21, 10, 3, 5, 3);
    let mut ridge = SubLearner::new(5, 3, 1.0, RegStyle::ridge(), 0).unwrap();
    let mut bayes = SubLearner::new(5, 3, 1.0, bayes_fixed(0.0, 0.0), 0).unwrap();
    for t in 0..9 {
        ridge.step_ridge(s.d[t].view(), s.y[t].view()).unwrap();
        bayes
            .step_kf_bayes(s.d[t].view(), s.y[t].view(), s.d[t + 1].view())
            .unwrap();
        assert!(rel_err(bayes.theta(), ridge.theta()) < 1e-12);
    }
}

#[test]
fn bayes_with_constant_k_is_kf() {
    let k = 0.8;
    let s = random_stream(22, 10, 3, 5, 3);
    let mut kf = SubLearner::new(5, 3, 1.0, RegStyle::kf(k), 0).unwrap();
    let mut bayes = SubLearner::new(5, 3, 1.0, bayes_fixed(k, k), 0).unwrap();
    for t in 0..9 {
        kf.step_kf(s.d[t].view(), s.y[t].view(), s.d[t + 1].view()).unwrap();
        bayes
            .step_kf_bayes(s.d[t].view(), s.y[t].view(), s.d[t + 1].view())
            .unwrap();
        assert!(rel_err(bayes.theta(), kf.theta()) < 1e-10);
        assert!(rel_err(bayes.eta().as_array(), kf.eta().as_array()) < 1e-10);
    }
}

#[test]
fn bayes_telescoping_with_recorded_k() {
    // eta_{t+1}^{-1} theta_{t+1} - eta_t^{-1} theta_t = D_t^T Y_t, where the
    // inverse learning rates are rebuilt independently from the recorded k.
    let lambda = 1.0;
    let s = random_stream(23, 21, 4, 6, 3);
    let mut l = SubLearner::new(6, 3, lambda, RegStyle::kf_bayes(1.0, 1e-5), 0).unwrap();
    let mut seen = Array2::<f64>::eye(6) * lambda;
    let mut prev_theta = l.theta().clone();
    for t in 0..20 {
        let pair = l
            .step_kf_bayes(s.d[t].view(), s.y[t].view(), s.d[t + 1].view())
            .unwrap();
        assert!(pair.current > 0.0 && pair.next > 0.0);
        let gram_t = s.d[t].t().dot(&s.d[t]);
        let mut inv_prev = seen.clone();
        inv_prev.scaled_add(pair.current, &gram_t);
        seen += &gram_t;
        let mut inv_next = seen.clone();
        inv_next.scaled_add(pair.next, &s.d[t + 1].t().dot(&s.d[t + 1]));

        let lhs = inv_next.dot(l.theta()) - inv_prev.dot(&prev_theta);
        let rhs = s.d[t].t().dot(&s.y[t]);
        assert!(rel_err(&lhs, &rhs) < 1e-8, "t={t}: {}", rel_err(&lhs, &rhs));
        prev_theta = l.theta().clone();
    }
}

#[test]
fn wrong_style_is_contract_error() {
    let mut l = SubLearner::new(2, 2, 1.0, RegStyle::kf(1.0), 0).unwrap();
    let err = l
        .step_ridge(array![[1.0, 0.0]].view(), array![[1.0, 0.0]].view())
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn shape_mismatch_is_contract_error() {
    let mut l = SubLearner::new(2, 2, 1.0, RegStyle::ridge(), 0).unwrap();
    assert!(matches!(
        l.step_ridge(array![[1.0, 0.0, 1.0]].view(), array![[1.0, 0.0]].view()),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        l.step_ridge(array![[1.0, 0.0]].view(), array![[1.0, 0.0, 0.0]].view()),
        Err(Error::Contract(_))
    ));
    // A failed step leaves the state untouched.
    assert_eq!(l.steps(), 0);
}

#[test]
fn invalid_styles_rejected() {
    assert!(SubLearner::new(2, 2, 1.0, RegStyle::kf(-1.0), 0).is_err());
    assert!(SubLearner::new(2, 2, 1.0, RegStyle::kf_bayes(0.0, 1e-5), 0).is_err());
    assert!(SubLearner::new(2, 2, 1.0, RegStyle::kf_bayes(1.0, 0.0), 0).is_err());
    assert!(SubLearner::new(2, 2, 0.0, RegStyle::ridge(), 0).is_err());
}

#[test]
fn state_size_is_constant() {
    let s = random_stream(30, 40, 5, 6, 3);
    let mut l = SubLearner::new(6, 3, 1.0, RegStyle::kf_bayes(1.0, 1e-5), 0).unwrap();
    let before = l.state_len();
    for t in 0..39 {
        l.step(s.d[t].view(), s.y[t].view(), Some(s.d[t + 1].view())).unwrap();
        assert_eq!(l.state_len(), before);
    }
}

#[test]
fn stream_end_recovers_offline_ridge() {
    // With no next batch the final kf step cancels the last forward term and
    // lands on the ridge solution over everything seen.
    let s = random_stream(31, 6, 4, 5, 2);
    let mut l = SubLearner::new(5, 2, 1.0, RegStyle::kf(1.7), 0).unwrap();
    for t in 0..6 {
        let next = if t + 1 < 6 { Some(s.d[t + 1].view()) } else { None };
        l.step(s.d[t].view(), s.y[t].view(), next).unwrap();
    }
    let views: Vec<_> = s.d.iter().map(|a| a.view()).collect();
    let yviews: Vec<_> = s.y.iter().map(|a| a.view()).collect();
    let oracle = offline_ridge_fit(
        stack_batches(&views).unwrap().view(),
        stack_batches(&yviews).unwrap().view(),
        1.0,
    )
    .unwrap();
    assert!(rel_err(l.theta(), &oracle.theta) < 1e-9);
}

#[test]
fn bayes_stream_end_has_no_forward_pair() {
    let s = random_stream(32, 5, 4, 5, 2);
    let mut l = SubLearner::new(5, 2, 1.0, RegStyle::kf_bayes(1.0, 1e-5), 0).unwrap();
    for t in 0..5 {
        let next = if t + 1 < 5 { Some(s.d[t + 1].view()) } else { None };
        let pair = l.step(s.d[t].view(), s.y[t].view(), next).unwrap();
        assert_eq!(pair.is_some(), t + 1 < 5);
    }
    // Final learning rate carries no forward term.
    assert_eq!(l.eta(), l.eta_dag());
    assert!(l.theta().iter().all(|v| v.is_finite()));
}

#[test]
fn non_replay_poisoned_history() {
    // Earlier batches are overwritten with NaN after use; any later access
    // would poison the weights.
    let mut s = random_stream(40, 12, 3, 4, 2);
    let clean = random_stream(40, 12, 3, 4, 2);
    let mut a = SubLearner::new(4, 2, 1.0, RegStyle::kf_bayes(1.0, 1e-5), 0).unwrap();
    let mut b = a.clone();
    for t in 0..11 {
        a.step(s.d[t].view(), s.y[t].view(), Some(s.d[t + 1].view())).unwrap();
        b.step(clean.d[t].view(), clean.y[t].view(), Some(clean.d[t + 1].view()))
            .unwrap();
        s.d[t].fill(f64::NAN);
        s.y[t].fill(f64::NAN);
        assert_eq!(a.theta(), b.theta());
    }
}
