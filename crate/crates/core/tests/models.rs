mod support;

use nowcast_core::models::{
    fit, fit_boosted, fit_elastic_net, fit_forest, fit_ols, fit_pcr, fit_plsr, fit_ridge,
    grow_tree, kkt_gap, soft_threshold, BoostConfig, Family, ForestConfig, ModelSpec, TrainingSet,
    TreeConfig, CD_KKT_TOLERANCE,
};
use nowcast_core::Period;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn linear_data(seed: u64, n: usize, p: usize, noise: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_rows(&mut rng, n, p);
    let e = normal_rows(&mut rng, n, 1);
    let y = x
        .iter()
        .zip(&e)
        .map(|(r, e)| {
            0.3 + r
                .iter()
                .enumerate()
                .map(|(j, v)| v * (j as f64 - 1.0))
                .sum::<f64>()
                + noise * e[0]
        })
        .collect();
    (x, y)
}

/// Simple regression by the textbook covariance formula.
fn simple_regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

#[test]
fn soft_threshold_examples() {
    assert_eq!(soft_threshold(3.0, 1.0), 2.0);
    assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
    assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
}

#[test]
fn random_walk_forecasts() {
    let history = vec![1.0, 2.0, 3.0];
    let ts = TrainingSet {
        x: vec![vec![]; 2],
        y: vec![1.0, 1.0],
        periods: vec![
            Period::quarter(2000, 2).unwrap(),
            Period::quarter(2000, 3).unwrap(),
        ],
        columns: vec![],
        input_names: vec![],
        history,
        query: vec![],
        nowcast_period: Period::quarter(2000, 4).unwrap(),
    };
    assert_eq!(
        fit(&ModelSpec::new("rw", Family::Rw), &ts)
            .unwrap()
            .nowcast(),
        3.0
    );
    let drift = fit(&ModelSpec::new("rwd", Family::RwDrift), &ts).unwrap();
    assert_eq!(drift.nowcast(), 4.0);
    // x is ignored
    assert_eq!(drift.predict_input(&[]), 4.0);
}

#[test]
fn ridge_at_zero_penalty_is_ols() {
    let (x, y) = linear_data(1, 40, 4, 0.3);
    let ols = fit_ols(&x, &y).unwrap();
    let ridge = fit_ridge(&x, &y, 0.0).unwrap();
    assert!(max_abs_diff(&ols.coefs, &ridge.coefs) < 1e-8);
    assert!((ols.intercept - ridge.intercept).abs() < 1e-8);
}

#[test]
fn lasso_single_standardized_predictor_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw: Vec<f64> = normal_rows(&mut rng, 50, 1)
        .into_iter()
        .map(|r| r[0])
        .collect();
    let n = raw.len() as f64;
    let m = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
    let x: Vec<Vec<f64>> = raw.iter().map(|v| vec![(v - m) / sd]).collect();
    let y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, r)| 0.8 * r[0] + ((i * 7) % 5) as f64 * 0.1)
        .collect();
    let ym = y.iter().sum::<f64>() / n;
    let xty: f64 = x.iter().zip(&y).map(|(r, v)| r[0] * (v - ym)).sum::<f64>() / n;
    for lambda in [0.0, 0.1, 0.5, 2.0] {
        let fitb = fit_elastic_net(&x, &y, lambda, 1.0).unwrap().params.coefs[0];
        assert!(
            (fitb - soft_threshold(xty, lambda)).abs() < 1e-9,
            "lambda {lambda}"
        );
    }
}

#[test]
fn pcr_full_rank_and_plsr_single_predictor() {
    let (x, y) = linear_data(2, 30, 3, 0.5);
    let ols = fit_ols(&x, &y).unwrap();
    let pcr = fit_pcr(&x, &y, 3).unwrap();
    for r in &x {
        assert!((ols.predict(r) - pcr.linear.predict(r)).abs() < 1e-6);
    }

    let x1: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0]]).collect();
    let (a, b) = simple_regression(&x.iter().map(|r| r[0]).collect::<Vec<_>>(), &y);
    let pls = fit_plsr(&x1, &y, 1).unwrap();
    for r in &x1 {
        assert!((pls.linear.predict(r) - (a + b * r[0])).abs() < 1e-9);
    }
}

#[test]
fn collinear_pair_has_one_component() {
    let x: Vec<Vec<f64>> = (0..20)
        .map(|i| vec![i as f64, 2.0 * i as f64 + 1.0])
        .collect();
    let y: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
    let pcr = fit_pcr(&x, &y, 1).unwrap();
    assert!((pcr.explained_variance[0] - 1.0).abs() < 1e-12);
}

#[test]
fn stump_splits_between_clusters() {
    let x: Vec<Vec<f64>> = [-3.0, -2.0, -1.5, -0.5, 0.0, 0.7, 1.4, 2.5]
        .iter()
        .map(|v| vec![*v])
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| if r[0] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let rows: Vec<usize> = (0..x.len()).collect();
    let tree = grow_tree(
        &x,
        &y,
        &rows,
        TreeConfig {
            max_depth: 1,
            min_leaf: 1,
        },
        || vec![0],
    );
    let split = tree.nodes[0].split.as_ref().unwrap();
    // brute force: the only zero-loss cut lies between -0.5 and 0.0
    assert!(split.threshold > -0.5 && split.threshold <= 0.0);
    assert_eq!(tree.predict(&[-10.0]), -1.0);
    assert_eq!(tree.predict(&[10.0]), 1.0);
}

#[test]
fn single_unbootstrapped_tree_forest_is_a_tree() {
    let (x, y) = linear_data(3, 40, 3, 0.2);
    let cfg = TreeConfig {
        max_depth: 4,
        min_leaf: 2,
    };
    let forest = fit_forest(
        &x,
        &y,
        ForestConfig {
            trees: 1,
            tree: cfg,
            max_features: 3,
            bootstrap: false,
        },
        9,
    )
    .unwrap();
    let rows: Vec<usize> = (0..x.len()).collect();
    let tree = grow_tree(&x, &y, &rows, cfg, || vec![0, 1, 2]);
    for r in &x {
        assert_eq!(forest.predict(r), tree.predict(r));
    }
}

#[test]
fn gbdt_zero_rate_predicts_mean() {
    let (x, y) = linear_data(4, 25, 2, 0.2);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let cfg = BoostConfig {
        rounds: 20,
        tree: TreeConfig {
            max_depth: 2,
            min_leaf: 1,
        },
        learning_rate: 0.0,
        subsample: 1.0,
    };
    let b = fit_boosted(&x, &y, cfg, 0).unwrap();
    for r in &x {
        assert!((b.predict(r) - mean).abs() < 1e-12);
    }
}

#[test]
fn identity_mlp_fits_noiseless_linear_data() {
    let (x, y) = linear_data(6, 40, 3, 0.0);
    let spec = ModelSpec::new("m", Family::Mlp)
        .with_list("hidden", &[4.0])
        .with_text("activation", "identity")
        .with("epochs", 4000.0)
        .with("step_size", 0.05);
    let m = fit(&spec, &ts_from(x.clone(), y.clone())).unwrap();
    let mse = x
        .iter()
        .zip(&y)
        .map(|(r, v)| (m.predict_input(r) - v).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    assert!(mse < 1e-6, "mse {mse}");
}

#[test]
fn constant_target_forest() {
    let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, (i * i) as f64]).collect();
    let m = fit(
        &ModelSpec::new("rf", Family::RandomForest).with("trees", 7.0),
        &ts_from(x, vec![-1.25; 12]),
    )
    .unwrap();
    assert_eq!(m.predict_input(&[3.0, -40.0]), -1.25);
}

#[test]
fn fitted_model_round_trips_through_text() {
    let (x, y) = linear_data(7, 30, 3, 0.3);
    let m = fit(
        &ModelSpec::new("rf", Family::RandomForest)
            .with("trees", 5.0)
            .with_seed(3),
        &ts_from(x, y),
    )
    .unwrap();
    let back = nowcast_core::models::FittedModel::from_text(&m.to_text()).unwrap();
    assert_eq!(back.nowcast().to_bits(), m.nowcast().to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn elastic_net_endpoints(seed in 0u64..10_000, lambda in 0.01f64..1.0) {
        let (x, y) = linear_data(seed, 30, 4, 0.5);
        let lasso = fit(&ModelSpec::new("l", Family::Lasso).with("lambda", lambda), &ts_from(x.clone(), y.clone())).unwrap();
        let en1 = fit(&ModelSpec::new("e", Family::ElasticNet).with("lambda", lambda).with("alpha", 1.0), &ts_from(x.clone(), y.clone())).unwrap();
        prop_assert!(max_abs_diff(&lasso.linear_params().unwrap().coefs, &en1.linear_params().unwrap().coefs) < 1e-12);
        let ridge = fit_ridge(&x, &y, lambda).unwrap();
        let en0 = fit_elastic_net(&x, &y, lambda, 0.0).unwrap();
        prop_assert!(max_abs_diff(&ridge.coefs, &en0.params.coefs) < 1e-5);
    }

    #[test]
    fn lasso_kkt_holds(seed in 0u64..10_000, lambda in 0.005f64..0.5, p in 2usize..8) {
        let (x, y) = linear_data(seed, 40, p, 1.0);
        let cd = fit_elastic_net(&x, &y, lambda, 1.0).unwrap();
        let gap = kkt_gap(&x, &y, &cd.params, lambda, 1.0);
        prop_assert!(gap <= CD_KKT_TOLERANCE, "gap {gap}");
    }

    #[test]
    fn ridge_shrinks_monotonically(seed in 0u64..10_000, l1 in 0.0f64..5.0, step in 1e-3f64..5.0) {
        let (x, y) = linear_data(seed, 25, 5, 1.0);
        let norm = |l: f64| fit_ridge(&x, &y, l).unwrap().coefs.iter().map(|b| b * b).sum::<f64>().sqrt();
        prop_assert!(norm(l1 + step) <= norm(l1) + 1e-12);
    }

    #[test]
    fn pcr_scores_are_orthogonal(seed in 0u64..10_000, k in 1usize..5) {
        let (x, y) = linear_data(seed, 30, 5, 1.0);
        let pcr = fit_pcr(&x, &y, k).unwrap();
        let scores: Vec<Vec<f64>> = x.iter().map(|r| pcr.scores(r)).collect();
        for a in 0..k {
            for b in (a + 1)..k {
                let dot: f64 = scores.iter().map(|s| s[a] * s[b]).sum();
                prop_assert!(dot.abs() < 1e-8);
            }
        }
        prop_assert!(pcr.explained_variance.windows(2).all(|w| w[0] >= w[1] - 1e-15));
    }

    #[test]
    fn forest_prediction_is_tree_mean(seed in 0u64..10_000, trees in 1usize..12) {
        let (x, y) = linear_data(seed, 30, 3, 0.5);
        let cfg = ForestConfig { trees, tree: TreeConfig { max_depth: 3, min_leaf: 2 }, max_features: 2, bootstrap: true };
        let f = fit_forest(&x, &y, cfg, seed).unwrap();
        for r in x.iter().take(5) {
            let mean = f.trees.iter().map(|t| t.predict(r)).sum::<f64>() / f.trees.len() as f64;
            prop_assert_eq!(f.predict(r).to_bits(), mean.to_bits());
        }
    }

    #[test]
    fn gbdt_training_loss_never_rises(seed in 0u64..10_000, lr in 0.01f64..1.0) {
        let (x, y) = linear_data(seed, 30, 3, 0.5);
        let cfg = BoostConfig { rounds: 25, tree: TreeConfig { max_depth: 2, min_leaf: 1 }, learning_rate: lr, subsample: 1.0 };
        let b = fit_boosted(&x, &y, cfg, seed).unwrap();
        prop_assert!(b.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn fits_are_deterministic(seed in 0u64..1000, family in prop::sample::select(vec![
        Family::Ridge, Family::Lasso, Family::Pcr, Family::RandomForest, Family::Gbdt, Family::Mlp,
    ])) {
        let (x, y) = linear_data(seed, 24, 3, 0.5);
        let spec = ModelSpec::new("m", family).with("trees", 10.0).with("epochs", 50.0).with_seed(seed);
        let a = fit(&spec, &ts_from(x.clone(), y.clone())).unwrap();
        let b = fit(&spec, &ts_from(x.clone(), y)).unwrap();
        for r in &x {
            prop_assert_eq!(a.predict_input(r).to_bits(), b.predict_input(r).to_bits());
        }
    }
}
