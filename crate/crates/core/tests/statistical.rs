//! Seeded Monte Carlo sanity checks on small designs.

use afdr_core::data::make_folds;
use afdr_core::glm::{cross_validate_lambda, log_grid, LogisticLasso};
use afdr_core::inference::refit_logistic;
use afdr_core::pipeline::{EmptySelector, FixedSupport};
use afdr_core::sim::{generate_synthetic, Scenario};
use afdr_core::{cv_prediction_error, fit_path};

fn scenario(n: usize, p: usize, s0: usize, amplitude: f64) -> Scenario {
    Scenario {
        n,
        p,
        s0,
        amplitude,
        replicates: 1,
        ..Scenario::default()
    }
}

#[test]
fn strong_variable_enters_before_null() {
    let sc = scenario(200, 2, 1, 2.0);
    for rep in 0..20 {
        let syn = generate_synthetic(&sc, rep).unwrap();
        let strong = syn.true_support[0];
        let null = 1 - strong;
        let path = fit_path(syn.dataset.x(), syn.dataset.y(), 100, 1e-4).unwrap();
        assert!(
            path.entry_level[strong] > path.entry_level[null],
            "replicate {rep}: {:?}",
            path.entry_level
        );
    }
}

#[test]
fn pure_noise_cv_prefers_large_penalties() {
    let sc = scenario(200, 10, 0, 0.0);
    let mut near_top = 0;
    for rep in 0..50 {
        let syn = generate_synthetic(&sc, rep).unwrap();
        let d = &syn.dataset;
        let solver = LogisticLasso::new(d.x(), d.y()).unwrap();
        let grid = log_grid(solver.lambda_max(), 100, 1e-4).unwrap();
        let folds = make_folds(d.n(), 10, Some(d.y().as_slice()), rep as u64).unwrap();
        let cv = cross_validate_lambda(d.x(), d.y(), &folds, &grid).unwrap();
        if cv.index < 20 {
            near_top += 1;
        }
    }
    assert!(near_top >= 40, "{near_top} of 50");
}

#[test]
fn true_support_beats_empty_model() {
    let sc = scenario(200, 10, 3, 2.0);
    let mut wins = 0;
    for rep in 0..50 {
        let syn = generate_synthetic(&sc, rep).unwrap();
        let folds = make_folds(sc.n, 10, Some(syn.dataset.y().as_slice()), rep as u64).unwrap();
        let oracle = FixedSupport {
            support: syn.true_support.clone(),
            label: "Oracle".into(),
        };
        let full = cv_prediction_error(&syn.dataset, &oracle, &folds, 1).unwrap();
        let empty = cv_prediction_error(&syn.dataset, &EmptySelector, &folds, 1).unwrap();
        if full.pred_error < empty.pred_error {
            wins += 1;
        }
    }
    assert!(wins >= 48, "{wins} of 50");
}

#[test]
fn refit_expands_penalized_coefficients() {
    let sc = scenario(300, 10, 3, 1.5);
    let (mut larger, mut total) = (0, 0);
    for rep in 0..10 {
        let syn = generate_synthetic(&sc, rep).unwrap();
        let d = &syn.dataset;
        let solver = LogisticLasso::new(d.x(), d.y()).unwrap();
        let fit = solver.fit(0.2 * solver.lambda_max(), None).unwrap();
        let support = fit.support();
        let refit = refit_logistic(d, &support).unwrap();
        for (i, &j) in support.iter().enumerate() {
            total += 1;
            if refit.coef[i + 1].abs() >= fit.beta[j].abs() {
                larger += 1;
            }
        }
    }
    if (larger as f64) < 0.9 * total as f64 {
        eprintln!("warning: refit magnitudes exceed penalized ones in only {larger} of {total}");
    }
    assert!(total > 0);
}
