//! Metric and optimal-coefficient checks against independent computations:
//! dense covariance eigendecomposition, naive variances, and a brute-force
//! grid search over the coefficient.

use alphasvrg::linalg::ParamVector;
use alphasvrg::metrics::{apply_vr, cv_alpha_star, metric2, metric3, optimal_coefficient, GradSampleSet, SampleMode};
use alphasvrg::vr::Alpha;
use alphasvrg::RngState;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn naive_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

fn naive_cov(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n
}

fn to_set(rows: &[Vec<f64>]) -> GradSampleSet<f64> {
    GradSampleSet::new(
        rows.iter().cloned().map(ParamVector::from_vec).collect(),
        SampleMode::Raw,
    )
    .unwrap()
}

fn covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n as f64)
        .collect();
    let mut c = DMatrix::zeros(d, d);
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]) / n as f64;
            }
        }
    }
    c
}

/// Paired current/snapshot samples with a shared component plus independent noise.
fn paired(rng: &mut RngState, n: usize, d: usize, coupling: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut cur = Vec::with_capacity(n);
    let mut snap = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut c, mut s) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for k in 0..d {
            let shared = rng.standard_normal() * (1.0 + k as f64 * 0.3);
            c.push(coupling * shared + rng.standard_normal() * 0.5);
            s.push(shared + rng.standard_normal() * 0.4);
        }
        cur.push(c);
        snap.push(s);
    }
    (cur, snap)
}

fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..20, 1usize..12).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n))
}

proptest! {
    #[test]
    fn metric3_matches_dense_eigendecomposition(rows in rows_strategy()) {
        let set = to_set(&rows);
        let eig = SymmetricEigen::new(covariance(&rows));
        let expect = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let got = metric3(&set).unwrap();
        prop_assert!((got - expect).abs() <= 1e-6 * expect.max(1e-12), "{} vs {}", got, expect);
    }

    #[test]
    fn metric2_is_covariance_trace(rows in rows_strategy()) {
        let set = to_set(&rows);
        let trace = covariance(&rows).trace();
        let m2 = metric2(&set).unwrap();
        prop_assert!((m2 - trace).abs() <= 1e-10 * trace.max(1e-300));
    }

    #[test]
    fn metric3_bounded_by_metric2(rows in rows_strategy()) {
        let set = to_set(&rows);
        prop_assert!(metric3(&set).unwrap() <= metric2(&set).unwrap() * (1.0 + 1e-9) + 1e-15);
    }

    #[test]
    fn optimal_coefficient_never_increases_variance(seed in 0u64..10_000, n in 2usize..32, d in 1usize..8, coupling in -1.5f64..1.5) {
        let mut rng = RngState::new(seed);
        let (cur, snap) = paired(&mut rng, n, d, coupling);
        let (cs, ss) = (to_set(&cur), to_set(&snap));
        let report = optimal_coefficient(&cs, &ss).unwrap();
        let full = ss.mean();
        let reduced = apply_vr(&cs, &ss, &full, &Alpha::PerComponent(report.alpha_star.clone())).unwrap();
        prop_assert!(metric2(&reduced).unwrap() <= metric2(&cs).unwrap() * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn grid_search_agrees_with_closed_form(seed in 0u64..10_000, n in 4usize..33, d in 1usize..9) {
        let mut rng = RngState::new(seed);
        let (cur, snap) = paired(&mut rng, n, d, 0.8);
        let report = optimal_coefficient(&to_set(&cur), &to_set(&snap)).unwrap();
        for k in 0..d {
            let x: Vec<f64> = cur.iter().map(|r| r[k]).collect();
            let y: Vec<f64> = snap.iter().map(|r| r[k]).collect();
            let mut best = (f64::INFINITY, 0.0);
            for step in -200i32..=200 {
                let a = step as f64 / 100.0;
                let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - a * q).collect();
                let v = naive_var(&z);
                if v < best.0 {
                    best = (v, a);
                }
            }
            let closed = report.alpha_star[k];
            if closed.abs() < 2.0 {
                prop_assert!((closed - best.1).abs() <= 0.01 + 1e-12, "k={}: {} vs grid {}", k, closed, best.1);
                // minimality on the grid
                let at = |a: f64| naive_var(&x.iter().zip(&y).map(|(p, q)| p - a * q).collect::<Vec<_>>());
                prop_assert!(at(closed) <= best.0 + 1e-12);
            }
        }
    }

    #[test]
    fn control_variate_identity(seed in 0u64..10_000, n in 2usize..200, coupling in -3.0f64..3.0) {
        let mut rng = RngState::new(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        let x: Vec<f64> = y.iter().map(|v| coupling * v + rng.standard_normal()).collect();
        let (alpha, reduced) = cv_alpha_star(&x, &y).unwrap();
        let vx = naive_var(&x);
        let rho = naive_cov(&x, &y) / (vx.sqrt() * naive_var(&y).sqrt());
        let expect = (1.0 - rho * rho) * vx;
        prop_assert!((alpha - naive_cov(&x, &y) / naive_var(&y)).abs() <= 1e-12 * alpha.abs().max(1.0));
        prop_assert!((reduced - expect).abs() <= 1e-10 * vx, "{} vs {}", reduced, expect);
    }
}

#[test]
fn independent_control_variate_barely_helps() {
    let mut rng = RngState::new(7);
    let x: Vec<f64> = (0..1000).map(|_| rng.standard_normal()).collect();
    let y: Vec<f64> = (0..1000).map(|_| rng.standard_normal()).collect();
    let (alpha, reduced) = cv_alpha_star(&x, &y).unwrap();
    let vx = naive_var(&x);
    assert!(alpha.abs() < 0.1, "alpha {alpha}");
    assert!(reduced >= 0.9 * vx && reduced <= vx, "{reduced} vs {vx}");
}

#[test]
fn identical_sets_give_unit_coefficient() {
    let mut rng = RngState::new(3);
    let (cur, _) = paired(&mut rng, 16, 5, 1.0);
    let r = optimal_coefficient(&to_set(&cur), &to_set(&cur)).unwrap();
    for k in 0..5 {
        assert!((r.alpha_star[k] - 1.0).abs() < 1e-12);
        assert!((r.correlation[k] - 1.0).abs() < 1e-12);
    }
    assert!((r.mean_alpha - 1.0).abs() < 1e-12);
}
