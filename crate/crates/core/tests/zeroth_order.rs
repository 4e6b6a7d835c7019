//! Statistical checks of the sphere sampler and the gradient estimator.

use lqrpg::lqr::{self, InitialStateModel};
use lqrpg::sim::{truncated_cost, truncated_covariance, Simulator};
use lqrpg::verify::{random_instance, InstanceSpec};
use lqrpg::zorder::{estimate, sample_sphere_matrix, MAX_M};
use lqrpg::{Gain, Mat, Problem, RngHandle, ZerothOrderConfig};

fn scalar() -> Problem {
    // x0 = ±1 makes every rollout cost deterministic given the perturbation.
    let init = InitialStateModel::sphere(1, 1.0).unwrap();
    Problem::new(Mat::scalar(0.5), Mat::scalar(1.0), Mat::scalar(1.0), Mat::scalar(1.0), init).unwrap()
}

#[test]
fn sphere_draws_have_radius_and_zero_mean() {
    let mut rng = RngHandle::new(1, 1).rng();
    let n = 100_000;
    let mut sum = [0.0f64; 4];
    let mut sq = [0.0f64; 4];
    for _ in 0..n {
        let u: Mat = sample_sphere_matrix(2, 2, 0.3, &mut rng);
        assert!((u.frobenius_norm() - 0.3).abs() < 1e-12);
        for (i, v) in u.as_slice().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    for i in 0..4 {
        let mean = sum[i] / n as f64;
        let se = ((sq[i] / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean.abs() <= 3.0 * se, "entry {i}: mean {mean}, se {se}");
    }
}

#[test]
fn one_dimensional_sphere_is_two_points() {
    let mut rng = RngHandle::new(2, 1).rng();
    let n = 10_000;
    let mut total = 0.0;
    for _ in 0..n {
        let u: Mat = sample_sphere_matrix(1, 1, 0.5, &mut rng);
        assert_eq!(u[(0, 0)].abs(), 0.5);
        total += u[(0, 0)];
    }
    // Each draw is ±0.5, so the standard error of the mean is 0.5/√n.
    assert!((total / n as f64).abs() <= 3.0 * 0.5 / (n as f64).sqrt());
}

/// On the scalar problem the estimator averages `(1/r²) C^(ℓ)(K+U) U` with
/// `U = ±r`, whose expectation is the symmetric difference quotient of the
/// truncated cost: the gradient of the smoothed truncated cost.
#[test]
fn estimator_is_unbiased_for_smoothed_truncated_cost() {
    let p = scalar();
    let (r, horizon, m) = (0.2, 30, MAX_M);
    let k = Gain::new(Mat::scalar(0.1));
    let cfg = ZerothOrderConfig::new((1, 1), m, horizon, r);
    let est = estimate(&Simulator::new(&p), &k, &cfg, 3, 0).unwrap();
    let c_plus = truncated_cost(&p, &k.step(&Mat::scalar(1.0), -r), horizon).unwrap();
    let c_minus = truncated_cost(&p, &k.step(&Mat::scalar(1.0), r), horizon).unwrap();
    let mean = (c_plus - c_minus) / (2.0 * r);
    let second = (c_plus * c_plus + c_minus * c_minus) / (2.0 * r * r);
    let se = ((second - mean * mean) / m as f64).sqrt();
    let g = est.grad_hat[(0, 0)];
    assert!((g - mean).abs() <= 3.0 * se, "{g} vs {mean} (se {se})");
    assert_eq!(est.samples_used, m as u64);
}

/// Replicate estimates with independent seeds give the standard error of
/// each entry of `Σ̂`; the pooled mean must sit within three of them.
#[test]
fn covariance_estimate_matches_truncated_covariance() {
    for (seed, d) in [(31u64, 2usize), (32, 3)] {
        let p: Problem = random_instance(seed, &InstanceSpec::new(d, 1)).unwrap();
        let k = Gain::zeros(1, d);
        let (horizon, m, reps) = (25, 2_000, 30);
        // Tiny radius: Σ_{K+U} differs from Σ_K far below the sampling noise.
        let cfg = ZerothOrderConfig::new((1, d), m, horizon, 1e-6);
        let sim = Simulator::new(&p);
        let estimates: Vec<Mat> = (0..reps).map(|i| estimate(&sim, &k, &cfg, seed * 100 + i, 0).unwrap().sigma_hat).collect();
        let exact = truncated_covariance(&p, &k, horizon).unwrap();
        for i in 0..d {
            for j in 0..d {
                let vals: Vec<f64> = estimates.iter().map(|s| s[(i, j)]).collect();
                let mean = vals.iter().sum::<f64>() / reps as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
                let se = (var / reps as f64).sqrt();
                assert!((mean - exact[(i, j)]).abs() <= 3.0 * se, "d={d} ({i},{j}): {mean} vs {} (se {se})", exact[(i, j)]);
            }
        }
        assert!(estimates[0].asymmetry() <= 1e-12);
    }
}

#[test]
fn single_sample_estimate_is_that_trajectory() {
    let (r, horizon) = (0.05, 10);
    let cfg = ZerothOrderConfig::new((1, 1), 1, horizon, r);
    let est = estimate(&Simulator::new(&scalar()), &Gain::zeros(1, 1), &cfg, 0, 0).unwrap();
    // The one rollout has cost Ĉ > 0, so the sign of (1/r²) Ĉ U reveals U.
    let u = r * est.grad_hat[(0, 0)].signum();
    let a = 0.5 - u;
    let sigma: f64 = (0..horizon).map(|t| a.powi(2 * t as i32)).sum();
    let cost = sigma * (1.0 + u * u);
    assert!((est.sigma_hat[(0, 0)] - sigma).abs() < 1e-12);
    assert!((est.grad_hat[(0, 0)] - cost * u / (r * r)).abs() < 1e-9);
}

#[test]
fn exact_gradient_of_scalar_problem() {
    let g = lqr::evaluate(&scalar(), &Gain::zeros(1, 1)).unwrap().grad[(0, 0)];
    assert!((g + 16.0 / 9.0).abs() < 1e-14);
}
