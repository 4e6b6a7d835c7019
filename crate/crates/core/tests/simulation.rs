//! Monte Carlo rollouts against the exact truncated quantities.

use lqrpg::lqr::InitialStateModel;
use lqrpg::sim::{rollout, sample_initial_state, truncated_cost, truncated_covariance};
use lqrpg::verify::{random_instance, InstanceSpec};
use lqrpg::{Gain, Mat, Problem, RngHandle};

#[test]
fn mean_rollout_cost_matches_truncated_cost() {
    let p: Problem = random_instance(21, &InstanceSpec::new(3, 1)).unwrap();
    let k = Gain::zeros(1, 3);
    let horizon = 40;
    let n = 20_000;
    let mut rng = RngHandle::new(21, 5).rng();
    let costs: Vec<f64> = (0..n)
        .map(|_| {
            let x0 = sample_initial_state(p.init(), &mut rng).unwrap();
            rollout(&p, &k, &x0, horizon).unwrap().total_cost()
        })
        .collect();
    let mean = costs.iter().sum::<f64>() / n as f64;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let exact = truncated_cost(&p, &k, horizon).unwrap();
    assert!((mean - exact).abs() <= 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn mean_second_moment_matches_truncated_covariance() {
    let init = InitialStateModel::cube(2);
    let p = Problem::new(
        Mat::from_rows(&[vec![0.6, 0.2], vec![-0.1, 0.5]]).unwrap(),
        Mat::from_rows(&[vec![1.0], vec![0.3]]).unwrap(),
        Mat::identity(2),
        Mat::identity(1),
        init,
    )
    .unwrap();
    let k = Gain::new(Mat::from_rows(&[vec![0.2, 0.1]]).unwrap());
    let horizon = 30;
    let n = 20_000;
    let mut rng = RngHandle::new(4, 2).rng();
    let samples: Vec<Mat> = (0..n)
        .map(|_| {
            let x0 = sample_initial_state(p.init(), &mut rng).unwrap();
            rollout(&p, &k, &x0, horizon).unwrap().state_second_moment()
        })
        .collect();
    let exact = truncated_covariance(&p, &k, horizon).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let vals: Vec<f64> = samples.iter().map(|s| s[(i, j)]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - exact[(i, j)]).abs() <= 4.0 * se, "({i},{j}): {mean} vs {}", exact[(i, j)]);
        }
    }
}

#[test]
fn rollout_is_reproducible_per_stream() {
    let p: Problem = random_instance(2, &InstanceSpec::new(2, 2)).unwrap();
    let draw = || sample_initial_state(p.init(), &mut RngHandle::for_iteration(8, 3, 17).rng()).unwrap();
    assert_eq!(draw(), draw());
    let other = sample_initial_state(p.init(), &mut RngHandle::for_iteration(8, 3, 18).rng()).unwrap();
    assert_ne!(draw(), other);
}
