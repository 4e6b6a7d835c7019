use lqrpg::exact_opt::{update_direction, Status};
use lqrpg::lqr::{self, InitialStateModel};
use lqrpg::riccati::solve_dare_default;
use lqrpg::verify::{self, random_instance, random_stable_policy, InstanceSpec, Verdict};
use lqrpg::{optimize, Gain, Mat, Method, Problem, Problem32, RngHandle, SolverConfig, StepRule, StopRule};

fn generated(seed: u64, d: usize, k: usize) -> Problem {
    random_instance(seed, &InstanceSpec { random_costs: seed.is_multiple_of(2), ..InstanceSpec::new(d, k) }).unwrap()
}

#[test]
fn descent_is_monotone_on_fifty_instances() {
    for seed in 0..50u64 {
        let d = 1 + (seed % 5) as usize;
        let k = 1 + (seed as usize / 5) % d;
        let p = generated(seed, d, k);
        let sol = solve_dare_default(&p).unwrap();
        for method in [Method::Gd, Method::Npg, Method::GaussNewton] {
            for rule in [StepRule::PaperFixed, StepRule::backtracking()] {
                let cfg = SolverConfig::new(method, rule, 200, StopRule::Gap(1e-9 * sol.opt_cost));
                let (_, trace) = optimize(&p, &Gain::zeros(k, d), &cfg, Some(&sol)).unwrap();
                assert_ne!(trace.status, Status::Diverged, "seed {seed} {method:?} {rule:?}");
                assert_eq!(trace.first_increase(), None, "seed {seed} {method:?} {rule:?}");
            }
        }
    }
}

#[test]
fn one_step_contraction_on_random_policies() {
    for seed in 0..40u64 {
        let p = generated(100 + seed, 1 + (seed % 4) as usize, 1);
        let sol = solve_dare_default(&p).unwrap();
        let mut rng = RngHandle::new(seed, 1).rng();
        let k = random_stable_policy(&p, &sol.k_star, 1.0, &mut rng).unwrap();
        for r in [
            verify::check_gauss_newton_contraction(&p, &k, &sol).unwrap(),
            verify::check_npg_contraction(&p, &k, &sol).unwrap(),
        ] {
            assert_eq!(r.verdict, Verdict::Pass, "{}", r.to_json_line());
        }
    }
}

#[test]
fn unit_gauss_newton_step_is_policy_iteration() {
    let p = generated(5, 4, 2);
    let k = Gain::zeros(2, 4);
    let eval = lqr::evaluate(&p, &k).unwrap();
    let next = k.step(&update_direction(Method::GaussNewton, &eval).unwrap(), 1.0);
    // Greedy gain for P_K: (R + BᵀPB)⁻¹ BᵀPA.
    let btp = p.b().t_matmul(&eval.p);
    let greedy = eval.curvature.inverse().unwrap().matmul(&btp.matmul(p.a()));
    assert!((next.gain() - &greedy).frobenius_norm() < 1e-12);
}

#[test]
fn gauss_newton_reaches_scalar_optimum_quickly() {
    let init = InitialStateModel::sphere(1, 1.0).unwrap();
    let p = Problem::new(Mat::scalar(0.5), Mat::scalar(1.0), Mat::scalar(1.0), Mat::scalar(1.0), init).unwrap();
    let sol = solve_dare_default(&p).unwrap();
    let cfg = SolverConfig::new(Method::GaussNewton, StepRule::PaperFixed, 10, StopRule::Gap(1e-10));
    let (k, trace) = optimize(&p, &Gain::zeros(1, 1), &cfg, Some(&sol)).unwrap();
    assert_eq!(trace.status, Status::Converged);
    assert!(trace.iterations() <= 10);
    assert!((k.gain()[(0, 0)] - 0.2655644370746374).abs() < 1e-6);
}

#[test]
fn zero_budget_gives_single_record() {
    let p = generated(9, 3, 1);
    let cfg = SolverConfig::new(Method::Npg, StepRule::PaperFixed, 0, StopRule::GradNorm(0.0));
    let (k, trace) = optimize(&p, &Gain::zeros(1, 3), &cfg, None).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(k.gain(), Gain::zeros(1, 3).gain());
}

#[test]
fn single_precision_run_converges() {
    let p: Problem32 = random_instance(11, &InstanceSpec::new(3, 2)).unwrap();
    let cfg = SolverConfig::new(Method::GaussNewton, StepRule::PaperFixed, 50, StopRule::GradNorm(1e-4f32));
    let (_, trace) = optimize(&p, &lqrpg::Policy::zeros(2, 3), &cfg, None).unwrap();
    assert_eq!(trace.status, Status::Converged);
}
