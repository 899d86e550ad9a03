mod common;

use common::*;
use robustmdp_core::grad_est::MlmcConfig;
use robustmdp_core::solvers::{reduction_discount, AvgRewardConfig};
use robustmdp_core::*;

const TAU: f64 = 0.1;

fn robust_f(mdp: &TabularMdp, basis: &KernelBasis, xi: &KernelParams) -> f64 {
    let (pi, _) = policy_oracle(mdp, basis, xi, TAU, 1e-10).unwrap();
    objective(mdp, basis, xi, pi.policy(), TAU).unwrap()
}

/// A segment of kernels: state 0 has two variants, all other rows fixed.
fn segment() -> (TabularMdp, KernelBasis, UncertaintySet) {
    let (mdp, _) = instance(3, 2, 1, 21);
    let mut rng = RngSeed(21).rng();
    let variants: Vec<(usize, Vec<f64>)> =
        (0..2).map(|_| (0, (0..2).flat_map(|_| dirichlet(3, &mut rng)).collect())).collect();
    let (basis, blocks) = KernelBasis::s_rectangular(&mdp.nominal(), &variants).unwrap();
    let set = UncertaintySet::s_rect(vec![(
        blocks[0].0,
        blocks[0].1.clone(),
        SimplexBall::new(vec![0.5, 0.5], f64::INFINITY),
    )]);
    (mdp, basis, set)
}

#[test]
fn singleton_set_finishes_in_one_iteration() {
    let (mdp, basis, set) = srect_instance(0.0, 3);
    let out = pgd_solve(&mdp, &basis, &set, &SolverConfig::exact(20, TAU, 1e-8)).unwrap();
    assert_eq!(out.trace.records.len(), 1);
    assert_eq!(out.trace.records[0].gap, 0.0);
    assert_eq!(out.xi, set.center());
}

#[test]
fn pgd_reaches_line_search_minimum_on_a_segment() {
    let (mdp, basis, set) = segment();
    let mut cfg = SolverConfig::exact(400, TAU, 1e-10);
    cfg.step_size = Some(0.02);
    cfg.tol = 1e-9;
    let out = pgd_solve(&mdp, &basis, &set, &cfg).unwrap();
    let f_out = robust_f(&mdp, &basis, &out.xi);
    let mut best = f64::INFINITY;
    for k in 0..=10_000 {
        let t = k as f64 / 10_000.0;
        best = best.min(robust_f(&mdp, &basis, &KernelParams::new(vec![t, 1.0 - t])));
    }
    assert!(f_out - best <= 1e-6, "{f_out} vs {best}");
}

#[test]
fn pgd_descends_monotonically_and_stays_feasible() {
    let (mdp, basis, set) = srect_instance(0.1, 5);
    let mut cfg = SolverConfig::exact(60, TAU, 1e-10);
    cfg.step_size = Some(0.005);
    cfg.record_xi = true;
    let out = pgd_solve(&mdp, &basis, &set, &cfg).unwrap();
    let recs = &out.trace.records;
    assert!(recs.len() > 2);
    for w in recs.windows(2) {
        assert!(w[1].f_value <= w[0].f_value + 1e-12, "{} -> {}", w[0].f_value, w[1].f_value);
    }
    for r in recs {
        assert!(set.contains(r.xi.as_ref().unwrap(), 1e-9));
        assert_eq!(r.env_steps, 0);
    }
    let best = recs.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
    assert_eq!(recs[out.trace.best_iter].gap, best);
}

#[test]
fn pgd_default_step_is_half_inverse_smoothness() {
    let (mdp, basis, set) = srect_instance(0.1, 5);
    let out = pgd_solve(&mdp, &basis, &set, &SolverConfig::exact(2, TAU, 1e-8)).unwrap();
    let l_f = theory_constants(&mdp, &basis, TAU, 2f64.sqrt()).l_f;
    assert!((out.trace.step_parameter - 1.0 / (2.0 * l_f)).abs() < 1e-18);
}

#[test]
fn pgd_rejects_non_rectangular_sets() {
    let (mdp, basis) = instance(3, 2, 3, 1);
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
    assert!(matches!(pgd_solve(&mdp, &basis, &set, &SolverConfig::exact(5, TAU, 1e-8)), Err(Error::InvalidConfig(_))));
}

#[test]
fn pgd_with_mlmc_gradients_is_reproducible() {
    let (mdp, basis, set) = srect_instance(0.1, 6);
    let basis = enforce_pmin(&basis, MixCoefficient::new(0.3).unwrap());
    let mut cfg = SolverConfig::exact(5, TAU, 1e-8);
    cfg.gradient_mode = GradientMode::Mlmc;
    cfg.step_size = Some(0.005);
    cfg.mlmc = Some(MlmcConfig {
        t_max: 64,
        n_samples: 480,
        n_blocks: 24,
        eps: 0.1,
        beta: 0.05,
        lambda_pmin: MixCoefficient::new(0.3).unwrap(),
        seed: RngSeed(17),
        value_noise: 0.0,
    });
    let a = pgd_solve(&mdp, &basis, &set, &cfg).unwrap();
    let b = pgd_solve(&mdp, &basis, &set, &cfg).unwrap();
    assert_eq!(a, b);
    let steps: Vec<u64> = a.trace.records.iter().map(|r| r.env_steps).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn config_validation_rules() {
    let mut cfg = SolverConfig::exact(5, TAU, 1e-8);
    assert!(cfg.validate().is_ok());
    cfg.gradient_mode = GradientMode::Mlmc;
    assert!(cfg.validate().is_err());
    let mut cfg = SolverConfig::exact(5, TAU, 1e-8);
    cfg.mlmc = Some(MlmcConfig {
        t_max: 4,
        n_samples: 24,
        n_blocks: 24,
        eps: 0.1,
        beta: 0.05,
        lambda_pmin: MixCoefficient::new(0.3).unwrap(),
        seed: RngSeed(0),
        value_noise: 0.0,
    });
    assert!(cfg.validate().is_err());
    assert!(SolverConfig::exact(0, TAU, 1e-8).validate().is_err());
    assert!(SolverConfig::exact(5, 0.0, 1e-8).validate().is_err());
    let mut cfg = SolverConfig::exact(5, TAU, 1e-8);
    cfg.step_size = Some(-1.0);
    assert!(cfg.validate().is_err());
}

#[test]
fn fw_stalls_at_an_optimal_vertex() {
    let (mdp, basis) = chain_pair();
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    // slipping more often is worse for the agent, so the adversary sits at e_1
    let f0 = robust_f(&mdp, &basis, &KernelParams::unit(2, 0));
    let f1 = robust_f(&mdp, &basis, &KernelParams::unit(2, 1));
    assert!(f1 < f0);
    let mut cfg = SolverConfig::exact(10, TAU, 1e-10);
    cfg.xi0 = Some(vec![0.0, 1.0]);
    cfg.tol = 1e-9;
    let out = fw_solve(&mdp, &basis, &set, &cfg).unwrap();
    assert_eq!(out.trace.records.len(), 1);
    assert!(out.trace.records[0].gap <= 1e-9);
    assert_eq!(out.xi.xi, vec![0.0, 1.0]);
}

#[test]
fn fw_takes_a_full_step_when_gap_exceeds_curvature() {
    let (mdp, basis) = chain_pair();
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let mut cfg = SolverConfig::exact(2, TAU, 1e-10);
    cfg.xi0 = Some(vec![1.0, 0.0]);
    cfg.curvature = Some(1e-9);
    cfg.record_xi = true;
    let out = fw_solve(&mdp, &basis, &set, &cfg).unwrap();
    assert!(out.trace.records[0].gap >= 1e-9);
    assert_eq!(out.trace.records[1].xi.as_ref().unwrap(), &vec![0.0, 1.0]);
}

#[test]
fn fw_gaps_are_nonnegative_and_iterates_feasible() {
    let (mdp, basis) = instance(3, 2, 4, 8);
    let set = UncertaintySet::vertices(vec![
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.1, 0.7, 0.1, 0.1],
        vec![0.1, 0.1, 0.7, 0.1],
        vec![0.25, 0.25, 0.1, 0.4],
    ]);
    let mut cfg = SolverConfig::exact(40, TAU, 1e-10);
    cfg.curvature = Some(50.0);
    cfg.record_xi = true;
    let out = fw_solve(&mdp, &basis, &set, &cfg).unwrap();
    for r in &out.trace.records {
        assert!(r.gap >= -1e-9);
        assert!(set.contains(r.xi.as_ref().unwrap(), 1e-9));
    }
    let best = out.trace.records[out.trace.best_iter].gap;
    assert!(out.trace.records.iter().all(|r| r.gap >= best));
    let vmin = [0, 1, 2, 3]
        .iter()
        .map(|&k| robust_f(&mdp, &basis, &KernelParams::new(set_vertex(&set, k))))
        .fold(f64::INFINITY, f64::min);
    assert!(robust_f(&mdp, &basis, &out.xi) - vmin <= 0.05 + best);
}

fn set_vertex(set: &UncertaintySet, k: usize) -> Vec<f64> {
    match set {
        UncertaintySet::VertexPolytope { vertices } => vertices[k].clone(),
        _ => unreachable!(),
    }
}

#[test]
fn nash_gap_examples() {
    let (mdp, basis) = instance(3, 2, 2, 12);
    let xi = KernelParams::new(vec![0.4, 0.6]);
    let eps_theta = 1e-6;
    let (pi, _) = policy_oracle(&mdp, &basis, &xi, TAU, eps_theta).unwrap();
    let g = nash_gap(&mdp, &basis, &xi, pi.policy(), TAU, std::slice::from_ref(&xi)).unwrap();
    assert_eq!(g.kernel_gap, 0.0);
    let l_pi = theory_constants(&mdp, &basis, TAU, 2f64.sqrt()).l_pi;
    assert!(g.policy_gap >= -1e-9);
    assert!(g.policy_gap <= l_pi * eps_theta);
    assert!(matches!(nash_gap(&mdp, &basis, &xi, pi.policy(), TAU, &[]), Err(Error::EmptyGrid)));
}

#[test]
fn converged_run_is_an_approximate_equilibrium() {
    let (mdp, basis) = chain_pair();
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let mut cfg = SolverConfig::exact(50, TAU, 1e-10);
    cfg.tol = 1e-9;
    cfg.curvature = Some(1.0);
    let out = fw_solve(&mdp, &basis, &set, &cfg).unwrap();
    let grid: Vec<KernelParams> =
        (0..=20).map(|k| KernelParams::new(vec![k as f64 / 20.0, 1.0 - k as f64 / 20.0])).collect();
    let g = nash_gap(&mdp, &basis, &out.xi, out.policy.policy(), TAU, &grid).unwrap();
    assert!(g.policy_gap <= 0.05 && g.policy_gap >= -1e-9);
    assert!(g.kernel_gap <= 0.05 && g.kernel_gap >= -1e-9);
}

#[test]
fn theory_constants_single_action() {
    let (mut mdp, basis) = instance(3, 1, 2, 2);
    mdp.discount = 0.8;
    let k = theory_constants(&mdp, &basis, 0.7, 1.3);
    assert!((k.l_pi - 2.0 * 1.3 / 0.04).abs() < 1e-12);
}

#[test]
fn theory_constants_match_independent_arithmetic() {
    let (mut mdp, mut basis) = instance(5, 3, 4, 2);
    mdp.discount = 0.9;
    basis.feature_bound = 4.0;
    let g1 = 2f64.sqrt();
    let k = theory_constants(&mdp, &basis, 0.1, g1).with_mismatch(1.5);
    // τ log|A| = 0.1 ln 3
    let reg = 1.0 + 0.1 * 1.0986122886681098;
    let ln_a = 1.0986122886681098;
    let h = 0.1f64;
    let sqrt3 = 1.7320508075688772;
    assert!((k.l_pi - 2.0 * reg * g1 * sqrt3 / (h * h)).abs() < 1e-9);
    assert!((k.l_xi - 2.0 * 4.0 * (1.0 + ln_a) / (h * h)).abs() < 1e-9);
    assert!((k.l_pi_grad - 5.0 * 0.9 * reg * 4.0 * g1 * sqrt3 / h.powi(3)).abs() < 1e-6);
    assert!((k.l_xi_grad - 3.0 * 0.9 * 2.0 * (1.0 + ln_a) * 4.0 / h.powi(3)).abs() < 1e-6);
    let l_f = 13.0 * 3.0 * 2.0 * 0.9 * reg * reg * 4.0 / (0.1 * h.powi(5));
    assert!((k.l_f / l_f - 1.0).abs() < 1e-12);
    assert_eq!(k.mismatch, Some(1.5));
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]);
    let k = k.with_set(&set);
    assert!((k.diameter.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert!((k.c_f_bound.unwrap() - 2.0 * k.l_f).abs() < 1e-6 * k.l_f);
}

#[test]
fn smoothness_constant_across_temperatures() {
    let (mdp, basis) = instance(4, 3, 3, 2);
    let ln_a = 3f64.ln();
    let taus = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];
    let mut prev_scaled = 0.0;
    for &tau in &taus {
        let k = theory_constants(&mdp, &basis, tau, 2f64.sqrt());
        assert!(k.l_f > 0.0 && k.l_pi > 0.0 && k.l_xi > 0.0 && k.l_pi_grad > 0.0 && k.l_xi_grad > 0.0);
        // τ L_F / (1 + τ ln|A|)² does not depend on τ; τ L_F grows with τ
        let base = theory_constants(&mdp, &basis, 1.0, 2f64.sqrt()).l_f / (1.0 + ln_a).powi(2);
        assert!((tau * k.l_f / (1.0 + tau * ln_a).powi(2) / base - 1.0).abs() < 1e-12);
        assert!(tau * k.l_f > prev_scaled);
        prev_scaled = tau * k.l_f;
    }
    // below τ = 1/ln|A| the 1/τ factor dominates and L_F falls as τ grows
    let small: Vec<f64> =
        [0.01, 0.03, 0.1, 0.3].iter().map(|&t| theory_constants(&mdp, &basis, t, 2f64.sqrt()).l_f).collect();
    assert!(small.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn reduction_discount_clamps() {
    assert_eq!(reduction_discount(0.1, 0.0), 0.5);
    assert_eq!(reduction_discount(0.1, 0.15), 0.5);
    assert!((reduction_discount(0.1, 1.0) - 0.9).abs() < 1e-15);
    assert_eq!(reduction_discount(0.01, 1e6), 0.999);
}

fn avg_cfg() -> AvgRewardConfig {
    let mut solver = SolverConfig::exact(60, 0.01, 1e-8);
    solver.curvature = Some(1.0);
    AvgRewardConfig { solver, normalized_curvature: None, initial_span: None, max_restarts: 16 }
}

#[test]
fn constant_reward_average_solve() {
    let (mut mdp, basis) = instance(3, 2, 2, 4);
    mdp.reward = vec![0.3; 6];
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let out = avg_reward_solve(&mdp, &basis, &set, 0.05, &avg_cfg()).unwrap();
    assert_eq!(out.gamma, 0.5);
    assert!((out.summary.gain - 0.3).abs() < 1e-12);
    assert!(out.summary.span < 1e-9);
}

#[test]
fn underestimated_span_triggers_restarts_that_terminate() {
    let (mdp, basis) = chain_pair();
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let mut cfg = avg_cfg();
    cfg.initial_span = Some(1e-3);
    let out = avg_reward_solve(&mdp, &basis, &set, 0.05, &cfg).unwrap();
    assert!(out.restarts > 0);
    assert!(out.restarts <= cfg.max_restarts);
    assert!(out.summary.span <= out.span_estimate * (1.0 + 1e-9) + 1e-12);
    assert!(out.span_estimate >= 1e-3 * 2f64.powi(out.restarts as i32) * (1.0 - 1e-12));
    assert_eq!(out.gamma, reduction_discount(0.05, out.span_estimate));
}

#[test]
fn restart_cap_bounds_the_loop() {
    let (mdp, basis) = chain_pair();
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let mut cfg = avg_cfg();
    cfg.initial_span = Some(1e-6);
    cfg.max_restarts = 2;
    let out = avg_reward_solve(&mdp, &basis, &set, 0.05, &cfg).unwrap();
    assert_eq!(out.restarts, 2);
}
