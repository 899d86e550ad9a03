#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use robustmdp_core::verify::{
    brute_force_robust_avg, brute_force_worst_kernel, finite_diff_grad, policy_lattice, soft_policy_grid,
    worst_kernel_value, GridSpec, WorstKernelMode,
};
use robustmdp_core::*;

const TAU: f64 = 0.1;

#[test]
fn finite_differences_are_exact_for_linear_objectives() {
    let c = [0.3, -1.2, 2.5, 0.7];
    let xi = [0.1, 0.2, 0.3, 0.4];
    let g = finite_diff_grad(|x| Ok(x.iter().zip(&c).map(|(a, b)| a * b).sum()), &xi, 1e-4).unwrap();
    assert!(max_abs_diff(&g, &tangent(&c)) < 1e-10);
    assert!(g.iter().sum::<f64>().abs() < 1e-10);
}

#[test]
fn finite_difference_error_shrinks_quadratically() {
    // a quadratic is differenced exactly by central differences, so use a cubic
    let f = |x: &[f64]| Ok(x[0].powi(3) + 2.0 * x[1].powi(3) - x[0] * x[1] * x[2] + x[2].powi(3));
    let xi: [f64; 3] = [0.2, 0.5, 0.3];
    let exact = tangent(&[
        3.0 * xi[0].powi(2) - xi[1] * xi[2],
        6.0 * xi[1].powi(2) - xi[0] * xi[2],
        -xi[0] * xi[1] + 3.0 * xi[2].powi(2),
    ]);
    let err = |h: f64| max_abs_diff(&finite_diff_grad(f, &xi, h).unwrap(), &exact);
    let ratio = err(1e-3) / err(5e-4);
    assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
}

#[test]
fn finite_differences_match_the_analytic_gradient() {
    let mut rng = RngSeed(4).rng();
    for seed in 0..5 {
        let (mdp, basis) = instance(5, 3, 4, 500 + seed);
        let pi = policy(5, 3, &mut rng);
        let x = xi(4, &mut rng);
        let fd = finite_diff_grad(|z| objective(&mdp, &basis, &KernelParams::new(z.to_vec()), &pi, TAU), &x.xi, 1e-5)
            .unwrap();
        let exact = tangent(&exact_grad_xi(&mdp, &basis, &x, &pi, TAU).unwrap());
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_abs_diff(&fd, &exact) <= 1e-6 * scale);
    }
}

#[test]
fn finite_difference_preconditions() {
    let f = |x: &[f64]| Ok(x[0]);
    assert!(matches!(finite_diff_grad(f, &[0.5, 0.5], 1e-2), Err(Error::InvalidConfig(_))));
    assert!(matches!(finite_diff_grad(f, &[0.5, 0.5], 1e-9), Err(Error::InvalidConfig(_))));
    assert_eq!(finite_diff_grad(f, &[1.0, 0.0], 1e-4), Err(Error::InfeasiblePerturbation));
}

#[test]
fn simplex_lattice_size_and_feasibility() {
    let pts = GridSpec::SimplexLattice { dim: 3, resolution: 4, max_points: 100 }.points().unwrap();
    assert_eq!(pts.len(), 15);
    assert!(pts.iter().all(|p| p.in_unit_simplex()));
    let too_many = GridSpec::SimplexLattice { dim: 3, resolution: 4, max_points: 10 };
    assert_eq!(too_many.points(), Err(Error::GridTooLarge { points: 15, cap: 10 }));
}

#[test]
fn polytope_and_set_lattices_stay_inside() {
    let verts = vec![vec![0.6, 0.2, 0.2], vec![0.2, 0.6, 0.2], vec![0.3, 0.3, 0.4]];
    let set = UncertaintySet::vertices(verts.clone());
    let spec = GridSpec::PolytopeLattice { vertices: verts.clone(), resolution: 6, max_points: 1000 };
    let pts = spec.points().unwrap();
    assert_eq!(pts.len(), 28);
    assert!(pts.iter().all(|p| set.contains(&p.xi, 1e-9)));
    assert_eq!(pts, spec.points().unwrap());

    let (_, _, srect) = srect_instance(0.1, 2);
    let pts = GridSpec::SetLattice { set: srect.clone(), resolution: 12, max_points: 10_000 }.points().unwrap();
    assert!(!pts.is_empty());
    assert!(pts.iter().all(|p| srect.contains(&p.xi, 1e-9)));

    let ball = UncertaintySet::simplex_ball(vec![0.4, 0.3, 0.3], 0.15);
    let pts = GridSpec::SetLattice { set: ball.clone(), resolution: 20, max_points: 1000 }.points().unwrap();
    assert!(pts.iter().all(|p| ball.contains(&p.xi, 1e-12)));
    let vs = GridSpec::Vertices { vertices: verts, max_points: 2 };
    assert!(matches!(vs.points(), Err(Error::GridTooLarge { .. })));
}

#[test]
fn worst_kernel_values_agree_with_the_main_path() {
    let mut rng = RngSeed(6).rng();
    let (mdp, basis) = instance(4, 2, 3, 61);
    let pi = policy(4, 2, &mut rng);
    for _ in 0..10 {
        let x = xi(3, &mut rng);
        let fixed = worst_kernel_value(&mdp, &basis, &x, WorstKernelMode::FixedPolicy(&pi), TAU).unwrap();
        assert!((fixed - objective(&mdp, &basis, &x, &pi, TAU).unwrap()).abs() < 1e-10);
        let robust = worst_kernel_value(&mdp, &basis, &x, WorstKernelMode::Robust, TAU).unwrap();
        let (br, _) = policy_oracle(&mdp, &basis, &x, TAU, 1e-10).unwrap();
        assert!((robust - objective(&mdp, &basis, &x, br.policy(), TAU).unwrap()).abs() < 1e-8);
    }
}

#[test]
fn brute_force_singleton_and_vertex_enumeration() {
    let (mdp, basis) = instance(3, 2, 3, 62);
    let one = vec![KernelParams::new(vec![0.2, 0.3, 0.5])];
    let (x, f) = brute_force_worst_kernel(&mdp, &basis, &one, WorstKernelMode::Robust, TAU).unwrap();
    assert_eq!(x, one[0]);
    assert_eq!(f, worst_kernel_value(&mdp, &basis, &one[0], WorstKernelMode::Robust, TAU).unwrap());

    let verts = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8]];
    let grid = GridSpec::PolytopeLattice { vertices: verts.clone(), resolution: 1, max_points: 10 }.points().unwrap();
    let (x, f) = brute_force_worst_kernel(&mdp, &basis, &grid, WorstKernelMode::Robust, TAU).unwrap();
    let by_hand = verts
        .iter()
        .map(|v| {
            let p = KernelParams::new(v.clone());
            let (br, _) = policy_oracle(&mdp, &basis, &p, TAU, 1e-10).unwrap();
            objective(&mdp, &basis, &p, br.policy(), TAU).unwrap()
        })
        .fold(f64::INFINITY, f64::min);
    assert!((f - by_hand).abs() < 1e-8);
    assert!(verts.contains(&x.xi));
    assert!(matches!(brute_force_worst_kernel(&mdp, &basis, &[], WorstKernelMode::Robust, TAU), Err(Error::EmptyGrid)));
}

#[test]
fn grid_never_beats_converged_frank_wolfe() {
    let (mdp, basis) = chain_pair();
    let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    let mut cfg = SolverConfig::exact(100, TAU, 1e-10);
    cfg.curvature = Some(1.0);
    cfg.tol = 1e-10;
    let out = fw_solve(&mdp, &basis, &set, &cfg).unwrap();
    let f_fw = worst_kernel_value(&mdp, &basis, &out.xi, WorstKernelMode::Robust, TAU).unwrap();
    let grid = GridSpec::SimplexLattice { dim: 2, resolution: 50, max_points: 100 }.points().unwrap();
    let (_, f_grid) = brute_force_worst_kernel(&mdp, &basis, &grid, WorstKernelMode::Robust, TAU).unwrap();
    assert!(f_grid >= f_fw - 1e-6);
}

#[test]
fn robust_average_single_vertex_single_policy_is_the_gain() {
    let (mdp, basis) = instance(3, 2, 2, 63);
    let mut rng = RngSeed(1).rng();
    let pi = policy(3, 2, &mut rng);
    let v = KernelParams::new(vec![0.3, 0.7]);
    let g = brute_force_robust_avg(&mdp, &basis, std::slice::from_ref(&v), std::slice::from_ref(&pi)).unwrap();
    let kernel = kernel_from_params(&basis, &v).unwrap();
    assert!((g - avg_summary(&mdp, &kernel, &pi).unwrap().gain).abs() < 1e-10);
}

#[test]
fn robust_average_with_a_dominant_action() {
    let (mut mdp, _) = instance(2, 2, 1, 64);
    // both actions move alike; action 0 always pays 1, action 1 pays 0
    let rows = [vec![0.3, 0.7], vec![0.6, 0.4]];
    let mk = |s: usize, shift: f64| -> Vec<f64> {
        let mut k = Vec::new();
        for st in 0..2 {
            let r = if st == s { vec![rows[st][0] + shift, rows[st][1] - shift] } else { rows[st].clone() };
            k.extend_from_slice(&r);
            k.extend_from_slice(&r);
        }
        k
    };
    mdp.reward = vec![1.0, 0.0, 1.0, 0.0];
    let kernels = [mk(0, 0.2), mk(1, -0.3)];
    let basis = KernelBasis::from_kernels(
        &kernels.iter().map(|p| TransitionKernel { n_states: 2, n_actions: 2, probs: p.clone() }).collect::<Vec<_>>(),
    )
    .unwrap();
    let verts = vec![KernelParams::unit(2, 0), KernelParams::unit(2, 1)];
    let grid = soft_policy_grid(2, 2, 0.2, 10, RngSeed(2));
    let value = brute_force_robust_avg(&mdp, &basis, &verts, &grid).unwrap();
    // the softened "always action 0" policy is first in the grid
    let dominant = &grid[0];
    assert!(dominant.prob(0, 0) > 0.99 && dominant.prob(1, 0) > 0.99);
    let worst = verts
        .iter()
        .map(|v| avg_summary(&mdp, &kernel_from_params(&basis, v).unwrap(), dominant).unwrap().gain)
        .fold(f64::INFINITY, f64::min);
    assert!((value - worst).abs() < 1e-12);
    assert!((value - dominant.prob(0, 0)).abs() < 1e-12);
}

#[test]
fn enlarging_the_vertex_set_never_helps_the_agent() {
    let (mdp, basis) = instance(3, 2, 4, 65);
    let grid = soft_policy_grid(3, 2, 0.3, 20, RngSeed(3));
    let all: Vec<KernelParams> = (0..4).map(|i| KernelParams::unit(4, i)).collect();
    let mut prev = f64::INFINITY;
    for k in 1..=4 {
        let v = brute_force_robust_avg(&mdp, &basis, &all[..k], &grid).unwrap();
        assert!(v <= prev + 1e-15);
        prev = v;
    }
}

#[test]
fn policy_grids_are_valid() {
    let grid = soft_policy_grid(3, 2, 0.5, 7, RngSeed(0));
    assert_eq!(grid.len(), 8 + 7);
    for p in &grid {
        for s in 0..3 {
            assert!((p.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    assert_eq!(grid, soft_policy_grid(3, 2, 0.5, 7, RngSeed(0)));
    let lat = policy_lattice(2, 3, 2);
    assert_eq!(lat.len(), 36);
    assert!(lat.iter().all(|p| StochasticPolicy::new(2, 3, p.probs.clone()).is_ok()));
}
