//! Acceptance criteria run on bundled fixtures. Each criterion reports a
//! single pass/fail line; runtime limits are part of the verdict.

use std::fmt;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use robustmdp_core::eval::{kernel_l1_distance, DEFAULT_MIX_TOLERANCE};
use robustmdp_core::grad_est::{expected_steps_for, mom_aggregate, mom_ranges, MlmcSampler, MlmcSizing};
use robustmdp_core::linalg::{dot, norm1, norm2, sub, tangent};
use robustmdp_core::solvers::AvgRewardConfig;
use robustmdp_core::verify::{
    brute_force_robust_avg, finite_diff_grad, mlmc_truncated_mean, policy_lattice, worst_kernel_value, GridSpec,
    WorstKernelMode,
};
use robustmdp_core::{
    avg_reward_solve, enforce_pmin, eval_policy, exact_grad_xi, fw_solve, generate_garnet, kernel_from_params,
    mismatch_coefficient, mixing_time, nonrect_degree, objective, occupancy, perf_difference, pgd_solve, policy_oracle,
    GradientMode, KernelBasis, KernelParams, MixCoefficient, MlmcConfig, RngSeed, SimplexBall, SoftmaxPolicy,
    SolverConfig, StochasticPolicy, TabularMdp, UncertaintySet,
};

use crate::generate::GenerateSpec;
use crate::parallel::{chunks, mom_gradient_par};
use crate::run::{self, InstanceSource, RunConfig, SolverChoice};

/// Gradient implementation checked by criterion 1.
pub type GradFn =
    fn(&TabularMdp, &KernelBasis, &KernelParams, &StochasticPolicy, f64) -> robustmdp_core::Result<Vec<f64>>;

#[derive(Debug, Clone, Copy)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub tag: &'static str,
    pub limit: Option<Duration>,
}

const fn secs(s: u64) -> Option<Duration> {
    Some(Duration::from_secs(s))
}

pub const CRITERIA: [Criterion; 13] = [
    Criterion { id: 1, name: "gradient vs finite differences", tag: "gradient", limit: secs(10) },
    Criterion { id: 2, name: "performance-difference identity", tag: "identity", limit: secs(5) },
    Criterion { id: 3, name: "value bound", tag: "identity", limit: None },
    Criterion { id: 4, name: "softmax fixed point", tag: "oracle", limit: secs(30) },
    Criterion { id: 5, name: "visitation Lipschitz", tag: "identity", limit: None },
    Criterion { id: 6, name: "gradient dominance", tag: "identity", limit: None },
    Criterion { id: 7, name: "MLMC unbiasedness", tag: "mlmc", limit: secs(60) },
    Criterion { id: 8, name: "MLMC cost trend", tag: "mlmc", limit: None },
    Criterion { id: 9, name: "median-of-means accuracy", tag: "mlmc", limit: secs(300) },
    Criterion { id: 10, name: "PGD end-to-end", tag: "solver", limit: secs(120) },
    Criterion { id: 11, name: "Frank-Wolfe end-to-end", tag: "solver", limit: secs(120) },
    Criterion { id: 12, name: "average-reward reduction", tag: "solver", limit: secs(180) },
    Criterion { id: 13, name: "determinism", tag: "cli", limit: None },
];

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {:<4} {} ({:.2} s): {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }
}

/// Criterion ids selected by `--only`: a tag (`mlmc`, `solver`, ...), a
/// number, or a comma-separated list of either.
pub fn select(only: Option<&str>) -> Result<Vec<u8>, String> {
    let Some(only) = only else {
        return Ok(CRITERIA.iter().map(|c| c.id).collect());
    };
    let mut ids = Vec::new();
    for part in only.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let hit: Vec<u8> = match part.parse::<u8>() {
            Ok(n) => CRITERIA.iter().filter(|c| c.id == n).map(|c| c.id).collect(),
            Err(_) => CRITERIA.iter().filter(|c| c.tag == part).map(|c| c.id).collect(),
        };
        if hit.is_empty() {
            return Err(format!("no criterion matches `{part}`"));
        }
        ids.extend(hit);
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

pub struct Suite {
    pub gradient: GradFn,
    pub threads: usize,
}

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn core_err(e: robustmdp_core::Error) -> String {
    format!("error: {e}")
}

impl Suite {
    pub fn new(threads: usize) -> Self {
        Suite { gradient: exact_grad_xi, threads: threads.max(1) }
    }

    /// Replaces the gradient checked by criterion 1.
    pub fn with_gradient(mut self, gradient: GradFn) -> Self {
        self.gradient = gradient;
        self
    }

    pub fn run(&self, ids: &[u8]) -> Vec<CriterionResult> {
        ids.iter().map(|&id| self.run_one(id)).collect()
    }

    pub fn run_one(&self, id: u8) -> CriterionResult {
        let c = CRITERIA.iter().find(|c| c.id == id).expect("known criterion id");
        let start = Instant::now();
        let out = match id {
            1 => self.gradient_fd(),
            2 => perf_difference_identity(),
            3 => value_bound(),
            4 => softmax_fixed_point(),
            5 => visitation_lipschitz(),
            6 => gradient_dominance(),
            7 => self.mlmc_unbiased(),
            8 => self.mlmc_cost(),
            9 => self.mom_accuracy(),
            10 => self.pgd_end_to_end(),
            11 => fw_end_to_end(),
            12 => avg_reduction(),
            13 => self.determinism(),
            _ => unreachable!(),
        };
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match out {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        if let Some(limit) = c.limit {
            if elapsed > limit {
                passed = false;
                detail.push_str(&format!("; over the {} s limit", limit.as_secs()));
            }
        }
        CriterionResult { id, name: c.name, passed, detail, elapsed }
    }

    fn gradient_fd(&self) -> Check {
        let tau = 0.1;
        let mut rng = RngSeed(101).rng();
        let mut worst = 0.0f64;
        for k in 0..20 {
            let (mdp, basis) = fixtures::random_instance(5, 3, 4, 1000 + k);
            let pi = fixtures::random_policy(5, 3, 1.0, &mut rng);
            let xi = fixtures::interior_xi(4, &mut rng);
            let g = (self.gradient)(&mdp, &basis, &xi, &pi, tau).map_err(core_err)?;
            let fd =
                finite_diff_grad(|z| objective(&mdp, &basis, &KernelParams::new(z.to_vec()), &pi, tau), &xi.xi, 1e-5)
                    .map_err(core_err)?;
            let exact = tangent(&g);
            worst = worst.max(norm2(&sub(&fd, &exact)) / norm2(&exact).max(1e-300));
        }
        verdict(worst <= 1e-6, format!("max relative error {worst:.2e} over 20 instances (limit 1e-6)"))
    }

    fn mlmc_unbiased(&self) -> Check {
        let fx = fixtures::mlmc_fixture();
        let t_max = 1 << 6;
        let sampler = fx.sampler(t_max).map_err(core_err)?;
        let n = 1_000_000;
        let m = moments(&sampler, RngSeed(707), n, self.threads);
        let exact = mlmc_truncated_mean(&fx.mdp, &fx.basis, &fx.xi.xi, &fx.policy, &fx.v_hat, fx.tau, t_max);
        let mut worst = 0.0f64;
        for ((&sum, &sumsq), &e) in m.sum.iter().zip(&m.sumsq).zip(&exact) {
            let mean = sum / n as f64;
            let var = (sumsq / n as f64 - mean * mean).max(0.0);
            let se = (var / n as f64).sqrt();
            worst = worst.max((mean - e).abs() / se);
        }
        verdict(worst <= 4.0, format!("max |mean − exact| = {worst:.2} standard errors over {n} draws (limit 4)"))
    }

    fn mlmc_cost(&self) -> Check {
        let fx = fixtures::mlmc_fixture();
        let mut notes = Vec::new();
        let mut ok = true;
        for (j, t_max) in [16usize, 256, 4096].into_iter().enumerate() {
            let sampler = fx.sampler(t_max).map_err(core_err)?;
            let n = 4_000_000;
            let m = moments(&sampler, RngSeed(808).derive(j as u64), n, self.threads);
            let mean = m.steps as f64 / n as f64;
            let want = expected_steps_for(t_max);
            let rel = (mean - want).abs() / want;
            ok &= rel <= 0.02;
            notes.push(format!("T={t_max}: {mean:.3} vs {want:.3}"));
        }
        let slope = self.mom_slope(&fx)?;
        ok &= (slope + 1.0).abs() <= 0.2;
        notes.push(format!("MoM error slope {slope:.3} (want −1 ± 0.2)"));
        verdict(ok, notes.join("; "))
    }

    /// Log-log slope of the mean squared MoM error against the truncated
    /// mean, over `N = 2^5 … 2^12` with a fixed block count.
    fn mom_slope(&self, fx: &fixtures::MlmcFixture) -> Result<f64, String> {
        let t_max = 1 << 6;
        let reps = 600;
        let exact = mlmc_truncated_mean(&fx.mdp, &fx.basis, &fx.xi.xi, &fx.policy, &fx.v_hat, fx.tau, t_max);
        let sampler = fx.sampler(t_max).map_err(core_err)?;
        let mut pts = Vec::new();
        for e in 5..=12u32 {
            let n = 1usize << e;
            let cfg = MlmcConfig {
                t_max,
                n_samples: n,
                n_blocks: fixtures::SLOPE_BLOCKS,
                eps: 0.1,
                beta: 0.05,
                lambda_pmin: fx.lambda,
                seed: RngSeed(0),
                value_noise: 0.0,
            };
            let ranges = mom_ranges(&cfg);
            let errs = par_map(reps, self.threads, |r| {
                let c = MlmcConfig { seed: RngSeed(8800 + e as u64).derive(r as u64), ..cfg.clone() };
                let parts: Vec<_> = ranges.iter().map(|rg| sampler.run_range(c.seed, rg.clone())).collect();
                let est = mom_aggregate(&c, &parts);
                let d = sub(&est.grad, &exact);
                dot(&d, &d)
            });
            let mse = errs.iter().sum::<f64>() / reps as f64;
            pts.push(((n as f64).ln(), mse.ln()));
        }
        Ok(ls_slope(&pts))
    }

    fn mom_accuracy(&self) -> Check {
        let fx = fixtures::mom_fixture();
        let cfg = fx.mom_config(0.1, 0.05, self.threads).map_err(core_err)?;
        let truth = tangent(&exact_grad_xi(&fx.mdp, &fx.basis, &fx.xi, &fx.policy, fx.tau).map_err(core_err)?);
        let eps2 = cfg.eps * cfg.eps;
        let mut hits = 0;
        for run in 0..100u64 {
            let c = MlmcConfig { seed: RngSeed(9_000).derive(run), ..cfg.clone() };
            let est =
                mom_gradient_par(&fx.mdp, &fx.basis, &fx.xi, &fx.policy, fx.tau, &c, self.threads).map_err(core_err)?;
            let d = sub(&tangent(&est.grad), &truth);
            if dot(&d, &d) <= eps2 {
                hits += 1;
            }
        }
        verdict(
            hits >= 93,
            format!("{hits}/100 runs within ε² (K = {}, N = {}, T_max = {})", cfg.n_blocks, cfg.n_samples, cfg.t_max),
        )
    }

    fn pgd_end_to_end(&self) -> Check {
        let tau = 0.1;
        let (mdp, basis, set) = fixtures::srect_fixture();
        let grid = GridSpec::SetLattice { set: set.clone(), resolution: 60, max_points: 1_000_000 }
            .points()
            .map_err(core_err)?;
        let mut grid_min = f64::INFINITY;
        for p in &grid {
            grid_min =
                grid_min.min(worst_kernel_value(&mdp, &basis, p, WorstKernelMode::Robust, tau).map_err(core_err)?);
        }
        let mut cfg = SolverConfig::exact(3_000, tau, 1e-10);
        cfg.step_size = Some(fixtures::PGD_STEP);
        cfg.tol = 1e-10;
        let out = pgd_solve(&mdp, &basis, &set, &cfg).map_err(core_err)?;
        let f_out = worst_kernel_value(&mdp, &basis, &out.xi, WorstKernelMode::Robust, tau).map_err(core_err)?;
        let rise = out.trace.records.windows(2).map(|w| w[1].f_value - w[0].f_value).fold(f64::NEG_INFINITY, f64::max);
        let mut ok = f_out - grid_min <= 1e-4 && rise <= 1e-12;

        let a = mdp.n_actions as f64;
        let band = 0.05 * (1.0 + tau * a.ln()) / (1.0 - mdp.discount);
        let mut mcfg = cfg.clone();
        mcfg.max_iters = 150;
        mcfg.tol = 0.0;
        mcfg.gradient_mode = GradientMode::Mlmc;
        mcfg.mlmc = Some(MlmcConfig {
            t_max: 256,
            n_samples: 4_800,
            n_blocks: 24,
            eps: 0.1,
            beta: 0.05,
            lambda_pmin: MixCoefficient::new(fixtures::SRECT_LAMBDA).map_err(core_err)?,
            seed: RngSeed(1010),
            value_noise: 0.0,
        });
        let mut oracle = crate::parallel::ParallelMom::new(mcfg.mlmc.clone().expect("set above"), self.threads);
        let mout = robustmdp_core::solvers::pgd_solve_with(&mdp, &basis, &set, &mcfg, &mut oracle).map_err(core_err)?;
        let f_mlmc = worst_kernel_value(&mdp, &basis, &mout.xi, WorstKernelMode::Robust, tau).map_err(core_err)?;
        ok &= f_mlmc - grid_min <= band;
        verdict(
            ok,
            format!(
                "exact: F − grid min = {:.2e} (limit 1e-4), max rise {:.1e} (limit 1e-12), {} iters; mlmc: F − grid min = {:.3e} (limit {band:.3}); {} grid points",
                f_out - grid_min,
                rise.max(0.0),
                out.trace.records.len(),
                f_mlmc - grid_min,
                grid.len()
            ),
        )
    }

    fn determinism(&self) -> Check {
        let cfg = fixtures::determinism_config();
        let a = run::solve(&cfg, self.threads, false).map_err(|e| e.to_string())?;
        let b = run::solve(&cfg, self.threads, false).map_err(|e| e.to_string())?;
        let dirs = [tempfile::tempdir(), tempfile::tempdir()];
        let mut bytes = Vec::new();
        for (rep, dir) in [a, b].iter().zip(&dirs) {
            let dir = dir.as_ref().map_err(|e| e.to_string())?;
            rep.write(dir.path()).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(dir.path().join(crate::formats::TRACE_FILE)).map_err(|e| e.to_string())?);
        }
        let rows = bytes[0].iter().filter(|&&b| b == b'\n').count() - 1;
        verdict(
            bytes[0] == bytes[1],
            format!("trace.csv identical across two runs: {} ({rows} rows)", bytes[0] == bytes[1]),
        )
    }
}

fn perf_difference_identity() -> Check {
    let tau = 0.1;
    let mut rng = RngSeed(202).rng();
    let mut worst = 0.0f64;
    for k in 0..100 {
        let (mdp, basis) = fixtures::random_instance(4, 2, 3, 2000 + k / 10);
        let pi = fixtures::random_policy(4, 2, 1.0, &mut rng);
        let x1 = KernelParams::new(fixtures::dirichlet(3, &mut rng));
        let x2 = KernelParams::new(fixtures::dirichlet(3, &mut rng));
        let (lhs, rhs) = perf_difference(&mdp, &basis, &x1, &x2, &pi, tau).map_err(core_err)?;
        worst = worst.max((lhs - rhs).abs());
    }
    verdict(worst <= 1e-9, format!("max |lhs − rhs| = {worst:.2e} over 100 triples (limit 1e-9)"))
}

fn value_bound() -> Check {
    let mut rng = RngSeed(303).rng();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..1000u64 {
        let ns = rng.random_range(2..=6);
        let na = rng.random_range(2..=4);
        let gamma = rng.random_range(0.5..0.99);
        let tau = rng.random_range(0.0..1.0);
        let (mdp, basis) = fixtures::random_instance(ns, na, 2, 3000 + k);
        let mdp = mdp.with_discount(gamma);
        let kernel =
            kernel_from_params(&basis, &KernelParams::new(fixtures::dirichlet(2, &mut rng))).map_err(core_err)?;
        let scale = rng.random_range(0.0..3.0);
        let pi = fixtures::random_policy(ns, na, scale, &mut rng);
        let v = eval_policy(&mdp, &kernel, &pi, tau).map_err(core_err)?.v;
        let bound = (1.0 + tau * (na as f64).ln()) / (1.0 - gamma);
        worst = worst.max(v.iter().map(|x| x - bound).fold(f64::NEG_INFINITY, f64::max));
    }
    verdict(worst <= 1e-9, format!("max v(s) − bound = {worst:.3e} over 1000 evaluations (limit 1e-9)"))
}

fn softmax_fixed_point() -> Check {
    let tau = 0.1;
    let mut worst = 0.0f64;
    let mut rng = RngSeed(404).rng();
    for k in 0..20 {
        let (mdp, basis) = fixtures::random_instance(5, 3, 4, 4000 + k);
        let xi = KernelParams::new(fixtures::dirichlet(4, &mut rng));
        let (pi, _) = policy_oracle(&mdp, &basis, &xi, tau, 1e-8).map_err(core_err)?;
        let kernel = kernel_from_params(&basis, &xi).map_err(core_err)?;
        let vt = eval_policy(&mdp, &kernel, pi.policy(), tau).map_err(core_err)?;
        let qe = vt.entropy_adjusted_q(pi.policy());
        for s in 0..mdp.n_states {
            let row = &qe[s * mdp.n_actions..(s + 1) * mdp.n_actions];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = row.iter().map(|q| ((q - m) / tau).exp()).collect();
            let z: f64 = w.iter().sum();
            let target: Vec<f64> = w.iter().map(|x| x / z).collect();
            worst = worst.max(norm1(&sub(pi.policy().row(s), &target)));
        }
    }
    verdict(worst <= 1e-8, format!("max per-state l1 gap {worst:.2e} over 20 instances (limit 1e-8)"))
}

fn visitation_lipschitz() -> Check {
    let mut rng = RngSeed(505).rng();
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for k in 0..200u64 {
        let ns = rng.random_range(2..=6);
        let na = rng.random_range(2..=3);
        let gamma = rng.random_range(0.5..0.99);
        let (mdp, basis) = fixtures::random_instance(ns, na, 2, 5000 + k);
        let mdp = mdp.with_discount(gamma);
        let p1 = basis.component(0);
        let p2 = basis.component(1);
        let pi = fixtures::random_policy(ns, na, 1.0, &mut rng);
        let d1 = occupancy(&mdp, &p1, &pi).map_err(core_err)?.d;
        let d2 = occupancy(&mdp, &p2, &pi).map_err(core_err)?.d;
        let lhs = norm1(&sub(&d1, &d2));
        let rhs = kernel_l1_distance(&p1, &p2) / (1.0 - gamma);
        if lhs > rhs + 1e-12 {
            violations += 1;
        }
        tightest = tightest.max(lhs / rhs);
    }
    verdict(violations == 0, format!("{violations} violations over 200 pairs; max lhs/rhs = {tightest:.3}"))
}

fn gradient_dominance() -> Check {
    let tau = 0.1;
    let mut rng = RngSeed(606).rng();
    let mut violations = 0;
    let mut checked = 0;
    for k in 0..10u64 {
        let (mdp, basis, grid) = fixtures::srect_product_grid(6000 + k);
        let pi = fixtures::random_policy(mdp.n_states, mdp.n_actions, 1.0, &mut rng);
        let (v, c) = dominance_violations(&mdp, &basis, &pi, tau, &grid, 0.0)?;
        violations += v;
        checked += c;
    }
    // same check on coupled (non-rectangular) random grids, reported only
    let mut coupled = 0;
    for k in 0..10u64 {
        let (mdp, basis) = fixtures::random_instance(4, 2, 3, 6000 + k);
        let pi = fixtures::random_policy(4, 2, 1.0, &mut rng);
        let grid: Vec<KernelParams> = (0..50).map(|_| KernelParams::new(fixtures::dirichlet(3, &mut rng))).collect();
        coupled += dominance_violations(&mdp, &basis, &pi, tau, &grid, 0.0)?.0;
    }
    let mut deltas = Vec::new();
    for k in 0..5u64 {
        let (mdp, basis, set, hull) = fixtures::nonrect_fixture(6100 + k);
        let pi = fixtures::random_policy(mdp.n_states, mdp.n_actions, 1.0, &mut rng);
        let UncertaintySet::VertexPolytope { vertices } = &set else { unreachable!() };
        let grid = GridSpec::PolytopeLattice { vertices: vertices.clone(), resolution: 4, max_points: 1_000 }
            .points()
            .map_err(core_err)?;
        let delta = nonrect_degree(
            &set,
            &hull,
            |x| Ok(exact_grad_xi(&mdp, &basis, x, &pi, tau)?.into_iter().map(|g| -g).collect()),
            &grid,
        )
        .map_err(core_err)?
        .delta;
        let (v, c) = dominance_violations(&mdp, &basis, &pi, tau, &grid, delta)?;
        violations += v;
        checked += c;
        deltas.push(format!("{delta:.3e}"));
    }
    verdict(
        violations == 0,
        format!(
            "{violations} violations at {checked} grid points (s-rectangular grids, and 4-vertex sets with δ = [{}]); coupled random grids without δ: {coupled} violations",
            deltas.join(", ")
        ),
    )
}

/// Counts grid points where
/// `J(ξ) − min J > D/(1−γ) · (max_{ξ'} ⟨ξ − ξ', ∇J(ξ)⟩ + δ)`.
fn dominance_violations(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    pi: &StochasticPolicy,
    tau: f64,
    grid: &[KernelParams],
    delta: f64,
) -> Result<(usize, usize), String> {
    let d = mismatch_coefficient(mdp, basis, grid, pi).map_err(core_err)?.value;
    let j: Vec<f64> = grid
        .iter()
        .map(|x| objective(mdp, basis, x, pi, tau))
        .collect::<robustmdp_core::Result<_>>()
        .map_err(core_err)?;
    let j_min = j.iter().copied().fold(f64::INFINITY, f64::min);
    let mut violations = 0;
    for (x, jx) in grid.iter().zip(&j) {
        let g = exact_grad_xi(mdp, basis, x, pi, tau).map_err(core_err)?;
        let lin = grid.iter().map(|y| dot(&sub(&x.xi, &y.xi), &g)).fold(f64::NEG_INFINITY, f64::max);
        let rhs = d / (1.0 - mdp.discount) * (lin + delta);
        if jx - j_min > rhs + 1e-9 {
            violations += 1;
        }
    }
    Ok((violations, grid.len()))
}

fn fw_end_to_end() -> Check {
    let tau = 0.1;
    let eps = 0.05;
    let (mdp, basis, set, hull) = fixtures::nonrect_fixture(1111);
    let mut cfg = SolverConfig::exact(2_000, tau, 1e-10);
    cfg.curvature = Some(fixtures::FW_CURVATURE);
    cfg.tol = 1e-6;
    let out = fw_solve(&mdp, &basis, &set, &cfg).map_err(core_err)?;
    let f_out = worst_kernel_value(&mdp, &basis, &out.xi, WorstKernelMode::Robust, tau).map_err(core_err)?;
    let gap = out.trace.records[out.trace.best_iter].gap;
    let UncertaintySet::VertexPolytope { vertices } = &set else { unreachable!() };
    let mut vertex_min = f64::INFINITY;
    for v in vertices {
        let p = KernelParams::new(v.clone());
        vertex_min =
            vertex_min.min(worst_kernel_value(&mdp, &basis, &p, WorstKernelMode::Robust, tau).map_err(core_err)?);
    }
    let grid = GridSpec::PolytopeLattice { vertices: vertices.clone(), resolution: 6, max_points: 1_000 }
        .points()
        .map_err(core_err)?;
    let pi = out.policy.policy();
    let d = mismatch_coefficient(&mdp, &basis, &grid, pi).map_err(core_err)?.value;
    let delta = nonrect_degree(
        &set,
        &hull,
        |x| Ok(exact_grad_xi(&mdp, &basis, x, pi, tau)?.into_iter().map(|g| -g).collect()),
        &grid,
    )
    .map_err(core_err)?
    .delta;
    let allowed = eps + d / (1.0 - mdp.discount) * delta;
    verdict(
        f_out - vertex_min <= allowed && gap <= eps,
        format!(
            "F − vertex min = {:.3e} (limit {allowed:.3e}, D = {d:.3}, δ = {delta:.3e}); FW gap {gap:.2e} (limit {eps}); {} iters",
            f_out - vertex_min,
            out.trace.records.len()
        ),
    )
}

fn avg_reduction() -> Check {
    let (mdp, basis, set) = fixtures::avg_fixture();
    let eps = 0.02;
    let mut solver = SolverConfig::exact(400, 0.01, 1e-8);
    solver.curvature = Some(1.0);
    let cfg = AvgRewardConfig {
        solver,
        normalized_curvature: Some(fixtures::AVG_CURVATURE),
        initial_span: None,
        max_restarts: 16,
    };
    let out = avg_reward_solve(&mdp, &basis, &set, eps, &cfg).map_err(core_err)?;
    let xis = GridSpec::SimplexLattice { dim: 2, resolution: 20, max_points: 100 }.points().map_err(core_err)?;
    let policies = policy_lattice(mdp.n_states, mdp.n_actions, 20);
    let brute = brute_force_robust_avg(&mdp, &basis, &xis, &policies).map_err(core_err)?;
    let gain = out.summary.gain;
    verdict(
        (gain - brute).abs() <= 0.05,
        format!(
            "robust gain {gain:.4} vs brute force {brute:.4} (limit 0.05); γ = {:.4}, {} restarts",
            out.gamma, out.restarts
        ),
    )
}

struct Moments {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    steps: u64,
}

/// Per-coordinate sums and squared sums of `n` draws, draw `i` from stream
/// `i` of `seed`.
fn moments(sampler: &MlmcSampler, seed: RngSeed, n: usize, threads: usize) -> Moments {
    let d = sampler.dim();
    let parts = thread::scope(|scope| {
        let handles: Vec<_> = chunks(n, threads)
            .into_iter()
            .map(|r| {
                scope.spawn(move || {
                    let mut m = Moments { sum: vec![0.0; d], sumsq: vec![0.0; d], steps: 0 };
                    for i in r {
                        let draw = sampler.sample(&mut seed.stream(i as u64));
                        for (k, v) in draw.value.iter().enumerate() {
                            m.sum[k] += v;
                            m.sumsq[k] += v * v;
                        }
                        m.steps += draw.steps as u64;
                    }
                    m
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampling worker panicked")).collect::<Vec<_>>()
    });
    let mut total = Moments { sum: vec![0.0; d], sumsq: vec![0.0; d], steps: 0 };
    for p in parts {
        for k in 0..d {
            total.sum[k] += p.sum[k];
            total.sumsq[k] += p.sumsq[k];
        }
        total.steps += p.steps;
    }
    total
}

/// `f(0..n)` on up to `threads` workers, in index order.
fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, threads: usize, f: F) -> Vec<T> {
    let f = &f;
    thread::scope(|scope| {
        let handles: Vec<_> =
            chunks(n, threads).into_iter().map(|r| scope.spawn(move || r.map(f).collect::<Vec<T>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Instances used by the criteria.
pub mod fixtures {
    use super::*;

    /// Blocks used for the MoM error-slope measurement.
    pub const SLOPE_BLOCKS: usize = 4;
    pub const SRECT_LAMBDA: f64 = 0.3;
    pub const PGD_STEP: f64 = 0.005;
    pub const FW_CURVATURE: f64 = 1.0;
    pub const AVG_CURVATURE: f64 = 0.01;

    pub fn random_instance(ns: usize, na: usize, d: usize, seed: u64) -> (TabularMdp, KernelBasis) {
        let b = ns.min(3);
        let mdp = generate_garnet(ns, na, b, RngSeed(seed)).expect("valid garnet");
        let basis = KernelBasis::random(ns, na, d, b, RngSeed(seed).derive(1)).expect("valid basis");
        (mdp, basis)
    }

    pub fn dirichlet<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
        let e: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let t: f64 = e.iter().sum();
        e.into_iter().map(|x| x / t).collect()
    }

    /// Half Dirichlet, half uniform: at least `1/(2d)` per coordinate.
    pub fn interior_xi<R: Rng>(d: usize, rng: &mut R) -> KernelParams {
        KernelParams::new(dirichlet(d, rng).into_iter().map(|x| 0.5 * x + 0.5 / d as f64).collect())
    }

    /// Softmax policy with logits uniform on `[−scale, scale]`.
    pub fn random_policy<R: Rng>(ns: usize, na: usize, scale: f64, rng: &mut R) -> StochasticPolicy {
        let logits = (0..ns * na).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        SoftmaxPolicy::from_logits(ns, na, logits).expect("finite logits").policy().clone()
    }

    /// An MLMC evaluation point: `v̂` is the exact value of `policy`.
    #[derive(Debug, Clone)]
    pub struct MlmcFixture {
        pub mdp: TabularMdp,
        pub basis: KernelBasis,
        pub xi: KernelParams,
        pub policy: StochasticPolicy,
        pub v_hat: Vec<f64>,
        pub tau: f64,
        pub lambda: MixCoefficient,
    }

    impl MlmcFixture {
        fn new(ns: usize, na: usize, d: usize, gamma: f64, lambda: f64, seed: u64) -> Self {
            let (mdp, basis) = random_instance(ns, na, d, seed);
            let mdp = mdp.with_discount(gamma);
            let lambda = MixCoefficient::new(lambda).expect("lambda in range");
            let basis = enforce_pmin(&basis, lambda);
            let mut rng = RngSeed(seed).derive(2).rng();
            let xi = KernelParams::new(dirichlet(d, &mut rng));
            let policy = random_policy(ns, na, 1.0, &mut rng);
            let tau = 0.1;
            let kernel = kernel_from_params(&basis, &xi).expect("xi in simplex");
            let v_hat = eval_policy(&mdp, &kernel, &policy, tau).expect("valid fixture").v;
            MlmcFixture { mdp, basis, xi, policy, v_hat, tau, lambda }
        }

        pub fn sampler(&self, t_max: usize) -> robustmdp_core::Result<MlmcSampler> {
            MlmcSampler::new(&self.mdp, &self.basis, &self.xi, &self.policy, &self.v_hat, self.tau, t_max)
        }

        /// Default MoM sizes with the variance constant `C_sig` measured on a
        /// pilot run: `tr Cov(X) / (t_mix log₂ T)` at `T = 2^10`.
        pub fn mom_config(&self, eps: f64, beta: f64, threads: usize) -> robustmdp_core::Result<MlmcConfig> {
            let pilot_t = 1 << 10;
            let n = 40_000;
            let m = moments(&self.sampler(pilot_t)?, RngSeed(31_337), n, threads);
            let tr_cov: f64 = (0..m.sum.len())
                .map(|k| {
                    let mean = m.sum[k] / n as f64;
                    m.sumsq[k] / n as f64 - mean * mean
                })
                .sum();
            let kernel = kernel_from_params(&self.basis, &self.xi)?;
            let t_mix = mixing_time(&kernel, &self.policy, DEFAULT_MIX_TOLERANCE)?;
            let c_sig = tr_cov / (t_mix * (pilot_t as f64).log2());
            let sizing = MlmcSizing {
                feature_bound: self.basis.feature_bound,
                n_states: self.mdp.n_states,
                n_actions: self.mdp.n_actions,
                gamma: self.mdp.discount,
                t_mix,
                eps,
                beta,
                c_sig: Some(c_sig),
            };
            MlmcConfig::from_theory(&sizing, self.lambda, RngSeed(0))
        }
    }

    /// Three states, two actions, three base kernels mixed to `P ≥ 0.1`.
    pub fn mlmc_fixture() -> MlmcFixture {
        MlmcFixture::new(3, 2, 3, 0.9, 0.3, 7_007)
    }

    /// Five states, two actions, three base kernels, γ = 0.5.
    pub fn mom_fixture() -> MlmcFixture {
        MlmcFixture::new(5, 2, 3, 0.5, 0.5, 9_009)
    }

    /// Three states with two variants each; a product of per-state balls of
    /// radius 0.1. Basis rows are mixed to `P ≥ 0.1` so MLMC applies.
    pub fn srect_fixture() -> (TabularMdp, KernelBasis, UncertaintySet) {
        let (mdp, basis, blocks) = srect_basis(1_010);
        let basis = enforce_pmin(&basis, MixCoefficient::new(SRECT_LAMBDA).expect("lambda in range"));
        let set = UncertaintySet::s_rect(
            blocks.into_iter().map(|(s, idx)| (s, idx, SimplexBall::new(vec![1.0 / 6.0; 2], 0.1))).collect(),
        );
        (mdp, basis, set)
    }

    fn srect_basis(seed: u64) -> (TabularMdp, KernelBasis, Vec<(usize, Vec<usize>)>) {
        let (mdp, _) = random_instance(3, 2, 1, seed);
        let mut rng = RngSeed(seed).derive(3).rng();
        let mut variants = Vec::new();
        for s in 0..3 {
            for _ in 0..2 {
                let rows: Vec<f64> = (0..2).flat_map(|_| dirichlet(3, &mut rng)).collect();
                variants.push((s, rows));
            }
        }
        let (basis, blocks) = KernelBasis::s_rectangular(&mdp.nominal(), &variants).expect("valid variants");
        (mdp, basis, blocks)
    }

    /// An s-rectangular instance and a 50-point product grid: 2, 5 and 5
    /// evenly spaced weights on the three per-state segments.
    pub fn srect_product_grid(seed: u64) -> (TabularMdp, KernelBasis, Vec<KernelParams>) {
        let (mdp, basis, blocks) = srect_basis(seed);
        let mut grid = vec![vec![0.0; 6]];
        for ((_, idx), n) in blocks.iter().zip([2usize, 5, 5]) {
            let mut next = Vec::with_capacity(grid.len() * n);
            for x in &grid {
                for k in 0..n {
                    let w = k as f64 / (n - 1) as f64;
                    let mut y = x.clone();
                    y[idx[0]] = w / 3.0;
                    y[idx[1]] = (1.0 - w) / 3.0;
                    next.push(y);
                }
            }
            grid = next;
        }
        (mdp, basis, grid.into_iter().map(KernelParams::new).collect())
    }

    /// Four vertices coupling the per-state weights `w_s` of an
    /// s-rectangular basis, `(w₀, w₁, w₂) ∈ {(.1,.1,.1), (.9,.9,.1),
    /// (.9,.1,.9), (.1,.9,.9)}`, plus the product of per-state balls that
    /// encloses them.
    pub fn nonrect_fixture(seed: u64) -> (TabularMdp, KernelBasis, UncertaintySet, UncertaintySet) {
        let (mdp, basis, blocks) = srect_basis(seed);
        let corners = [[0.1, 0.1, 0.1], [0.9, 0.9, 0.1], [0.9, 0.1, 0.9], [0.1, 0.9, 0.9]];
        let vertices = corners
            .iter()
            .map(|w| {
                let mut v = vec![0.0; 6];
                for (s, idx) in &blocks {
                    v[idx[0]] = w[*s] / 3.0;
                    v[idx[1]] = (1.0 - w[*s]) / 3.0;
                }
                v
            })
            .collect();
        let radius = 0.4 * std::f64::consts::SQRT_2 / 3.0 + 1e-9;
        let hull = UncertaintySet::s_rect(
            blocks.into_iter().map(|(s, idx)| (s, idx, SimplexBall::new(vec![1.0 / 6.0; 2], radius))).collect(),
        );
        (mdp, basis, UncertaintySet::vertices(vertices), hull)
    }

    /// Three states, two actions, two dense base kernels; the set is the
    /// segment between them.
    pub fn avg_fixture() -> (TabularMdp, KernelBasis, UncertaintySet) {
        let (mdp, basis) = random_instance(3, 2, 2, 1_212);
        let set = UncertaintySet::vertices(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        (mdp, basis, set)
    }

    /// Small MLMC-mode Frank-Wolfe run used for the determinism check.
    pub fn determinism_config() -> RunConfig {
        let mut config = SolverConfig::exact(15, 0.1, 1e-8);
        config.curvature = Some(1.0);
        config.gradient_mode = GradientMode::Mlmc;
        config.mlmc = Some(MlmcConfig {
            t_max: 64,
            n_samples: 960,
            n_blocks: 24,
            eps: 0.1,
            beta: 0.05,
            lambda_pmin: MixCoefficient::new(0.3).expect("lambda in range"),
            seed: RngSeed(13),
            value_noise: 0.01,
        });
        RunConfig {
            instance: InstanceSource::Generate(GenerateSpec {
                n_states: 5,
                n_actions: 3,
                branching: 2,
                seed: 7,
                bases: 4,
                set: "simplex-ball:0.3".into(),
                lambda_pmin: 0.3,
                discount: None,
            }),
            solver: SolverChoice::Fw,
            config,
            avg: None,
            probe_resolution: Some(6),
        }
    }
}
