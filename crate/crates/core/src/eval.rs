//! Exact policy evaluation by direct linear solves.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::kernel::{kernel_from_params, KernelBasis, KernelParams};
use crate::linalg;
use crate::mdp::{StochasticPolicy, TabularMdp, TransitionKernel};

/// Entropy-regularized values. `q` follows the regularized Bellman equation
/// `q(s,a) = r(s,a) − τ log π(a|s) + γ Σ P(s'|s,a) v(s')`, so that
/// `v(s) = Σ_a π(a|s) q(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub tau: f64,
    n_actions: usize,
}

impl ValueTable {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    /// `Q^e(s,a) = r(s,a) + γ Σ P v`, i.e. `q` with the entropy term removed.
    pub fn entropy_adjusted_q(&self, policy: &StochasticPolicy) -> Vec<f64> {
        self.q
            .iter()
            .zip(&policy.probs)
            .map(|(q, p)| if self.tau > 0.0 { q + self.tau * Float::ln(*p) } else { *q })
            .collect()
    }
}

/// Discounted state-visitation distribution `(1−γ) ρᵀ (I − γ P_π)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    pub d: Vec<f64>,
    pub gamma: f64,
}

/// Long-run average reward quantities of a policy-induced chain.
#[derive(Debug, Clone, PartialEq)]
pub struct AvgRewardSummary {
    pub gain: f64,
    pub bias: Vec<f64>,
    pub span: f64,
    pub stationary: Vec<f64>,
    pub aperiodic: bool,
}

fn check_shapes(mdp: &TabularMdp, kernel: &TransitionKernel, policy: &StochasticPolicy) -> Result<()> {
    let n = mdp.n_states;
    let a = mdp.n_actions;
    if kernel.n_states != n || kernel.n_actions != a {
        return Err(Error::DimensionMismatch {
            what: "kernel shape",
            expected: n * a,
            found: kernel.n_states * kernel.n_actions,
        });
    }
    if policy.n_states != n || policy.n_actions != a || policy.probs.len() != n * a {
        return Err(Error::DimensionMismatch { what: "policy shape", expected: n * a, found: policy.probs.len() });
    }
    Ok(())
}

/// `r_τ(s,a) = r(s,a) − τ log π(a|s)`; entries with `π = 0` are only allowed
/// at `τ = 0`.
pub fn regularized_reward(mdp: &TabularMdp, policy: &StochasticPolicy, tau: f64) -> Result<Vec<f64>> {
    let na = mdp.n_actions;
    let mut out = Vec::with_capacity(mdp.reward.len());
    for (k, (&r, &p)) in mdp.reward.iter().zip(&policy.probs).enumerate() {
        if tau > 0.0 {
            if !(p > 0.0) {
                return Err(Error::ZeroPolicyProb { s: k / na, a: k % na });
            }
            out.push(r - tau * Float::ln(p));
        } else {
            out.push(r);
        }
    }
    Ok(out)
}

fn identity_minus(p: &[f64], n: usize, gamma: f64) -> Vec<f64> {
    let mut m: Vec<f64> = p.iter().map(|x| -gamma * x).collect();
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    m
}

/// Solves the entropy-regularized Bellman system for a fixed policy.
pub fn eval_policy(
    mdp: &TabularMdp,
    kernel: &TransitionKernel,
    policy: &StochasticPolicy,
    tau: f64,
) -> Result<ValueTable> {
    check_shapes(mdp, kernel, policy)?;
    let (n, na, g) = (mdp.n_states, mdp.n_actions, mdp.discount);
    let r_tau = regularized_reward(mdp, policy, tau)?;
    let r_pi: Vec<f64> = (0..n)
        .map(|s| (0..na).filter(|&a| policy.prob(s, a) > 0.0).map(|a| policy.prob(s, a) * r_tau[s * na + a]).sum())
        .collect();
    let p_pi = kernel.under_policy(policy);
    let v = linalg::solve(&identity_minus(&p_pi, n, g), &r_pi)?;
    let mut q = r_tau;
    for s in 0..n {
        for a in 0..na {
            q[s * na + a] += g * linalg::dot(kernel.row(s, a), &v);
        }
    }
    Ok(ValueTable { v, q, tau, n_actions: na })
}

/// Discounted occupancy measure of `policy` under `kernel`.
pub fn occupancy(mdp: &TabularMdp, kernel: &TransitionKernel, policy: &StochasticPolicy) -> Result<OccupancyMeasure> {
    check_shapes(mdp, kernel, policy)?;
    let (n, g) = (mdp.n_states, mdp.discount);
    let p_pi = kernel.under_policy(policy);
    let rhs: Vec<f64> = mdp.initial_dist.iter().map(|r| (1.0 - g) * r).collect();
    let mut d = linalg::solve_transposed(&identity_minus(&p_pi, n, g), &rhs)?;
    for x in d.iter_mut() {
        *x = x.max(0.0);
    }
    let total: f64 = d.iter().sum();
    for x in d.iter_mut() {
        *x /= total;
    }
    Ok(OccupancyMeasure { d, gamma: g })
}

/// `J = ρᵀ v` for the kernel `P_ξ`.
pub fn objective(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    tau: f64,
) -> Result<f64> {
    let kernel = kernel_from_params(basis, xi)?;
    let vt = eval_policy(mdp, &kernel, policy, tau)?;
    Ok(linalg::dot(&mdp.initial_dist, &vt.v))
}

/// `J = (1/(1−γ)) Σ_s d(s) Σ_a π(a|s) r_τ(s,a)`, the occupancy form of the
/// objective.
pub fn objective_via_occupancy(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    tau: f64,
) -> Result<f64> {
    let kernel = kernel_from_params(basis, xi)?;
    let occ = occupancy(mdp, &kernel, policy)?;
    let r_tau = regularized_reward(mdp, policy, tau)?;
    let na = mdp.n_actions;
    let mut total = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..na {
            let p = policy.prob(s, a);
            if p > 0.0 {
                total += occ.d[s] * p * r_tau[s * na + a];
            }
        }
    }
    Ok(total / (1.0 - mdp.discount))
}

/// Resolvent form of `∇_ξ J`:
/// `(γ/(1−γ)) Σ_{s,a} d(s) π(a|s) Σ_{s'} φ_i(s,a,s') v(s')`.
pub fn exact_grad_xi(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    tau: f64,
) -> Result<Vec<f64>> {
    let kernel = kernel_from_params(basis, xi)?;
    let vt = eval_policy(mdp, &kernel, policy, tau)?;
    let occ = occupancy(mdp, &kernel, policy)?;
    Ok(grad_from_parts(mdp, basis, policy, &occ.d, &vt.v))
}

pub(crate) fn grad_from_parts(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    policy: &StochasticPolicy,
    d: &[f64],
    v: &[f64],
) -> Vec<f64> {
    let g = mdp.discount;
    let scale = g / (1.0 - g);
    (0..basis.dim)
        .map(|i| {
            let mut acc = 0.0;
            for (s, &ds) in d.iter().enumerate().take(mdp.n_states) {
                for a in 0..mdp.n_actions {
                    let w = ds * policy.prob(s, a);
                    if w != 0.0 {
                        acc += w * linalg::dot(basis.row(i, s, a), v);
                    }
                }
            }
            scale * acc
        })
        .collect()
}

/// Both sides of the kernel performance-difference identity:
/// `J_{P1} − J_{P2}` and `(γ/(1−γ)) Σ d^{P1} π (P1 − P2) V^{P2}`.
pub fn perf_difference(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi1: &KernelParams,
    xi2: &KernelParams,
    policy: &StochasticPolicy,
    tau: f64,
) -> Result<(f64, f64)> {
    let p1 = kernel_from_params(basis, xi1)?;
    let p2 = kernel_from_params(basis, xi2)?;
    let v1 = eval_policy(mdp, &p1, policy, tau)?;
    let v2 = eval_policy(mdp, &p2, policy, tau)?;
    let lhs = linalg::dot(&mdp.initial_dist, &v1.v) - linalg::dot(&mdp.initial_dist, &v2.v);
    let d1 = occupancy(mdp, &p1, policy)?;
    let g = mdp.discount;
    let mut acc = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let w = d1.d[s] * policy.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let diff: f64 = p1.row(s, a).iter().zip(p2.row(s, a)).zip(&v2.v).map(|((x, y), v)| (x - y) * v).sum();
            acc += w * diff;
        }
    }
    Ok((lhs, g / (1.0 - g) * acc))
}

fn adjacency(p: &[f64], n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|s| (0..n).filter(|&t| p[s * n + t] > 0.0).collect()).collect()
}

fn reach(adj: &[Vec<usize>], from: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[from] = Some(0);
    let mut queue = alloc::collections::VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap_or(0);
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Strong connectivity of the positive-entry graph; returns the period.
fn check_irreducible(p: &[f64], n: usize) -> Result<usize> {
    let adj = adjacency(p, n);
    let fwd = reach(&adj, 0);
    if let Some(s) = fwd.iter().position(Option::is_none) {
        return Err(Error::NotErgodic(format!("state {s} is unreachable from state 0")));
    }
    let mut rev = vec![Vec::new(); n];
    for (u, out) in adj.iter().enumerate() {
        for &v in out {
            rev[v].push(u);
        }
    }
    if let Some(s) = reach(&rev, 0).iter().position(Option::is_none) {
        return Err(Error::NotErgodic(format!("state 0 is unreachable from state {s}")));
    }
    let mut period = 0;
    for (u, out) in adj.iter().enumerate() {
        let lu = fwd[u].unwrap_or(0);
        for &v in out {
            let lv = fwd[v].unwrap_or(0);
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    Ok(period)
}

/// Gain, bias (Poisson solution with `stationaryᵀ h = 0`), span and
/// stationary distribution. Requires an irreducible chain; periodicity is
/// reported through `aperiodic`.
pub fn avg_summary(mdp: &TabularMdp, kernel: &TransitionKernel, policy: &StochasticPolicy) -> Result<AvgRewardSummary> {
    check_shapes(mdp, kernel, policy)?;
    let n = mdp.n_states;
    let p = kernel.under_policy(policy);
    let period = check_irreducible(&p, n)?;
    // μᵀ(I − P) = 0 with the last equation replaced by Σμ = 1
    let mut a = identity_minus(&p, n, 1.0);
    for s in 0..n {
        a[s * n + n - 1] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let stationary = linalg::solve_transposed(&a, &rhs)?;
    let r_pi: Vec<f64> =
        (0..n).map(|s| (0..mdp.n_actions).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum()).collect();
    let gain = linalg::dot(&stationary, &r_pi);
    // (I − P + 1 μᵀ) h = r_π − g 1 forces μᵀh = 0
    let mut m = identity_minus(&p, n, 1.0);
    for s in 0..n {
        for t in 0..n {
            m[s * n + t] += stationary[t];
        }
    }
    let rhs: Vec<f64> = r_pi.iter().map(|r| r - gain).collect();
    let bias = linalg::solve(&m, &rhs)?;
    let hi = bias.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = bias.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(AvgRewardSummary { gain, span: hi - lo, bias, stationary, aperiodic: period == 1 })
}

/// Default total-variation tolerance for [`mixing_time`].
pub const DEFAULT_MIX_TOLERANCE: f64 = 0.25;

/// Spectral mixing-time estimate `max(1, ⌈ln(1/tol) / ln(1/λ₂)⌉)`, with
/// `λ₂` the second-largest eigenvalue modulus of `P_π`.
pub fn mixing_time(kernel: &TransitionKernel, policy: &StochasticPolicy, tolerance: f64) -> Result<f64> {
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::InvalidConfig(format!("tolerance {tolerance} outside (0, 1)")));
    }
    let n = kernel.n_states;
    let p = kernel.under_policy(policy);
    let period = check_irreducible(&p, n)?;
    if period != 1 {
        return Err(Error::NotErgodic(format!("chain has period {period}")));
    }
    let lambda = linalg::second_eigen_modulus(&p, n);
    if lambda >= 1.0 - 1e-12 {
        return Err(Error::NotErgodic("second eigenvalue has unit modulus".into()));
    }
    if lambda <= 1e-15 {
        return Ok(1.0);
    }
    let t = Float::ceil(Float::ln(1.0 / tolerance) / Float::ln(1.0 / lambda));
    Ok(t.max(1.0))
}

/// Occupancy mismatch over a grid, with states of negligible occupancy
/// excluded from the ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchReport {
    pub value: f64,
    /// `(grid index, state)` pairs whose occupancy fell below the threshold.
    pub excluded: Vec<(usize, usize)>,
}

/// Occupancy below this is treated as zero by [`mismatch_coefficient`].
pub const ZERO_OCCUPANCY: f64 = 1e-12;

/// `max_{ξ, ξ'} ‖d^{P_ξ'} / d^{P_ξ}‖_∞` over the grid.
pub fn mismatch_coefficient(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    grid: &[KernelParams],
    policy: &StochasticPolicy,
) -> Result<MismatchReport> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let occ = grid
        .iter()
        .map(|xi| occupancy(mdp, &kernel_from_params(basis, xi)?, policy).map(|o| o.d))
        .collect::<Result<Vec<_>>>()?;
    let mut excluded = Vec::new();
    for (k, d) in occ.iter().enumerate() {
        for (s, &x) in d.iter().enumerate() {
            if x < ZERO_OCCUPANCY {
                excluded.push((k, s));
            }
        }
    }
    let mut value = 1.0f64;
    for den in &occ {
        for num in &occ {
            for s in 0..mdp.n_states {
                if den[s] >= ZERO_OCCUPANCY {
                    value = value.max(num[s] / den[s]);
                }
            }
        }
    }
    Ok(MismatchReport { value, excluded })
}

/// 1-Wasserstein distance between two distributions on the line `0, 1, …`
/// with unit spacing.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> f64 {
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for (x, y) in p.iter().zip(q) {
        cp += x;
        cq += y;
        total += Float::abs(cp - cq);
    }
    // the last term is |1 − 1| up to rounding and carries no distance
    total - Float::abs(cp - cq)
}

/// `max_{s,a} W₁(P(·|s,a), Q(·|s,a))` on the line metric over states.
pub fn kernel_w1(p: &TransitionKernel, q: &TransitionKernel) -> f64 {
    let mut best = 0.0f64;
    for s in 0..p.n_states {
        for a in 0..p.n_actions {
            best = best.max(wasserstein_1d(p.row(s, a), q.row(s, a)));
        }
    }
    best
}

/// Smallest [`kernel_w1`] from `target` to any grid kernel, with its index.
pub fn best_grid_w1(target: &TransitionKernel, basis: &KernelBasis, grid: &[KernelParams]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, xi) in grid.iter().enumerate() {
        let w = kernel_w1(target, &kernel_from_params(basis, xi)?);
        if best.is_none_or(|(_, b)| w < b) {
            best = Some((k, w));
        }
    }
    best.ok_or(Error::EmptyGrid)
}

/// `max_{s,a} ‖P(·|s,a) − Q(·|s,a)‖₁`.
pub fn kernel_l1_distance(p: &TransitionKernel, q: &TransitionKernel) -> f64 {
    let mut best = 0.0f64;
    for s in 0..p.n_states {
        for a in 0..p.n_actions {
            best = best.max(linalg::norm1(&linalg::sub(p.row(s, a), q.row(s, a))));
        }
    }
    best
}
