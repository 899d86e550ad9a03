//! Brute-force oracles. Everything here recomputes from the raw tables
//! (`TabularMdp`, `KernelBasis`) and the dense solver, without going through
//! the evaluation, policy or estimation modules.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{KernelBasis, KernelParams, SimplexBall, UncertaintySet};
use crate::linalg;
use crate::mdp::{StochasticPolicy, TabularMdp, TransitionKernel};
use crate::rng::RngSeed;

/// Finite point sets over ξ.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// `{k/resolution : Σk = resolution}` in the unit simplex.
    SimplexLattice { dim: usize, resolution: usize, max_points: usize },
    /// The listed points.
    Vertices { vertices: Vec<Vec<f64>>, max_points: usize },
    /// Lattice convex combinations of the listed vertices.
    PolytopeLattice { vertices: Vec<Vec<f64>>, resolution: usize, max_points: usize },
    /// Lattice points of the set: for a product, per-block lattices of each
    /// block's simplex slice filtered by the block ball; otherwise the unit
    /// simplex lattice filtered by membership.
    SetLattice { set: UncertaintySet, resolution: usize, max_points: usize },
}

fn binomial(n: usize, k: usize) -> usize {
    let mut r: u128 = 1;
    for i in 0..k as u128 {
        r = r * (n as u128 - i) / (i + 1);
        if r > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    r as usize
}

/// All compositions of `total` into `parts` nonnegative integers.
fn compositions(parts: usize, total: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return Vec::new();
    }
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in compositions(parts - 1, total - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn lattice_count(parts: usize, resolution: usize) -> usize {
    binomial(resolution + parts - 1, parts - 1)
}

fn ball_lattice(ball: &SimplexBall, resolution: usize) -> Vec<Vec<f64>> {
    let m = ball.mass();
    compositions(ball.center.len(), resolution)
        .into_iter()
        .map(|c| c.into_iter().map(|k| m * k as f64 / resolution as f64).collect::<Vec<f64>>())
        .filter(|x| linalg::dist2(x, &ball.center) <= ball.radius + 1e-12)
        .collect()
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<KernelParams>> {
        let cap_check = |n: usize, cap: usize| {
            if n > cap {
                Err(Error::GridTooLarge { points: n, cap })
            } else {
                Ok(())
            }
        };
        let pts: Vec<Vec<f64>> = match self {
            GridSpec::SimplexLattice { dim, resolution, max_points } => {
                cap_check(lattice_count(*dim, *resolution), *max_points)?;
                compositions(*dim, *resolution)
                    .into_iter()
                    .map(|c| c.into_iter().map(|k| k as f64 / *resolution as f64).collect())
                    .collect()
            }
            GridSpec::Vertices { vertices, max_points } => {
                cap_check(vertices.len(), *max_points)?;
                vertices.clone()
            }
            GridSpec::PolytopeLattice { vertices, resolution, max_points } => {
                cap_check(lattice_count(vertices.len(), *resolution), *max_points)?;
                let d = vertices.first().map_or(0, Vec::len);
                compositions(vertices.len(), *resolution)
                    .into_iter()
                    .map(|c| {
                        let mut x = vec![0.0; d];
                        for (w, v) in c.iter().zip(vertices) {
                            let w = *w as f64 / *resolution as f64;
                            for (xi, vi) in x.iter_mut().zip(v) {
                                *xi += w * vi;
                            }
                        }
                        x
                    })
                    .collect()
            }
            GridSpec::SetLattice { set, resolution, max_points } => match set {
                UncertaintySet::SRectProduct { blocks } => {
                    let mut total = 1usize;
                    for b in blocks {
                        total = total.saturating_mul(lattice_count(b.indices.len(), *resolution));
                    }
                    cap_check(total, *max_points)?;
                    let mut acc: Vec<Vec<f64>> = vec![vec![0.0; set.dim()]];
                    for b in blocks {
                        let local = ball_lattice(&b.ball, *resolution);
                        let mut next = Vec::with_capacity(acc.len() * local.len());
                        for x in &acc {
                            for l in &local {
                                let mut y = x.clone();
                                for (k, &i) in b.indices.iter().enumerate() {
                                    y[i] = l[k];
                                }
                                next.push(y);
                            }
                        }
                        acc = next;
                    }
                    acc
                }
                _ => {
                    let d = set.dim();
                    cap_check(lattice_count(d, *resolution), *max_points)?;
                    compositions(d, *resolution)
                        .into_iter()
                        .map(|c| c.into_iter().map(|k| k as f64 / *resolution as f64).collect::<Vec<f64>>())
                        .filter(|x| set.contains(x, 1e-12))
                        .collect()
                }
            },
        };
        if pts.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(pts.into_iter().map(KernelParams::new).collect())
    }
}

/// Central differences along `e_k − 1/d`, which returns the simplex-tangent
/// component of the gradient in ambient coordinates.
pub fn finite_diff_grad<F>(mut objective: F, xi: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-8..=1e-3).contains(&step) {
        return Err(Error::InvalidConfig("finite-difference step outside [1e-8, 1e-3]".into()));
    }
    let d = xi.len();
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let shift = |sign: f64| -> Vec<f64> {
            xi.iter()
                .enumerate()
                .map(|(j, x)| {
                    let b = if j == k { 1.0 } else { 0.0 } - 1.0 / d as f64;
                    x + sign * step * b
                })
                .collect()
        };
        let (plus, minus) = (shift(1.0), shift(-1.0));
        if plus.iter().chain(&minus).any(|&x| x < 0.0) {
            return Err(Error::InfeasiblePerturbation);
        }
        out.push((objective(&plus)? - objective(&minus)?) / (2.0 * step));
    }
    Ok(out)
}

fn mix(basis: &KernelBasis, xi: &[f64]) -> Vec<f64> {
    let len = basis.n_states * basis.n_actions * basis.n_states;
    let mut p = vec![0.0; len];
    for (i, w) in xi.iter().enumerate() {
        for (k, pk) in p.iter_mut().enumerate() {
            *pk += w * basis.basis[i * len + k];
        }
    }
    p
}

/// Reference objective `ρᵀ(I − γ P_π)⁻¹ r_τ^π` from raw tables.
fn ref_objective(mdp: &TabularMdp, kernel: &[f64], probs: &[f64], tau: f64) -> Result<f64> {
    let (n, na, g) = (mdp.n_states, mdp.n_actions, mdp.discount);
    let mut m = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    for s in 0..n {
        m[s * n + s] = 1.0;
        for a in 0..na {
            let p = probs[s * na + a];
            if p == 0.0 {
                continue;
            }
            let ent = if tau > 0.0 { -tau * Float::ln(p) } else { 0.0 };
            r[s] += p * (mdp.reward[s * na + a] + ent);
            for t in 0..n {
                m[s * n + t] -= g * p * kernel[(s * na + a) * n + t];
            }
        }
    }
    let v = linalg::solve(&m, &r)?;
    Ok(linalg::dot(&mdp.initial_dist, &v))
}

/// Soft-optimal value at a kernel by soft policy iteration.
fn ref_soft_optimum(mdp: &TabularMdp, kernel: &[f64], tau: f64) -> Result<f64> {
    let (n, na, g) = (mdp.n_states, mdp.n_actions, mdp.discount);
    let mut probs = vec![1.0 / na as f64; n * na];
    let mut best = f64::NEG_INFINITY;
    for _ in 0..500 {
        // evaluate
        let mut m = vec![0.0; n * n];
        let mut r = vec![0.0; n];
        for s in 0..n {
            m[s * n + s] = 1.0;
            for a in 0..na {
                let p = probs[s * na + a];
                if p == 0.0 {
                    continue;
                }
                r[s] += p * (mdp.reward[s * na + a] - tau * Float::ln(p));
                for t in 0..n {
                    m[s * n + t] -= g * p * kernel[(s * na + a) * n + t];
                }
            }
        }
        let v = linalg::solve(&m, &r)?;
        let j = linalg::dot(&mdp.initial_dist, &v);
        // improve: π ∝ exp((r + γPv)/τ)
        let mut change = 0.0f64;
        for s in 0..n {
            let q: Vec<f64> = (0..na)
                .map(|a| {
                    let row = &kernel[(s * na + a) * n..(s * na + a + 1) * n];
                    mdp.reward[s * na + a] + g * linalg::dot(row, &v)
                })
                .collect();
            let mx = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = q.iter().map(|x| Float::exp((x - mx) / tau)).sum();
            for a in 0..na {
                let p = Float::exp((q[a] - mx) / tau) / z;
                change = change.max(Float::abs(p - probs[s * na + a]));
                probs[s * na + a] = p;
            }
        }
        best = j;
        if change < 1e-15 {
            break;
        }
    }
    Ok(best)
}

/// What [`brute_force_worst_kernel`] minimizes over the grid.
#[derive(Debug, Clone, Copy)]
pub enum WorstKernelMode<'a> {
    /// `J(ξ, π)` for a fixed policy.
    FixedPolicy(&'a StochasticPolicy),
    /// `F(ξ) = max_π J(ξ, π)`.
    Robust,
}

/// Exhaustive minimization over a grid; ties keep the earliest point.
pub fn brute_force_worst_kernel(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    grid: &[KernelParams],
    mode: WorstKernelMode<'_>,
    tau: f64,
) -> Result<(KernelParams, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, xi) in grid.iter().enumerate() {
        let f = worst_kernel_value(mdp, basis, xi, mode, tau)?;
        if best.is_none_or(|(_, b)| f < b) {
            best = Some((k, f));
        }
    }
    let (k, f) = best.ok_or(Error::EmptyGrid)?;
    Ok((grid[k].clone(), f))
}

/// The value [`brute_force_worst_kernel`] assigns to one point.
pub fn worst_kernel_value(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    mode: WorstKernelMode<'_>,
    tau: f64,
) -> Result<f64> {
    let p = mix(basis, &xi.xi);
    match mode {
        WorstKernelMode::FixedPolicy(pi) => ref_objective(mdp, &p, &pi.probs, tau),
        WorstKernelMode::Robust => ref_soft_optimum(mdp, &p, tau),
    }
}

/// Long-run average reward of `probs` under `kernel`, from the stationary
/// linear system. Requires a unique stationary distribution.
fn ref_gain(mdp: &TabularMdp, kernel: &[f64], probs: &[f64]) -> Result<f64> {
    let (n, na) = (mdp.n_states, mdp.n_actions);
    // rows of Aᵀ: (Pᵀ − I) μ = 0 with the last row replaced by Σμ = 1
    let mut a = vec![0.0; n * n];
    let mut r = vec![0.0; n];
    for s in 0..n {
        for act in 0..na {
            let p = probs[s * na + act];
            r[s] += p * mdp.reward[s * na + act];
            for t in 0..n {
                a[t * n + s] += p * kernel[(s * na + act) * n + t];
            }
        }
        a[s * n + s] -= 1.0;
    }
    for s in 0..n {
        a[(n - 1) * n + s] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let mu = linalg::solve(&a, &b)?;
    Ok(linalg::dot(&mu, &r))
}

/// `max_{π ∈ grid} min_{ξ ∈ vertices} g(π, P_ξ)`.
pub fn brute_force_robust_avg(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    vertices: &[KernelParams],
    policy_grid: &[StochasticPolicy],
) -> Result<f64> {
    if vertices.is_empty() || policy_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let kernels: Vec<Vec<f64>> = vertices.iter().map(|v| mix(basis, &v.xi)).collect();
    let mut best = f64::NEG_INFINITY;
    for pi in policy_grid {
        let mut worst = f64::INFINITY;
        for k in &kernels {
            worst = worst.min(ref_gain(mdp, k, &pi.probs)?);
        }
        best = best.max(worst);
    }
    Ok(best)
}

/// Deterministic policies softened to `π(a|s) ∝ exp(1[a = a_s]/temperature)`,
/// plus `n_random` Dirichlet(1) policies.
pub fn soft_policy_grid(
    n_states: usize,
    n_actions: usize,
    temperature: f64,
    n_random: usize,
    seed: RngSeed,
) -> Vec<StochasticPolicy> {
    let mut out = Vec::new();
    let total = n_actions.pow(n_states as u32);
    let hi = Float::exp(1.0 / temperature);
    let z = hi + (n_actions - 1) as f64;
    for code in 0..total {
        let mut c = code;
        let mut probs = vec![1.0 / z; n_states * n_actions];
        for s in 0..n_states {
            probs[s * n_actions + c % n_actions] = hi / z;
            c /= n_actions;
        }
        out.push(StochasticPolicy { n_states, n_actions, probs });
    }
    let mut rng = seed.rng();
    for _ in 0..n_random {
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            let e: Vec<f64> = (0..n_actions).map(|_| -Float::ln(1.0 - rng.random::<f64>())).collect();
            let t: f64 = e.iter().sum();
            probs.extend(e.iter().map(|x| x / t));
        }
        out.push(StochasticPolicy { n_states, n_actions, probs });
    }
    out
}

/// Every policy whose rows lie on the lattice `k/resolution`.
pub fn policy_lattice(n_states: usize, n_actions: usize, resolution: usize) -> Vec<StochasticPolicy> {
    let rows: Vec<Vec<f64>> = compositions(n_actions, resolution)
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / resolution as f64).collect())
        .collect();
    let mut out = Vec::new();
    let total = rows.len().pow(n_states as u32);
    for code in 0..total {
        let mut c = code;
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states {
            probs.extend_from_slice(&rows[c % rows.len()]);
            c /= rows.len();
        }
        out.push(StochasticPolicy { n_states, n_actions, probs });
    }
    out
}

/// Exact mean of the level-`⌊log₂ T_max⌋` MLMC average: the single-step
/// estimator averaged over the first `2^J` marginals of the γ-restart chain
/// started from ρ.
#[allow(clippy::too_many_arguments)]
pub fn mlmc_truncated_mean(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &[f64],
    policy: &StochasticPolicy,
    v_hat: &[f64],
    tau: f64,
    t_max: usize,
) -> Vec<f64> {
    let (n, na, g, d) = (mdp.n_states, mdp.n_actions, mdp.discount, basis.dim);
    let p = mix(basis, xi);
    // per-state expected estimator
    let mut h = vec![0.0; n * d];
    for s in 0..n {
        for a in 0..na {
            let pa = policy.probs[s * na + a];
            if pa == 0.0 {
                continue;
            }
            let r_tau = mdp.reward[s * na + a] - if tau > 0.0 { tau * Float::ln(pa) } else { 0.0 };
            for t in 0..n {
                let pt = p[(s * na + a) * n + t];
                if pt == 0.0 {
                    continue;
                }
                // P · φ / P cancels to φ
                let w = pa * (r_tau + g * v_hat[t]) / (1.0 - g);
                for i in 0..d {
                    h[s * d + i] += w * basis.phi(i, s, a, t);
                }
            }
        }
    }
    let mut mu = mdp.initial_dist.clone();
    let levels = usize::BITS - 1 - t_max.leading_zeros();
    let len = 1usize << levels;
    let mut out = vec![0.0; d];
    for _ in 0..len {
        for s in 0..n {
            for i in 0..d {
                out[i] += mu[s] * h[s * d + i] / len as f64;
            }
        }
        let mut next: Vec<f64> = mdp.initial_dist.iter().map(|r| (1.0 - g) * r).collect();
        for s in 0..n {
            for a in 0..na {
                let w = g * mu[s] * policy.probs[s * na + a];
                for t in 0..n {
                    next[t] += w * p[(s * na + a) * n + t];
                }
            }
        }
        mu = next;
    }
    out
}

/// Empirical total-variation mixing time of `P_π`: the first `t ≤ max_steps`
/// at which every start state's empirical time-`t` distribution over
/// `n_chains` runs is within `tolerance` of the stationary frequencies of one
/// long run of `burn_steps` steps. `None` if never reached.
pub fn empirical_mixing_time(
    kernel: &TransitionKernel,
    policy: &StochasticPolicy,
    tolerance: f64,
    n_chains: usize,
    max_steps: usize,
    burn_steps: usize,
    seed: RngSeed,
) -> Option<usize> {
    let n = kernel.n_states;
    let na = kernel.n_actions;
    let mut rng = seed.rng();
    let step = |s: usize, rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for a in 0..na {
            for t in 0..n {
                acc += policy.probs[s * na + a] * kernel.probs[(s * na + a) * n + t];
                if u < acc {
                    return t;
                }
            }
        }
        n - 1
    };
    let mut freq = vec![0.0; n];
    let mut s = 0;
    for _ in 0..burn_steps {
        s = step(s, &mut rng);
        freq[s] += 1.0 / burn_steps as f64;
    }
    let mut states: Vec<Vec<usize>> = (0..n).map(|s0| vec![s0; n_chains]).collect();
    for t in 1..=max_steps {
        let mut worst = 0.0f64;
        for chains in states.iter_mut() {
            let mut counts = vec![0.0; n];
            for c in chains.iter_mut() {
                *c = step(*c, &mut rng);
                counts[*c] += 1.0 / n_chains as f64;
            }
            let tv = 0.5 * linalg::norm1(&linalg::sub(&counts, &freq));
            worst = worst.max(tv);
        }
        if worst <= tolerance {
            return Some(t);
        }
    }
    None
}
