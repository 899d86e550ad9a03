//! Tabular softmax policies and the soft value-iteration policy oracle.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::eval::eval_policy;
use crate::kernel::{kernel_from_params, KernelBasis, KernelParams};
use crate::linalg;
use crate::mdp::{check_len, StochasticPolicy, TabularMdp, TransitionKernel};

/// Softmax policy over per-state logits. Logits are stored in the gauge
/// where each state's largest logit is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy {
    logits: Vec<f64>,
    probs: StochasticPolicy,
}

impl SoftmaxPolicy {
    pub fn from_logits(n_states: usize, n_actions: usize, mut logits: Vec<f64>) -> Result<Self> {
        check_len("logits", n_states * n_actions, logits.len())?;
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::BadPolicy);
        }
        let mut probs = vec![0.0; logits.len()];
        for (row, prow) in logits.chunks_mut(n_actions).zip(probs.chunks_mut(n_actions)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (l, p) in row.iter_mut().zip(prow.iter_mut()) {
                *l -= m;
                *p = Float::exp(*l);
                total += *p;
            }
            for p in prow.iter_mut() {
                *p /= total;
            }
        }
        Ok(SoftmaxPolicy { logits, probs: StochasticPolicy { n_states, n_actions, probs } })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        SoftmaxPolicy { logits: vec![0.0; n_states * n_actions], probs: StochasticPolicy::uniform(n_states, n_actions) }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn policy(&self) -> &StochasticPolicy {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.prob(s, a)
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions
    }
}

/// Diagnostics of a [`policy_oracle`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub iterations: usize,
    /// Sup-norm residual of the last backup.
    pub residual: f64,
    pub residual_history: Vec<f64>,
    /// Bound on `max_s ‖π − π*‖₁` from the contraction argument.
    pub policy_gap: f64,
    /// Measured `max_s ‖π − softmax(Q^e/τ)‖₁` at the returned policy.
    pub fixed_point_gap: f64,
    /// `max ‖∇_θ log π(a|s)‖₂` over (s, a).
    pub g1_bound: f64,
    /// Largest Hessian entry scale `max 2π(1−π)` of the log-policy.
    pub g2_bound: f64,
}

fn softmax_q(q: &[f64], n_actions: usize, tau: f64) -> (Vec<f64>, Vec<f64>) {
    // returns (τ log Σ exp(q/τ) per state, logits q/τ)
    let mut v = Vec::with_capacity(q.len() / n_actions);
    let mut logits = Vec::with_capacity(q.len());
    for row in q.chunks(n_actions) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| Float::exp((x - m) / tau)).sum();
        v.push(m + tau * Float::ln(sum));
        logits.extend(row.iter().map(|x| x / tau));
    }
    (v, logits)
}

fn q_from_v(mdp: &TabularMdp, kernel: &TransitionKernel, v: &[f64]) -> Vec<f64> {
    let na = mdp.n_actions;
    let mut q = Vec::with_capacity(mdp.n_states * na);
    for s in 0..mdp.n_states {
        for a in 0..na {
            q.push(mdp.reward(s, a) + mdp.discount * linalg::dot(kernel.row(s, a), v));
        }
    }
    q
}

/// Soft Bellman backup `v'(s) = τ log Σ_a exp(q(s,a)/τ)` with
/// `q = r + γ P v`; the greedy policy has logits `q/τ`.
pub fn soft_bellman_backup(
    mdp: &TabularMdp,
    kernel: &TransitionKernel,
    v: &[f64],
    tau: f64,
) -> Result<(Vec<f64>, SoftmaxPolicy)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    check_len("value vector", mdp.n_states, v.len())?;
    let q = q_from_v(mdp, kernel, v);
    let (vn, logits) = softmax_q(&q, mdp.n_actions, tau);
    Ok((vn, SoftmaxPolicy::from_logits(mdp.n_states, mdp.n_actions, logits)?))
}

/// `max_s ‖π(·|s) − softmax(Q^e(s,·)/τ)‖₁` where `Q^e` is evaluated under
/// `policy` itself.
pub fn fixed_point_gap(
    mdp: &TabularMdp,
    kernel: &TransitionKernel,
    policy: &StochasticPolicy,
    tau: f64,
) -> Result<f64> {
    let vt = eval_policy(mdp, kernel, policy, tau)?;
    let qe = vt.entropy_adjusted_q(policy);
    let logits: Vec<f64> = qe.iter().map(|x| x / tau).collect();
    let target = SoftmaxPolicy::from_logits(mdp.n_states, mdp.n_actions, logits)?;
    Ok((0..mdp.n_states)
        .map(|s| linalg::norm1(&linalg::sub(policy.row(s), target.policy().row(s))))
        .fold(0.0, f64::max))
}

/// Backup cap for [`policy_oracle`].
pub const ORACLE_CAP: usize = 1_000_000;

/// ε-optimal entropy-regularized policy at `P_ξ`.
pub fn policy_oracle(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    tau: f64,
    eps_theta: f64,
) -> Result<(SoftmaxPolicy, OracleReport)> {
    let kernel = kernel_from_params(basis, xi)?;
    policy_oracle_for_kernel(mdp, &kernel, tau, eps_theta)
}

/// [`policy_oracle`] for an explicit transition table. Iterates soft backups
/// from `v = 0` until the residual is at most `(1−γ)τε/2`, then keeps
/// iterating until the returned policy also passes the fixed-point test.
pub fn policy_oracle_for_kernel(
    mdp: &TabularMdp,
    kernel: &TransitionKernel,
    tau: f64,
    eps_theta: f64,
) -> Result<(SoftmaxPolicy, OracleReport)> {
    if !(tau > 0.0) || !(eps_theta > 0.0) {
        return Err(Error::InvalidConfig("tau and eps_theta must be positive".into()));
    }
    let g = mdp.discount;
    let target = (1.0 - g) * tau * eps_theta / 2.0;
    let mut v = vec![0.0; mdp.n_states];
    let mut history = Vec::new();
    for it in 1..=ORACLE_CAP {
        let (vn, pol) = soft_bellman_backup(mdp, kernel, &v, tau)?;
        let res = vn.iter().zip(&v).map(|(a, b)| Float::abs(a - b)).fold(0.0, f64::max);
        history.push(res);
        let vmax = vn.iter().map(|x| Float::abs(*x)).fold(1.0, f64::max);
        // rounding floor: residuals below a few ulps of |v| cannot shrink further
        let floor = 16.0 * f64::EPSILON * vmax;
        v = vn;
        if res <= target.max(floor) {
            let gap = fixed_point_gap(mdp, kernel, pol.policy(), tau)?;
            if gap <= eps_theta {
                let (g1, g2) = log_policy_bounds(&pol);
                return Ok((
                    pol,
                    OracleReport {
                        iterations: it,
                        residual: res,
                        residual_history: history,
                        policy_gap: g * res / ((1.0 - g) * tau),
                        fixed_point_gap: gap,
                        g1_bound: g1,
                        g2_bound: g2,
                    },
                ));
            }
        }
    }
    Err(Error::IterationCapExceeded { iterations: ORACLE_CAP })
}

/// `∇_θ log π(a|s)` over all (s, a) logits: `e_a − π(·|s)` in state `s`'s
/// block and zero elsewhere.
pub fn log_policy_grad(policy: &SoftmaxPolicy, s: usize, a: usize) -> Vec<f64> {
    let na = policy.n_actions();
    let mut out = vec![0.0; policy.n_states() * na];
    for b in 0..na {
        out[s * na + b] = if a == b { 1.0 } else { 0.0 } - policy.prob(s, b);
    }
    out
}

fn log_policy_bounds(policy: &SoftmaxPolicy) -> (f64, f64) {
    let na = policy.n_actions();
    let mut g1 = 0.0f64;
    let mut g2 = 0.0f64;
    for s in 0..policy.n_states() {
        let row = policy.policy().row(s);
        let sq: f64 = row.iter().map(|p| p * p).sum();
        for &p in &row[..na] {
            // ‖e_a − π‖² = 1 − 2π_a + Σπ²
            g1 = g1.max(Float::sqrt((1.0 - 2.0 * p + sq).max(0.0)));
            g2 = g2.max(2.0 * p * (1.0 - p));
        }
    }
    (g1, g2)
}
