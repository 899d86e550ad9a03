//! Projected-gradient and Frank-Wolfe outer loops over ξ, Nash-gap
//! certification, theory constants and the average-reward reduction.

use alloc::format;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::eval::{avg_summary, exact_grad_xi, objective, AvgRewardSummary};
use crate::grad_est::{mom_gradient, MlmcConfig};
use crate::kernel::{kernel_from_params, KernelBasis, KernelParams, UncertaintySet};
use crate::linalg::{dot, norm2, sub, tangent};
use crate::mdp::{StochasticPolicy, TabularMdp};
use crate::policy::{policy_oracle, policy_oracle_for_kernel, SoftmaxPolicy};
use crate::rng::RngSeed;

/// How the outer loop obtains `∇_ξ J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GradientMode {
    Exact,
    Mlmc,
}

/// Outer-loop settings shared by both solvers.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverConfig {
    pub max_iters: usize,
    /// PGD step β; defaults to `1/(2 L_F)`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub step_size: Option<f64>,
    /// FW curvature `C_f`; defaults to `L_F · D_Ξ²`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub curvature: Option<f64>,
    pub tau: f64,
    pub eps: f64,
    pub eps_grad: f64,
    pub eps_theta: f64,
    pub gradient_mode: GradientMode,
    #[cfg_attr(feature = "serde", serde(default))]
    pub mlmc: Option<MlmcConfig>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: RngSeed,
    /// Stop once the gradient-mapping norm (PGD) or FW gap drops to this.
    #[cfg_attr(feature = "serde", serde(default))]
    pub tol: f64,
    /// Starting point; defaults to the set's center.
    #[cfg_attr(feature = "serde", serde(default))]
    pub xi0: Option<Vec<f64>>,
    /// Store ξ in every trace record.
    #[cfg_attr(feature = "serde", serde(default))]
    pub record_xi: bool,
}

impl SolverConfig {
    /// Exact-gradient defaults with theory-derived β and `C_f`.
    pub fn exact(max_iters: usize, tau: f64, eps_theta: f64) -> Self {
        SolverConfig {
            max_iters,
            step_size: None,
            curvature: None,
            tau,
            eps: 0.05,
            eps_grad: 0.0,
            eps_theta,
            gradient_mode: GradientMode::Exact,
            mlmc: None,
            seed: RngSeed(0),
            tol: 0.0,
            xi0: None,
            record_xi: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.tau > 0.0) || !(self.eps_theta > 0.0) {
            return bad("tau and eps_theta must be positive");
        }
        if self.step_size.is_some_and(|b| !(b > 0.0)) || self.curvature.is_some_and(|c| !(c > 0.0)) {
            return bad("step size and curvature must be positive");
        }
        if !(self.tol >= 0.0) || !(self.eps >= 0.0) || !(self.eps_grad >= 0.0) {
            return bad("tolerances must be nonnegative");
        }
        match (self.gradient_mode, &self.mlmc) {
            (GradientMode::Exact, Some(_)) => bad("exact gradient mode does not take mlmc settings"),
            (GradientMode::Mlmc, None) => bad("mlmc gradient mode needs mlmc settings"),
            (GradientMode::Mlmc, Some(m)) => m.validate(),
            (GradientMode::Exact, None) => Ok(()),
        }
    }
}

/// Source of ξ-gradients for the outer loops. Returns the gradient and the
/// number of environment transitions it consumed.
pub trait GradientOracle {
    fn gradient(
        &mut self,
        mdp: &TabularMdp,
        basis: &KernelBasis,
        xi: &KernelParams,
        policy: &StochasticPolicy,
        tau: f64,
        iter: usize,
    ) -> Result<(Vec<f64>, u64)>;
}

/// Exact resolvent gradient.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactGradient;

impl GradientOracle for ExactGradient {
    fn gradient(
        &mut self,
        mdp: &TabularMdp,
        basis: &KernelBasis,
        xi: &KernelParams,
        policy: &StochasticPolicy,
        tau: f64,
        _iter: usize,
    ) -> Result<(Vec<f64>, u64)> {
        Ok((exact_grad_xi(mdp, basis, xi, policy, tau)?, 0))
    }
}

/// Median-of-means MLMC gradient, reseeded per iteration.
#[derive(Debug, Clone)]
pub struct MomGradient {
    pub cfg: MlmcConfig,
}

impl MomGradient {
    /// Config used at outer iteration `iter`.
    pub fn config_for(&self, iter: usize) -> MlmcConfig {
        MlmcConfig { seed: self.cfg.seed.derive(iter as u64), ..self.cfg.clone() }
    }
}

impl GradientOracle for MomGradient {
    fn gradient(
        &mut self,
        mdp: &TabularMdp,
        basis: &KernelBasis,
        xi: &KernelParams,
        policy: &StochasticPolicy,
        tau: f64,
        iter: usize,
    ) -> Result<(Vec<f64>, u64)> {
        let est = mom_gradient(mdp, basis, xi, policy, tau, &self.config_for(iter))?;
        Ok((est.grad, est.n_env_steps))
    }
}

/// The built-in oracle selected by `cfg.gradient_mode`.
pub fn default_oracle(cfg: &SolverConfig) -> alloc::boxed::Box<dyn GradientOracle> {
    match (&cfg.gradient_mode, &cfg.mlmc) {
        (GradientMode::Mlmc, Some(m)) => alloc::boxed::Box::new(MomGradient { cfg: m.clone() }),
        _ => alloc::boxed::Box::new(ExactGradient),
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// `F(ξ_k) = J(ξ_k, π_k)` with `π_k` the oracle policy.
    pub f_value: f64,
    /// ℓ2 norm of the simplex-tangent part of the gradient used.
    pub grad_norm: f64,
    /// FW gap `ĝ_k` or gradient-mapping norm `‖G_k‖`.
    pub gap: f64,
    pub env_steps: u64,
    pub xi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Pgd,
    FrankWolfe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub kind: SolverKind,
    pub records: Vec<IterRecord>,
    /// Index into `records` of the returned iterate.
    pub best_iter: usize,
    /// β for PGD, `C_f` for Frank-Wolfe.
    pub step_parameter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome {
    pub policy: SoftmaxPolicy,
    pub xi: KernelParams,
    pub trace: SolverTrace,
    pub last_policy: SoftmaxPolicy,
    pub last_xi: KernelParams,
}

/// Closed-form smoothness constants, plus set-dependent ones when known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    pub l_pi: f64,
    pub l_xi: f64,
    pub l_pi_grad: f64,
    pub l_xi_grad: f64,
    pub l_f: f64,
    pub mismatch: Option<f64>,
    pub diameter: Option<f64>,
    pub c_f_bound: Option<f64>,
}

impl TheoryConstants {
    pub fn with_set(mut self, set: &UncertaintySet) -> Self {
        let d = set.diameter();
        self.diameter = Some(d);
        self.c_f_bound = Some(self.l_f * d * d);
        self
    }

    pub fn with_mismatch(mut self, d: f64) -> Self {
        self.mismatch = Some(d);
        self
    }
}

/// Lipschitz and smoothness constants of J and F for this instance, given the
/// log-policy gradient bound `g1`.
pub fn theory_constants(mdp: &TabularMdp, basis: &KernelBasis, tau: f64, g1: f64) -> TheoryConstants {
    let a = mdp.n_actions as f64;
    let la = Float::ln(a);
    let g = mdp.discount;
    let h = 1.0 - g;
    let c = basis.feature_bound;
    let dp = Float::sqrt(basis.dim as f64);
    let reg = 1.0 + tau * la;
    TheoryConstants {
        l_pi: 2.0 * reg * g1 * Float::sqrt(a) / h.powi(2),
        l_xi: dp * c * (1.0 + la) / h.powi(2),
        l_pi_grad: 5.0 * g * reg * c * g1 * Float::sqrt(a) / h.powi(3),
        l_xi_grad: 3.0 * g * dp * (1.0 + la) * c / h.powi(3),
        l_f: 13.0 * a * dp * g * reg * reg * c / (tau * h.powi(5)),
        mismatch: None,
        diameter: None,
        c_f_bound: None,
    }
}

fn start_point(set: &UncertaintySet, cfg: &SolverConfig) -> Result<KernelParams> {
    match &cfg.xi0 {
        Some(x) => {
            if !set.contains(x, 1e-9) {
                return Err(Error::InvalidConfig("xi0 is not in the uncertainty set".into()));
            }
            Ok(KernelParams::new(x.clone()))
        }
        None => Ok(set.center()),
    }
}

struct Step {
    policy: SoftmaxPolicy,
    f_value: f64,
    grad: Vec<f64>,
    steps: u64,
}

fn inner_step(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    cfg: &SolverConfig,
    oracle: &mut dyn GradientOracle,
    iter: usize,
) -> Result<Step> {
    let (policy, _) = policy_oracle(mdp, basis, xi, cfg.tau, cfg.eps_theta)?;
    let f_value = objective(mdp, basis, xi, policy.policy(), cfg.tau)?;
    let (grad, steps) = oracle.gradient(mdp, basis, xi, policy.policy(), cfg.tau, iter)?;
    Ok(Step { policy, f_value, grad, steps })
}

/// Projected gradient descent on `F(ξ) = max_π J(ξ, π)` over an
/// s-rectangular set, with the configured gradient mode.
pub fn pgd_solve(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    set: &UncertaintySet,
    cfg: &SolverConfig,
) -> Result<SolverOutcome> {
    pgd_solve_with(mdp, basis, set, cfg, default_oracle(cfg).as_mut())
}

/// [`pgd_solve`] with a caller-supplied gradient source.
pub fn pgd_solve_with(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    set: &UncertaintySet,
    cfg: &SolverConfig,
    oracle: &mut dyn GradientOracle,
) -> Result<SolverOutcome> {
    cfg.validate()?;
    mdp.validate()?;
    if !set.is_s_rectangular() {
        return Err(Error::InvalidConfig("projected gradient descent needs an s-rectangular set".into()));
    }
    set.validate_against(basis)?;
    let beta = match cfg.step_size {
        Some(b) => b,
        None => 1.0 / (2.0 * theory_constants(mdp, basis, cfg.tau, core::f64::consts::SQRT_2).l_f),
    };
    let mut xi = start_point(set, cfg)?;
    let mut records = Vec::new();
    let mut env = 0u64;
    let mut best: Option<(usize, f64, SoftmaxPolicy, KernelParams)> = None;
    let mut last = None;
    for k in 0..cfg.max_iters {
        let st = inner_step(mdp, basis, &xi, cfg, oracle, k)?;
        env += st.steps;
        let trial: Vec<f64> = xi.xi.iter().zip(&st.grad).map(|(x, g)| x - beta * g).collect();
        let next = set.project(&trial)?;
        let mapping = norm2(&sub(&next.xi, &xi.xi)) / beta;
        records.push(IterRecord {
            iter: k,
            f_value: st.f_value,
            grad_norm: norm2(&tangent(&st.grad)),
            gap: mapping,
            env_steps: env,
            xi: cfg.record_xi.then(|| xi.xi.clone()),
        });
        if best.as_ref().is_none_or(|b| mapping < b.1) {
            best = Some((k, mapping, st.policy.clone(), xi.clone()));
        }
        last = Some((st.policy, xi.clone()));
        if mapping <= cfg.tol {
            break;
        }
        xi = next;
    }
    let (best_iter, _, policy, xi_best) = best.ok_or(Error::InvalidConfig("no iterations".into()))?;
    let (last_policy, last_xi) = last.ok_or(Error::InvalidConfig("no iterations".into()))?;
    Ok(SolverOutcome {
        policy,
        xi: xi_best,
        trace: SolverTrace { kind: SolverKind::Pgd, records, best_iter, step_parameter: beta },
        last_policy,
        last_xi,
    })
}

/// Frank-Wolfe on `F(ξ)` over any convex set, step `min{1, ĝ/C_f}` clamped
/// at zero.
pub fn fw_solve(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    set: &UncertaintySet,
    cfg: &SolverConfig,
) -> Result<SolverOutcome> {
    fw_solve_with(mdp, basis, set, cfg, default_oracle(cfg).as_mut())
}

/// [`fw_solve`] with a caller-supplied gradient source.
pub fn fw_solve_with(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    set: &UncertaintySet,
    cfg: &SolverConfig,
    oracle: &mut dyn GradientOracle,
) -> Result<SolverOutcome> {
    cfg.validate()?;
    mdp.validate()?;
    set.validate_against(basis)?;
    let c_f = match cfg.curvature {
        Some(c) => c,
        None => theory_constants(mdp, basis, cfg.tau, core::f64::consts::SQRT_2)
            .with_set(set)
            .c_f_bound
            .unwrap_or(f64::INFINITY),
    };
    let mut xi = start_point(set, cfg)?;
    let mut records = Vec::new();
    let mut env = 0u64;
    let mut best: Option<(usize, f64, SoftmaxPolicy, KernelParams)> = None;
    let mut last = None;
    for k in 0..cfg.max_iters {
        if !set.contains(&xi.xi, 1e-9) {
            return Err(Error::InvalidConfig(format!("iterate {k} left the uncertainty set")));
        }
        let st = inner_step(mdp, basis, &xi, cfg, oracle, k)?;
        env += st.steps;
        let s = set.lmo(&st.grad);
        let dir = sub(&s.xi, &xi.xi);
        let gap = -dot(&dir, &st.grad);
        let step = if c_f > 0.0 { (gap / c_f).clamp(0.0, 1.0) } else { 1.0 };
        records.push(IterRecord {
            iter: k,
            f_value: st.f_value,
            grad_norm: norm2(&tangent(&st.grad)),
            gap,
            env_steps: env,
            xi: cfg.record_xi.then(|| xi.xi.clone()),
        });
        if best.as_ref().is_none_or(|b| gap < b.1) {
            best = Some((k, gap, st.policy.clone(), xi.clone()));
        }
        last = Some((st.policy, xi.clone()));
        if gap <= cfg.tol {
            break;
        }
        xi = KernelParams::new(xi.xi.iter().zip(&dir).map(|(x, d)| x + step * d).collect());
    }
    let (best_iter, _, policy, xi_best) = best.ok_or(Error::InvalidConfig("no iterations".into()))?;
    let (last_policy, last_xi) = last.ok_or(Error::InvalidConfig("no iterations".into()))?;
    Ok(SolverOutcome {
        policy,
        xi: xi_best,
        trace: SolverTrace { kind: SolverKind::FrankWolfe, records, best_iter, step_parameter: c_f },
        last_policy,
        last_xi,
    })
}

/// Best-response gaps of `(π, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NashGap {
    /// `max_π' J(ξ, π') − J(ξ, π)`.
    pub policy_gap: f64,
    /// `J(ξ, π) − min_{ξ' ∈ grid} J(ξ', π)`.
    pub kernel_gap: f64,
}

/// Accuracy of the best response used by [`nash_gap`].
pub const BEST_RESPONSE_EPS: f64 = 1e-10;

pub fn nash_gap(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    tau: f64,
    probe_grid: &[KernelParams],
) -> Result<NashGap> {
    if probe_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let here = objective(mdp, basis, xi, policy, tau)?;
    let (br, _) = policy_oracle(mdp, basis, xi, tau, BEST_RESPONSE_EPS)?;
    let best = objective(mdp, basis, xi, br.policy(), tau)?;
    let mut worst = f64::INFINITY;
    for p in probe_grid {
        worst = worst.min(objective(mdp, basis, p, policy, tau)?);
    }
    Ok(NashGap { policy_gap: best - here, kernel_gap: here - worst })
}

/// Settings for [`avg_reward_solve`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AvgRewardConfig {
    /// Frank-Wolfe settings for the discounted surrogate. `tol` is replaced by
    /// `ε/(2(1−γ))`.
    pub solver: SolverConfig,
    /// When set, `C_f = normalized_curvature / (1−γ)³`, overriding
    /// `solver.curvature`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub normalized_curvature: Option<f64>,
    /// Starting span estimate; by default the bias span of a preliminary
    /// oracle policy on the nominal kernel.
    #[cfg_attr(feature = "serde", serde(default))]
    pub initial_span: Option<f64>,
    #[cfg_attr(feature = "serde", serde(default = "default_restarts"))]
    pub max_restarts: usize,
}

#[cfg(feature = "serde")]
fn default_restarts() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvgRewardOutcome {
    pub policy: SoftmaxPolicy,
    pub xi: KernelParams,
    pub summary: AvgRewardSummary,
    pub trace: SolverTrace,
    pub gamma: f64,
    /// Span estimate used by the final run.
    pub span_estimate: f64,
    pub restarts: usize,
}

/// `γ = 1 − ε / max(H, ε)` clamped to `[0.5, 0.999]`.
pub fn reduction_discount(eps: f64, span: f64) -> f64 {
    (1.0 - eps / span.max(eps)).clamp(0.5, 0.999)
}

/// Average-reward robust solve through a discounted surrogate. The discount
/// comes from a span estimate; if the returned pair's bias span exceeds it,
/// the estimate doubles and the solve reruns.
pub fn avg_reward_solve(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    set: &UncertaintySet,
    eps: f64,
    cfg: &AvgRewardConfig,
) -> Result<AvgRewardOutcome> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig("eps must be positive".into()));
    }
    let tau = cfg.solver.tau;
    let mut span = match cfg.initial_span {
        Some(h) => h,
        None => {
            let (pre, _) = policy_oracle_for_kernel(mdp, &mdp.nominal(), tau, cfg.solver.eps_theta)?;
            avg_summary(mdp, &mdp.nominal(), pre.policy())?.span
        }
    };
    let mut restarts = 0;
    loop {
        let gamma = reduction_discount(eps, span);
        let surrogate = mdp.with_discount(gamma);
        let mut fw = cfg.solver.clone();
        fw.tol = eps / (2.0 * (1.0 - gamma));
        if let Some(c) = cfg.normalized_curvature {
            fw.curvature = Some(c / (1.0 - gamma).powi(3));
        }
        let out = fw_solve(&surrogate, basis, set, &fw)?;
        let kernel = kernel_from_params(basis, &out.xi)?;
        let summary = avg_summary(mdp, &kernel, out.policy.policy())?;
        if summary.span <= span * (1.0 + 1e-9) + 1e-12 || restarts >= cfg.max_restarts {
            return Ok(AvgRewardOutcome {
                policy: out.policy,
                xi: out.xi,
                summary,
                trace: out.trace,
                gamma,
                span_estimate: span,
                restarts,
            });
        }
        span = if span > 0.0 { 2.0 * span } else { eps };
        restarts += 1;
    }
}
