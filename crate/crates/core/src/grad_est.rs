//! Sampling-based estimation of `∇_ξ J`: per-transition importance-weighted
//! estimator, randomized-level MLMC and geometric median-of-means.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::eval_policy;
use crate::kernel::{kernel_from_params, KernelBasis, KernelParams, MixCoefficient};
use crate::linalg::{dist2, norm2};
use crate::mdp::{StochasticPolicy, TabularMdp, TransitionKernel};
use crate::rng::{cumulative, sample_cumulative, RngSeed};

/// One environment transition `(s, a, s')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub reward: f64,
    pub log_pi: f64,
}

/// Sizes and seeds for [`mom_gradient`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlmcConfig {
    pub t_max: usize,
    pub n_samples: usize,
    pub n_blocks: usize,
    pub eps: f64,
    pub beta: f64,
    pub lambda_pmin: MixCoefficient,
    pub seed: RngSeed,
    /// Magnitude of the ±noise added to each exact value entry; 0 disables.
    #[cfg_attr(feature = "serde", serde(default))]
    pub value_noise: f64,
}

/// Problem constants feeding the default MLMC sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcSizing {
    pub feature_bound: f64,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub t_mix: f64,
    pub eps: f64,
    pub beta: f64,
    /// Replaces the variance constant `C_sig` when set.
    pub c_sig: Option<f64>,
}

impl MlmcSizing {
    /// `4 C_φ² (1 + ln|A|)² / ((1−γ)⁴ p_min)`.
    pub fn c_sig_default(&self, p_min: f64) -> f64 {
        let la = 1.0 + Float::ln(self.n_actions as f64);
        4.0 * self.feature_bound.powi(2) * la * la / ((1.0 - self.gamma).powi(4) * p_min)
    }

    /// `(1−γ) ε / (2 γ C_φ √p_min)`.
    pub fn value_noise_default(&self, p_min: f64) -> f64 {
        (1.0 - self.gamma) * self.eps / (2.0 * self.gamma * self.feature_bound * Float::sqrt(p_min))
    }
}

/// `⌈8 ln(1/β)⌉`.
pub fn blocks_for(beta: f64) -> usize {
    Float::ceil(8.0 * Float::ln(1.0 / beta)) as usize
}

impl MlmcConfig {
    /// Default sizes: `T_max = ⌈C t_mix / ε²⌉`, `K = ⌈8 ln(1/β)⌉` and
    /// `N = ⌈C t_mix log₂(T_max) ln(1/β) / ε²⌉`. Value noise is off.
    pub fn from_theory(sizing: &MlmcSizing, lambda_pmin: MixCoefficient, seed: RngSeed) -> Result<Self> {
        let p_min = lambda_pmin.p_min(sizing.n_states);
        if !(p_min > 0.0) {
            return Err(Error::InvalidConfig("lambda_pmin must be positive for MLMC sizing".into()));
        }
        let c = sizing.c_sig.unwrap_or_else(|| sizing.c_sig_default(p_min));
        let e2 = sizing.eps * sizing.eps;
        let t_max = (Float::ceil(c * sizing.t_mix / e2) as usize).max(2);
        let n_blocks = blocks_for(sizing.beta).max(1);
        let n = Float::ceil(c * sizing.t_mix * Float::log2(t_max as f64) * Float::ln(1.0 / sizing.beta) / e2) as usize;
        let cfg = MlmcConfig {
            t_max,
            n_samples: n.max(n_blocks),
            n_blocks,
            eps: sizing.eps,
            beta: sizing.beta,
            lambda_pmin,
            seed,
            value_noise: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max < 2 {
            return Err(Error::InvalidConfig("t_max must be at least 2".into()));
        }
        if self.n_blocks == 0 || self.n_blocks > self.n_samples {
            return Err(Error::InvalidConfig("need 1 <= n_blocks <= n_samples".into()));
        }
        if !(self.lambda_pmin.lambda() > 0.0) {
            return Err(Error::InvalidConfig("lambda_pmin must be positive".into()));
        }
        if !(self.value_noise >= 0.0) || !(self.eps > 0.0) || !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig("eps, beta or value_noise out of range".into()));
        }
        Ok(())
    }

    /// Samples per block, `⌊N/K⌋`.
    pub fn block_size(&self) -> usize {
        self.n_samples / self.n_blocks
    }
}

/// Output of [`mom_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    pub n_env_steps: u64,
    /// Entry `j` counts draws whose level was `Q = j + 1`.
    pub level_histogram: Vec<u64>,
}

fn xi_dot_phi(basis: &KernelBasis, xi: &KernelParams, s: usize, a: usize, s_next: usize) -> f64 {
    (0..basis.dim).map(|i| xi.xi[i] * basis.phi(i, s, a, s_next)).sum()
}

/// Simulates `length` steps of the chain `s₀ ~ ρ`, `a ~ π`, `s' ~ P_ξ`.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    length: usize,
    seed: RngSeed,
) -> Result<Vec<Transition>> {
    let kernel = kernel_from_params(basis, xi)?;
    let mut rng = seed.rng();
    let rho = cumulative(&mdp.initial_dist);
    let mut s = sample_cumulative(&rho, &mut rng);
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let a = sample_cumulative(&cumulative(policy.row(s)), &mut rng);
        let s_next = sample_cumulative(&cumulative(kernel.row(s, a)), &mut rng);
        out.push(Transition { s, a, s_next, reward: mdp.reward(s, a), log_pi: Float::ln(policy.prob(s, a)) });
        s = s_next;
    }
    Ok(out)
}

/// `φ(s,a,s') (r_τ(s,a) + γ v̂(s')) / ((1−γ) P_ξ(s'|s,a))`.
pub fn single_step_grad(
    basis: &KernelBasis,
    xi: &KernelParams,
    z: &Transition,
    v_hat: &[f64],
    tau: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    let p = xi_dot_phi(basis, xi, z.s, z.a, z.s_next);
    if !(p > 0.0) {
        return Err(Error::ZeroTransitionProb { s: z.s, a: z.a, s_next: z.s_next });
    }
    let r_tau = z.reward - tau * z.log_pi;
    let w = (r_tau + gamma * v_hat[z.s_next]) / ((1.0 - gamma) * p);
    Ok((0..basis.dim).map(|i| basis.phi(i, z.s, z.a, z.s_next) * w).collect())
}

/// One MLMC draw.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcDraw {
    pub value: Vec<f64>,
    pub steps: usize,
    pub level: usize,
}

/// Partial result over a contiguous range of sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeResult {
    pub sum: Vec<f64>,
    pub steps: u64,
    pub histogram: Vec<u64>,
}

/// Precomputed sampling tables for MLMC draws at one `(ξ, π, v̂)`.
///
/// Rollouts follow the restart chain `s_{t+1} = s'_t` with probability γ and
/// `s_{t+1} ~ ρ` otherwise, started from `ρ`. Its time-averaged marginals
/// converge to the discounted occupancy, so level averages estimate the
/// occupancy-weighted expectation of the single-step estimator.
#[derive(Debug, Clone)]
pub struct MlmcSampler {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
    t_max: usize,
    rho: Vec<f64>,
    policy: Vec<f64>,
    kernel: Vec<f64>,
    /// Estimator vectors by `(s, a, s')`, `dim` entries each; zero where
    /// `P = 0` (never sampled).
    terms: Vec<f64>,
}

impl MlmcSampler {
    pub fn new(
        mdp: &TabularMdp,
        basis: &KernelBasis,
        xi: &KernelParams,
        policy: &StochasticPolicy,
        v_hat: &[f64],
        tau: f64,
        t_max: usize,
    ) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::InvalidConfig("t_max must be at least 2".into()));
        }
        let kernel = kernel_from_params(basis, xi)?;
        let (ns, na, d) = (mdp.n_states, mdp.n_actions, basis.dim);
        let mut terms = vec![0.0; ns * na * ns * d];
        for s in 0..ns {
            for a in 0..na {
                let pa = policy.prob(s, a);
                let log_pi = if pa > 0.0 { Float::ln(pa) } else { 0.0 };
                for s_next in 0..ns {
                    if kernel.get(s, a, s_next) <= 0.0 {
                        continue;
                    }
                    let z = Transition { s, a, s_next, reward: mdp.reward(s, a), log_pi };
                    let g = single_step_grad(basis, xi, &z, v_hat, tau, mdp.discount)?;
                    let o = ((s * na + a) * ns + s_next) * d;
                    terms[o..o + d].copy_from_slice(&g);
                }
            }
        }
        let mut kcum = Vec::with_capacity(kernel.probs.len());
        for row in kernel.probs.chunks(ns) {
            kcum.extend(cumulative(row));
        }
        let mut pcum = Vec::with_capacity(policy.probs.len());
        for row in policy.probs.chunks(na) {
            pcum.extend(cumulative(row));
        }
        Ok(MlmcSampler {
            n_states: ns,
            n_actions: na,
            dim: d,
            gamma: mdp.discount,
            t_max,
            rho: cumulative(&mdp.initial_dist),
            policy: pcum,
            kernel: kcum,
            terms,
        })
    }

    /// Sampler for [`mom_gradient`]: `v̂` is the exact value of `policy` at
    /// `P_ξ` plus independent ±`value_noise` per state, and every entry of
    /// `P_ξ` must be at least `λ/S`.
    pub fn for_mom(
        mdp: &TabularMdp,
        basis: &KernelBasis,
        xi: &KernelParams,
        policy: &StochasticPolicy,
        tau: f64,
        cfg: &MlmcConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let kernel = kernel_from_params(basis, xi)?;
        check_pmin(&kernel, cfg.lambda_pmin.p_min(mdp.n_states))?;
        let mut v_hat = eval_policy(mdp, &kernel, policy, tau)?.v;
        if cfg.value_noise > 0.0 {
            let mut rng = cfg.seed.derive(u64::MAX).rng();
            for v in v_hat.iter_mut() {
                *v += if rng.random::<bool>() { cfg.value_noise } else { -cfg.value_noise };
            }
        }
        Self::new(mdp, basis, xi, policy, &v_hat, tau, cfg.t_max)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> usize {
        sample_cumulative(&self.rho, rng)
    }

    /// Draws one transition from `s`; returns the estimator offset and the
    /// next chain state.
    fn step(&self, s: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let (ns, na) = (self.n_states, self.n_actions);
        let a = sample_cumulative(&self.policy[s * na..(s + 1) * na], rng);
        let row = (s * na + a) * ns;
        let s_next = sample_cumulative(&self.kernel[row..row + ns], rng);
        let offset = (row + s_next) * self.dim;
        let next = if rng.random::<f64>() < self.gamma { s_next } else { self.reset(rng) };
        (offset, next)
    }

    fn add(&self, acc: &mut [f64], offset: usize) {
        for (x, t) in acc.iter_mut().zip(&self.terms[offset..offset + self.dim]) {
            *x += t;
        }
    }

    /// Per-step estimator vectors `h_0, …, h_{len−1}` of one rollout. Uses
    /// the generator exactly as [`Self::sample_at_level`] does for a rollout
    /// of the same length.
    pub fn rollout_terms(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut s = self.reset(rng);
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let (o, n) = self.step(s, rng);
            s = n;
            out.push(self.terms[o..o + self.dim].to_vec());
        }
        out
    }

    /// One draw with the level `Q ~ Geom(1/2)` on `{1, 2, …}`.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> MlmcDraw {
        let mut q = 1;
        while q < 62 && rng.random::<bool>() {
            q += 1;
        }
        self.sample_at_level(q, rng)
    }

    /// `X = g⁰ + 2^Q (g^Q − g^{Q−1})` with both levels on one rollout, or
    /// `X = g⁰` from a single transition when `2^Q > T_max`.
    pub fn sample_at_level(&self, q: usize, rng: &mut ChaCha8Rng) -> MlmcDraw {
        let d = self.dim;
        let mut s = self.reset(rng);
        let (first, next) = self.step(s, rng);
        s = next;
        let mut value = self.terms[first..first + d].to_vec();
        let len = 1usize.checked_shl(q as u32).unwrap_or(usize::MAX);
        if q == 0 || len > self.t_max {
            return MlmcDraw { value, steps: 1, level: q };
        }
        // 2^Q (g^Q − g^{Q−1}) = Σ_{t ≥ 2^{Q−1}} h_t − Σ_{t < 2^{Q−1}} h_t
        let half = len / 2;
        let mut lower = self.terms[first..first + d].to_vec();
        let mut upper = vec![0.0; d];
        for t in 1..len {
            let (o, n) = self.step(s, rng);
            s = n;
            if t < half {
                self.add(&mut lower, o);
            } else {
                self.add(&mut upper, o);
            }
        }
        for k in 0..d {
            value[k] += upper[k] - lower[k];
        }
        MlmcDraw { value, steps: len, level: q }
    }

    /// Sums the draws with indices in `range`; draw `i` uses stream `i` of
    /// `seed`, so any partition of the indices gives the same per-draw values.
    pub fn run_range(&self, seed: RngSeed, range: Range<usize>) -> RangeResult {
        let mut sum = vec![0.0; self.dim];
        let mut steps = 0u64;
        let mut histogram = Vec::new();
        for i in range {
            let mut rng = seed.stream(i as u64);
            let draw = self.sample(&mut rng);
            for (x, v) in sum.iter_mut().zip(&draw.value) {
                *x += v;
            }
            steps += draw.steps as u64;
            if histogram.len() < draw.level {
                histogram.resize(draw.level, 0);
            }
            histogram[draw.level - 1] += 1;
        }
        RangeResult { sum, steps, histogram }
    }
}

fn check_pmin(kernel: &TransitionKernel, p_min: f64) -> Result<()> {
    let ns = kernel.n_states;
    for (k, &p) in kernel.probs.iter().enumerate() {
        if p < p_min * (1.0 - 1e-9) {
            let row = k / ns;
            return Err(Error::BelowMinProbability {
                s: row / kernel.n_actions,
                a: row % kernel.n_actions,
                s_next: k % ns,
                p,
                p_min,
            });
        }
    }
    Ok(())
}

/// One MLMC draw at `(ξ, π, v̂)` from `seed`; returns the draw and the number
/// of transitions consumed.
#[allow(clippy::too_many_arguments)]
pub fn mlmc_sample(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    v_hat: &[f64],
    tau: f64,
    t_max: usize,
    seed: RngSeed,
) -> Result<(Vec<f64>, usize)> {
    let sampler = MlmcSampler::new(mdp, basis, xi, policy, v_hat, tau, t_max)?;
    let d = sampler.sample(&mut seed.rng());
    Ok((d.value, d.steps))
}

/// Index ranges of the `K` blocks of `⌊N/K⌋` draws, followed by the range of
/// leftover draws (possibly empty), which are simulated but not averaged.
pub fn mom_ranges(cfg: &MlmcConfig) -> Vec<Range<usize>> {
    let m = cfg.block_size();
    let mut out: Vec<Range<usize>> = (0..cfg.n_blocks).map(|k| k * m..(k + 1) * m).collect();
    out.push(cfg.n_blocks * m..cfg.n_samples);
    out
}

/// Combines the per-range results of [`mom_ranges`] into the geometric median
/// of block means.
pub fn mom_aggregate(cfg: &MlmcConfig, parts: &[RangeResult]) -> GradientEstimate {
    let m = cfg.block_size() as f64;
    let means: Vec<Vec<f64>> = parts[..cfg.n_blocks].iter().map(|p| p.sum.iter().map(|x| x / m).collect()).collect();
    let mut histogram: Vec<u64> = Vec::new();
    let mut steps = 0;
    for p in parts {
        steps += p.steps;
        if histogram.len() < p.histogram.len() {
            histogram.resize(p.histogram.len(), 0);
        }
        for (h, c) in histogram.iter_mut().zip(&p.histogram) {
            *h += c;
        }
    }
    GradientEstimate {
        grad: geometric_median(&means, GEOMETRIC_MEDIAN_TOL),
        n_env_steps: steps,
        level_histogram: histogram,
    }
}

/// Median-of-means MLMC estimate of `∇_ξ J` at `(ξ, π)`.
pub fn mom_gradient(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    tau: f64,
    cfg: &MlmcConfig,
) -> Result<GradientEstimate> {
    let sampler = MlmcSampler::for_mom(mdp, basis, xi, policy, tau, cfg)?;
    let parts: Vec<RangeResult> = mom_ranges(cfg).into_iter().map(|r| sampler.run_range(cfg.seed, r)).collect();
    Ok(mom_aggregate(cfg, &parts))
}

/// Analytic mean rollout length `J + 2^{−J}` with `J = ⌊log₂ T_max⌋`.
pub fn expected_steps(cfg: &MlmcConfig) -> f64 {
    expected_steps_for(cfg.t_max)
}

pub fn expected_steps_for(t_max: usize) -> f64 {
    let j = usize::BITS - 1 - t_max.max(1).leading_zeros();
    j as f64 + Float::powi(0.5, j as i32)
}

pub const GEOMETRIC_MEDIAN_TOL: f64 = 1e-9;
const WEISZFELD_CAP: usize = 100_000;

/// Geometric median by Weiszfeld iteration with the Vardi–Zhang step at data
/// points.
pub fn geometric_median(points: &[Vec<f64>], tol: f64) -> Vec<f64> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d = points[0].len();
    if n == 1 {
        return points[0].clone();
    }
    let mut y = vec![0.0; d];
    for p in points {
        for (yi, pi) in y.iter_mut().zip(p) {
            *yi += pi / n as f64;
        }
    }
    let scale = points.iter().map(|p| norm2(p)).fold(1.0, f64::max);
    let coincide = 1e-14 * scale;
    for _ in 0..WEISZFELD_CAP {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut r = vec![0.0; d];
        let mut eta = 0.0;
        for p in points {
            let dist = dist2(p, &y);
            if dist <= coincide {
                eta += 1.0;
                continue;
            }
            den += 1.0 / dist;
            for k in 0..d {
                num[k] += p[k] / dist;
                r[k] += (p[k] - y[k]) / dist;
            }
        }
        if den == 0.0 {
            return y;
        }
        let rn = norm2(&r);
        if rn <= eta {
            return y;
        }
        let t: Vec<f64> = num.iter().map(|x| x / den).collect();
        let w = if eta > 0.0 { (eta / rn).min(1.0) } else { 0.0 };
        let next: Vec<f64> = t.iter().zip(&y).map(|(ti, yi)| (1.0 - w) * ti + w * yi).collect();
        let step = dist2(&next, &y);
        y = next;
        if step <= tol * 1e-3 * scale {
            break;
        }
    }
    y
}

/// Norm of the subgradient-optimality residual of the geometric-median
/// objective at `y`: zero at a minimizer.
pub fn geometric_median_residual(points: &[Vec<f64>], y: &[f64]) -> f64 {
    let d = y.len();
    let mut r = vec![0.0; d];
    let mut eta = 0.0;
    for p in points {
        let dist = dist2(p, y);
        if dist == 0.0 {
            eta += 1.0;
            continue;
        }
        for k in 0..d {
            r[k] += (p[k] - y[k]) / dist;
        }
    }
    (norm2(&r) - eta).max(0.0)
}
