//! Median-of-means MLMC gradients spread over scoped worker threads.

use std::ops::Range;
use std::thread;

use robustmdp_core::grad_est::{mom_aggregate, mom_ranges, MlmcSampler, RangeResult};
use robustmdp_core::solvers::{GradientOracle, MomGradient};
use robustmdp_core::{GradientEstimate, KernelBasis, KernelParams, MlmcConfig, RngSeed, StochasticPolicy, TabularMdp};

pub const THREADS_ENV: &str = "ROBUSTMDP_THREADS";

/// Worker count from `ROBUSTMDP_THREADS`; unset, unparsable or 0 means the
/// available parallelism.
pub fn worker_threads() -> usize {
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// Runs `ranges` on up to `threads` workers. Results come back in range
/// order, and every draw uses its own stream, so the output does not depend
/// on the thread count.
pub fn run_ranges(sampler: &MlmcSampler, seed: RngSeed, ranges: &[Range<usize>], threads: usize) -> Vec<RangeResult> {
    let threads = threads.clamp(1, ranges.len().max(1));
    if threads == 1 {
        return ranges.iter().map(|r| sampler.run_range(seed, r.clone())).collect();
    }
    let mut out: Vec<Option<RangeResult>> = vec![None; ranges.len()];
    thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..ranges.len())
                        .step_by(threads)
                        .map(|i| (i, sampler.run_range(seed, ranges[i].clone())))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sampling worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every range is assigned")).collect()
}

/// Splits `0..n` into about `4 × threads` contiguous chunks.
pub fn chunks(n: usize, threads: usize) -> Vec<Range<usize>> {
    let parts = (4 * threads.max(1)).min(n.max(1));
    (0..parts).map(|k| k * n / parts..(k + 1) * n / parts).collect()
}

/// Threaded [`robustmdp_core::mom_gradient`]; identical output.
pub fn mom_gradient_par(
    mdp: &TabularMdp,
    basis: &KernelBasis,
    xi: &KernelParams,
    policy: &StochasticPolicy,
    tau: f64,
    cfg: &MlmcConfig,
    threads: usize,
) -> robustmdp_core::Result<GradientEstimate> {
    let sampler = MlmcSampler::for_mom(mdp, basis, xi, policy, tau, cfg)?;
    let parts = run_ranges(&sampler, cfg.seed, &mom_ranges(cfg), threads);
    Ok(mom_aggregate(cfg, &parts))
}

/// Gradient oracle for the solvers using [`mom_gradient_par`], seeded per
/// iteration the same way as the sequential oracle.
#[derive(Debug, Clone)]
pub struct ParallelMom {
    pub inner: MomGradient,
    pub threads: usize,
}

impl ParallelMom {
    pub fn new(cfg: MlmcConfig, threads: usize) -> Self {
        ParallelMom { inner: MomGradient { cfg }, threads }
    }
}

impl GradientOracle for ParallelMom {
    fn gradient(
        &mut self,
        mdp: &TabularMdp,
        basis: &KernelBasis,
        xi: &KernelParams,
        policy: &StochasticPolicy,
        tau: f64,
        iter: usize,
    ) -> robustmdp_core::Result<(Vec<f64>, u64)> {
        let est = mom_gradient_par(mdp, basis, xi, policy, tau, &self.inner.config_for(iter), self.threads)?;
        Ok((est.grad, est.n_env_steps))
    }
}
