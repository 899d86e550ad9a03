//! Entropy-regularized robust MDPs with linearly parameterized transition
//! uncertainty: exact evaluation, soft policy oracle, MLMC gradient
//! estimation, projected-gradient and Frank-Wolfe solvers, and brute-force
//! verification oracles.
//!
//! The crate is `no_std` with `alloc`.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod grad_est;
pub mod kernel;
pub mod linalg;
pub mod mdp;
pub mod policy;
pub mod rng;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
pub use eval::{
    avg_summary, eval_policy, exact_grad_xi, mismatch_coefficient, mixing_time, objective, occupancy, perf_difference,
    AvgRewardSummary, OccupancyMeasure, ValueTable,
};
pub use grad_est::{
    expected_steps, geometric_median, mlmc_sample, mom_gradient, sample_trajectory, single_step_grad, GradientEstimate,
    MlmcConfig, Transition,
};
pub use kernel::{
    enforce_pmin, kernel_from_params, nonrect_degree, KernelBasis, KernelParams, MixCoefficient, NonRectDegree,
    RectBlock, SimplexBall, UncertaintySet,
};
pub use mdp::{generate_chain, generate_garnet, validate_mdp, StochasticPolicy, TabularMdp, TransitionKernel};
pub use policy::{log_policy_grad, policy_oracle, soft_bellman_backup, OracleReport, SoftmaxPolicy};
pub use rng::RngSeed;
pub use solvers::{
    avg_reward_solve, fw_solve, nash_gap, pgd_solve, theory_constants, GradientMode, SolverConfig, SolverOutcome,
    SolverTrace, TheoryConstants,
};
