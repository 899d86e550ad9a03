//! Config-driven solver runs producing `trace.csv` and `summary.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use robustmdp_core::solvers::{
    avg_reward_solve, fw_solve_with, nash_gap, pgd_solve_with, AvgRewardConfig, ExactGradient, GradientOracle,
};
use robustmdp_core::verify::GridSpec;
use robustmdp_core::Error as CoreError;
use robustmdp_core::{
    GradientMode, KernelBasis, KernelParams, RngSeed, SolverConfig, SolverOutcome, StochasticPolicy, TabularMdp,
    UncertaintySet,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_json, to_json_bytes, trace_csv, write_bytes, Instance, SUMMARY_FILE, TRACE_FILE};
use crate::generate::GenerateSpec;
use crate::parallel::ParallelMom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Pgd,
    Fw,
    Avg,
}

/// Where the instance comes from. File paths are relative to the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSource {
    Files { mdp: PathBuf, basis: PathBuf, set: PathBuf },
    Generate(GenerateSpec),
}

/// Average-reward settings; the surrogate solve uses the run's solver config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgSettings {
    pub eps: f64,
    #[serde(default)]
    pub normalized_curvature: Option<f64>,
    #[serde(default)]
    pub initial_span: Option<f64>,
    #[serde(default = "default_restarts")]
    pub max_restarts: usize,
}

fn default_restarts() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub instance: InstanceSource,
    pub solver: SolverChoice,
    pub config: SolverConfig,
    #[serde(default)]
    pub avg: Option<AvgSettings>,
    /// Lattice resolution of the kernel-side probe grid used for the Nash
    /// gap; vertex sets use their vertices.
    #[serde(default)]
    pub probe_resolution: Option<usize>,
}

pub const DEFAULT_PROBE_RESOLUTION: usize = 10;
pub const PROBE_CAP: usize = 20_000;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        if let InstanceSource::Files { mdp, basis, set } = &mut cfg.instance {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [mdp, basis, set] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Replaces the solver seed and, in MLMC mode, the sampling seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = RngSeed(seed);
        if let Some(m) = self.config.mlmc.as_mut() {
            m.seed = RngSeed(seed);
        }
        self
    }

    pub fn instance(&self) -> Result<Instance> {
        match &self.instance {
            InstanceSource::Files { mdp, basis, set } => Instance::read(mdp, basis, set),
            InstanceSource::Generate(spec) => spec.build(),
        }
    }

    pub fn validate(&self, inst: &Instance) -> Result<()> {
        self.config.validate().map_err(Error::Invalid)?;
        match self.solver {
            SolverChoice::Pgd if !inst.set.is_s_rectangular() => {
                Err(Error::Spec("pgd needs an s-rectangular set".into()))
            }
            SolverChoice::Avg if self.avg.is_none() => Err(Error::Spec("avg solver needs `avg` settings".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashGapReport {
    pub policy_gap: f64,
    /// `None` when the probe grid exceeds its size cap.
    pub kernel_gap: Option<f64>,
    pub probe_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgReport {
    pub gain: f64,
    pub span: f64,
    pub gamma: f64,
    pub span_estimate: f64,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub solver: u64,
    pub mlmc: Option<u64>,
    pub instance: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub solver: SolverChoice,
    pub final_f: f64,
    pub best_iter: usize,
    pub iterations: usize,
    pub env_steps: u64,
    /// β for PGD, `C_f` for Frank-Wolfe.
    pub step_parameter: f64,
    pub xi: Vec<f64>,
    pub policy: Vec<f64>,
    pub nash_gap: NashGapReport,
    pub avg: Option<AvgReport>,
    pub seeds: Seeds,
    pub instance_digest: String,
    pub config: RunConfig,
    /// ξ at every iteration when `record_xi` is set.
    pub snapshots: Option<Vec<Vec<f64>>>,
}

/// Everything a solve writes.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub outcome: SolverOutcome,
    pub summary: Summary,
    pub wall_ms: Option<Vec<f64>>,
}

impl SolveReport {
    pub fn trace_csv(&self) -> String {
        trace_csv(&self.outcome.trace.records, self.wall_ms.as_deref())
    }

    pub fn summary_json(&self) -> Vec<u8> {
        to_json_bytes(&self.summary)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_bytes(&dir.join(TRACE_FILE), self.trace_csv().as_bytes())?;
        write_bytes(&dir.join(SUMMARY_FILE), &self.summary_json())
    }
}

/// Times each gradient request.
struct Timed<'a> {
    inner: &'a mut dyn GradientOracle,
    start: Instant,
    marks: Vec<f64>,
}

impl GradientOracle for Timed<'_> {
    fn gradient(
        &mut self,
        mdp: &TabularMdp,
        basis: &KernelBasis,
        xi: &KernelParams,
        policy: &StochasticPolicy,
        tau: f64,
        iter: usize,
    ) -> robustmdp_core::Result<(Vec<f64>, u64)> {
        let out = self.inner.gradient(mdp, basis, xi, policy, tau, iter);
        self.marks.push(self.start.elapsed().as_secs_f64() * 1e3);
        out
    }
}

fn probe_grid(set: &UncertaintySet, resolution: usize) -> Option<Vec<KernelParams>> {
    match set {
        UncertaintySet::VertexPolytope { vertices } => Some(vertices.iter().cloned().map(KernelParams::new).collect()),
        _ => GridSpec::SetLattice { set: set.clone(), resolution, max_points: PROBE_CAP }
            .points()
            .map_or_else(|e| matches!(e, CoreError::EmptyGrid).then(Vec::new), Some),
    }
}

/// Runs the configured solver. `threads` sizes MLMC sampling; `wall_clock`
/// fills the `wall_ms` column.
pub fn solve(cfg: &RunConfig, threads: usize, wall_clock: bool) -> Result<SolveReport> {
    let inst = cfg.instance()?;
    cfg.validate(&inst)?;
    let Instance { mdp, basis, set } = &inst;
    let mut exact = ExactGradient;
    let mut mom;
    let base: &mut dyn GradientOracle = match (cfg.config.gradient_mode, &cfg.config.mlmc) {
        (GradientMode::Mlmc, Some(m)) => {
            mom = ParallelMom::new(m.clone(), threads);
            &mut mom
        }
        _ => &mut exact,
    };
    let mut timed = Timed { inner: base, start: Instant::now(), marks: Vec::new() };
    let (outcome, surrogate, avg) = match cfg.solver {
        SolverChoice::Pgd => {
            (pgd_solve_with(mdp, basis, set, &cfg.config, &mut timed).map_err(Error::Solver)?, mdp.clone(), None)
        }
        SolverChoice::Fw => {
            (fw_solve_with(mdp, basis, set, &cfg.config, &mut timed).map_err(Error::Solver)?, mdp.clone(), None)
        }
        SolverChoice::Avg => {
            let a = cfg.avg.as_ref().expect("validated");
            let acfg = AvgRewardConfig {
                solver: cfg.config.clone(),
                normalized_curvature: a.normalized_curvature,
                initial_span: a.initial_span,
                max_restarts: a.max_restarts,
            };
            let out = avg_reward_solve(mdp, basis, set, a.eps, &acfg).map_err(Error::Solver)?;
            let report = AvgReport {
                gain: out.summary.gain,
                span: out.summary.span,
                gamma: out.gamma,
                span_estimate: out.span_estimate,
                restarts: out.restarts,
            };
            let outcome = SolverOutcome {
                policy: out.policy.clone(),
                xi: out.xi.clone(),
                trace: out.trace,
                last_policy: out.policy,
                last_xi: out.xi,
            };
            (outcome, mdp.with_discount(out.gamma), Some(report))
        }
    };
    let tau = cfg.config.tau;
    // the returned point is always probed, so a singleton set reports a zero gap
    let grid = probe_grid(set, cfg.probe_resolution.unwrap_or(DEFAULT_PROBE_RESOLUTION)).map(|mut g| {
        g.push(outcome.xi.clone());
        g
    });
    let gap_grid = grid.clone().unwrap_or_else(|| vec![outcome.xi.clone()]);
    let gap =
        nash_gap(&surrogate, basis, &outcome.xi, outcome.policy.policy(), tau, &gap_grid).map_err(Error::Solver)?;
    let records = &outcome.trace.records;
    let summary = Summary {
        solver: cfg.solver,
        final_f: records[outcome.trace.best_iter].f_value,
        best_iter: outcome.trace.best_iter,
        iterations: records.len(),
        env_steps: records.last().map_or(0, |r| r.env_steps),
        step_parameter: outcome.trace.step_parameter,
        xi: outcome.xi.xi.clone(),
        policy: outcome.policy.policy().probs.clone(),
        nash_gap: NashGapReport {
            policy_gap: gap.policy_gap,
            kernel_gap: grid.as_ref().map(|_| gap.kernel_gap),
            probe_points: grid.as_ref().map_or(0, |g| g.len()),
        },
        avg,
        seeds: Seeds {
            solver: cfg.config.seed.0,
            mlmc: cfg.config.mlmc.as_ref().map(|m| m.seed.0),
            instance: match &cfg.instance {
                InstanceSource::Generate(g) => Some(g.seed),
                InstanceSource::Files { .. } => None,
            },
        },
        instance_digest: inst.digest(),
        config: cfg.clone(),
        snapshots: cfg.config.record_xi.then(|| records.iter().filter_map(|r| r.xi.clone()).collect()),
    };
    // the average-reward path drives its own solver, so it has no timings
    let wall_ms = (wall_clock && timed.marks.len() == records.len()).then_some(timed.marks);
    Ok(SolveReport { outcome, summary, wall_ms })
}
