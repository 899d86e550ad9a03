//! One-shot gradient dump at a single ξ.

use robustmdp_core::linalg::tangent;
use robustmdp_core::{exact_grad_xi, objective, policy_oracle, GradientMode, KernelParams};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::parallel::mom_gradient_par;
use crate::run::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlmcDump {
    pub grad: Vec<f64>,
    pub tangent: Vec<f64>,
    pub env_steps: u64,
    pub level_histogram: Vec<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradDump {
    pub xi: Vec<f64>,
    pub objective: f64,
    pub exact: Vec<f64>,
    pub exact_tangent: Vec<f64>,
    pub mlmc: Option<MlmcDump>,
    pub instance_digest: String,
    pub config: RunConfig,
}

/// Exact gradient, and the MoM estimate in MLMC mode, at `xi` (default: the
/// set's center) for the oracle policy there.
pub fn grad_dump(cfg: &RunConfig, xi: Option<Vec<f64>>, threads: usize) -> Result<GradDump> {
    let inst = cfg.instance()?;
    cfg.config.validate().map_err(Error::Invalid)?;
    let xi = match xi {
        Some(x) => {
            if !inst.set.contains(&x, 1e-9) {
                return Err(Error::Spec("ξ is outside the uncertainty set".into()));
            }
            KernelParams::new(x)
        }
        None => inst.set.center(),
    };
    let tau = cfg.config.tau;
    let (pi, _) = policy_oracle(&inst.mdp, &inst.basis, &xi, tau, cfg.config.eps_theta).map_err(Error::Solver)?;
    let exact = exact_grad_xi(&inst.mdp, &inst.basis, &xi, pi.policy(), tau).map_err(Error::Solver)?;
    let mlmc = match (cfg.config.gradient_mode, &cfg.config.mlmc) {
        (GradientMode::Mlmc, Some(m)) => {
            let est =
                mom_gradient_par(&inst.mdp, &inst.basis, &xi, pi.policy(), tau, m, threads).map_err(Error::Solver)?;
            Some(MlmcDump {
                tangent: tangent(&est.grad),
                grad: est.grad,
                env_steps: est.n_env_steps,
                level_histogram: est.level_histogram,
                seed: m.seed.0,
            })
        }
        _ => None,
    };
    Ok(GradDump {
        objective: objective(&inst.mdp, &inst.basis, &xi, pi.policy(), tau).map_err(Error::Solver)?,
        xi: xi.xi,
        exact_tangent: tangent(&exact),
        exact,
        mlmc,
        instance_digest: inst.digest(),
        config: cfg.clone(),
    })
}
