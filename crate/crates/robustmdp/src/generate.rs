//! Random instance generation from a compact spec.

use rand::Rng;
use robustmdp_core::{
    enforce_pmin, generate_garnet, kernel_from_params, KernelBasis, MixCoefficient, RngSeed, SimplexBall,
    UncertaintySet,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::Instance;

/// Garnet MDP plus a random kernel basis and uncertainty set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub branching: usize,
    pub seed: u64,
    /// Basis components; per state for `srect` sets.
    pub bases: usize,
    /// `simplex-ball:R`, `vertices:K` or `srect:R`.
    pub set: String,
    /// Mixes every basis row with the uniform row so that `P ≥ λ/S`.
    #[serde(default)]
    pub lambda_pmin: f64,
    #[serde(default)]
    pub discount: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SetKind {
    SimplexBall(f64),
    Vertices(usize),
    SRect(f64),
}

pub fn parse_set(spec: &str) -> Result<SetKind> {
    let bad = || Error::Spec(format!("unknown set spec `{spec}`"));
    let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
    let radius = || -> Result<f64> {
        let r: f64 = arg.parse().map_err(|_| bad())?;
        if r >= 0.0 {
            Ok(r)
        } else {
            Err(bad())
        }
    };
    match kind {
        "simplex-ball" => Ok(SetKind::SimplexBall(radius()?)),
        "srect" => Ok(SetKind::SRect(radius()?)),
        "vertices" => match arg.parse::<usize>() {
            Ok(k) if k > 0 => Ok(SetKind::Vertices(k)),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

fn dirichlet<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|x| x / t).collect()
}

impl GenerateSpec {
    /// Builds and validates the instance. The MDP's nominal kernel is
    /// replaced by the kernel at the set's center.
    pub fn build(&self) -> Result<Instance> {
        if self.bases == 0 {
            return Err(Error::Spec("need at least one basis component".into()));
        }
        let set_kind = parse_set(&self.set)?;
        let seed = RngSeed(self.seed);
        let mut mdp = generate_garnet(self.n_states, self.n_actions, self.branching, seed).map_err(Error::Invalid)?;
        if let Some(g) = self.discount {
            mdp = mdp.with_discount(g);
        }
        let random = KernelBasis::random(self.n_states, self.n_actions, self.bases, self.branching, seed.derive(1))
            .map_err(Error::Invalid)?;
        let (mut basis, set) = match set_kind {
            SetKind::SimplexBall(r) => {
                let d = self.bases;
                (random, UncertaintySet::simplex_ball(vec![1.0 / d as f64; d], r))
            }
            SetKind::Vertices(k) => {
                let mut rng = seed.derive(2).rng();
                let verts = (0..k).map(|_| dirichlet(self.bases, &mut rng)).collect();
                (random, UncertaintySet::vertices(verts))
            }
            SetKind::SRect(r) => {
                let (ns, na) = (self.n_states, self.n_actions);
                let mut variants = Vec::with_capacity(ns * self.bases);
                for s in 0..ns {
                    for k in 0..self.bases {
                        let comp = random.component(k);
                        variants.push((s, comp.probs[s * na * ns..(s + 1) * na * ns].to_vec()));
                    }
                }
                let (basis, blocks) = KernelBasis::s_rectangular(&mdp.nominal(), &variants).map_err(Error::Invalid)?;
                let c = 1.0 / (ns * self.bases) as f64;
                let set = UncertaintySet::s_rect(
                    blocks
                        .into_iter()
                        .map(|(s, idx)| {
                            let n = idx.len();
                            (s, idx, SimplexBall::new(vec![c; n], r))
                        })
                        .collect(),
                );
                (basis, set)
            }
        };
        if self.lambda_pmin > 0.0 {
            let lambda = MixCoefficient::new(self.lambda_pmin).map_err(Error::Invalid)?;
            basis = enforce_pmin(&basis, lambda);
        }
        mdp.nominal_kernel = kernel_from_params(&basis, &set.center()).map_err(Error::Invalid)?.probs;
        let inst = Instance { mdp, basis, set };
        inst.validate()?;
        Ok(inst)
    }
}
