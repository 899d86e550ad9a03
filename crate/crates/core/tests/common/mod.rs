#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use robustmdp_core::{
    generate_chain, generate_garnet, KernelBasis, KernelParams, RngSeed, SimplexBall, SoftmaxPolicy, StochasticPolicy,
    TabularMdp, UncertaintySet,
};

pub fn instance(n_states: usize, n_actions: usize, dim: usize, seed: u64) -> (TabularMdp, KernelBasis) {
    let mdp = generate_garnet(n_states, n_actions, n_states.min(3), RngSeed(seed)).unwrap();
    let basis = KernelBasis::random(n_states, n_actions, dim, n_states.min(3), RngSeed(seed ^ 0xABCD)).unwrap();
    (mdp, basis)
}

pub fn dirichlet(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let t: f64 = e.iter().sum();
    e.iter().map(|x| x / t).collect()
}

pub fn xi(d: usize, rng: &mut ChaCha8Rng) -> KernelParams {
    KernelParams::new(dirichlet(d, rng))
}

pub fn softmax_policy(n_states: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> SoftmaxPolicy {
    let logits = (0..n_states * n_actions).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    SoftmaxPolicy::from_logits(n_states, n_actions, logits).unwrap()
}

pub fn policy(n_states: usize, n_actions: usize, rng: &mut ChaCha8Rng) -> StochasticPolicy {
    softmax_policy(n_states, n_actions, rng).policy().clone()
}

pub fn tangent(x: &[f64]) -> Vec<f64> {
    robustmdp_core::linalg::tangent(x)
}

pub fn max_abs_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Three-state s-rectangular instance: two variants per state, balls of
/// radius `radius` around the block centers.
pub fn srect_instance(radius: f64, seed: u64) -> (TabularMdp, KernelBasis, UncertaintySet) {
    let (mdp, _) = instance(3, 2, 1, seed);
    let filler = mdp.nominal();
    let mut rng = RngSeed(seed).rng();
    let mut variants = Vec::new();
    for s in 0..3 {
        for _ in 0..2 {
            let rows: Vec<f64> = (0..2).flat_map(|_| dirichlet(3, &mut rng)).collect();
            variants.push((s, rows));
        }
    }
    let (basis, blocks) = KernelBasis::s_rectangular(&filler, &variants).unwrap();
    let set = UncertaintySet::s_rect(
        blocks.into_iter().map(|(s, idx)| (s, idx, SimplexBall::new(vec![1.0 / 6.0; 2], radius))).collect(),
    );
    (mdp, basis, set)
}

/// Four-state chain whose two base kernels slip with probability 0.1 and 0.45.
pub fn chain_pair() -> (TabularMdp, KernelBasis) {
    let good = generate_chain(4, 0.1).unwrap();
    let bad = generate_chain(4, 0.45).unwrap();
    let basis = KernelBasis::from_kernels(&[good.nominal(), bad.nominal()]).unwrap();
    (good, basis)
}
