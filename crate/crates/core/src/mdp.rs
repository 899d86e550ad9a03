//! Finite MDP data model and instance generators.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Tolerance for row sums of stored probability tables.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite discounted MDP. Tables are dense and row-major: `reward[s * A + a]`
/// and `nominal_kernel[(s * A + a) * S + s']`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    pub reward: Vec<f64>,
    pub nominal_kernel: Vec<f64>,
    pub initial_dist: Vec<f64>,
}

impl TabularMdp {
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn nominal(&self) -> TransitionKernel {
        TransitionKernel { n_states: self.n_states, n_actions: self.n_actions, probs: self.nominal_kernel.clone() }
    }

    pub fn with_discount(&self, discount: f64) -> TabularMdp {
        TabularMdp { discount, ..self.clone() }
    }

    pub fn with_initial_dist(&self, initial_dist: Vec<f64>) -> TabularMdp {
        TabularMdp { initial_dist, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        validate_mdp(self)
    }
}

/// Checks every structural invariant of a [`TabularMdp`].
pub fn validate_mdp(mdp: &TabularMdp) -> Result<()> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 || na == 0 {
        return Err(Error::DimensionMismatch { what: "state and action counts", expected: 1, found: 0 });
    }
    check_len("reward", ns * na, mdp.reward.len())?;
    check_len("nominal_kernel", ns * na * ns, mdp.nominal_kernel.len())?;
    check_len("initial_dist", ns, mdp.initial_dist.len())?;
    if !(mdp.discount > 0.0 && mdp.discount < 1.0) {
        return Err(Error::BadDiscount(mdp.discount));
    }
    for s in 0..ns {
        for a in 0..na {
            let r = mdp.reward(s, a);
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::RewardOutOfRange { s, a, value: r });
            }
        }
    }
    mdp.nominal().validate()?;
    if !row_ok(&mdp.initial_dist) {
        return Err(Error::BadInitialDist);
    }
    Ok(())
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, found })
    }
}

fn row_ok(row: &[f64]) -> bool {
    row.iter().all(|&p| p >= 0.0 && p.is_finite()) && Float::abs(row.iter().sum::<f64>() - 1.0) <= STOCHASTIC_TOL
}

/// A transition table `P(s'|s,a)` stored as `probs[(s * A + a) * S + s']`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransitionKernel {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.probs[start..start + self.n_states]
    }

    pub fn get(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.probs[(s * self.n_actions + a) * self.n_states + s_next]
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_tol(STOCHASTIC_TOL)
    }

    pub fn validate_with_tol(&self, tol: f64) -> Result<()> {
        check_len("kernel", self.n_states * self.n_actions * self.n_states, self.probs.len())?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.row(s, a);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || Float::abs(sum - 1.0) > tol {
                    return Err(Error::RowNotStochastic { s, a, sum });
                }
            }
        }
        Ok(())
    }

    /// State-to-state matrix `P_π(s, s') = Σ_a π(a|s) P(s'|s,a)`, row-major.
    pub fn under_policy(&self, policy: &StochasticPolicy) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (o, p) in out[s * n..(s + 1) * n].iter_mut().zip(self.row(s, a)) {
                    *o += w * p;
                }
            }
        }
        out
    }
}

/// A tabular stochastic policy `π(a|s)`, stored as `probs[s * A + a]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StochasticPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        check_len("policy", n_states * n_actions, probs.len())?;
        let p = StochasticPolicy { n_states, n_actions, probs };
        for s in 0..n_states {
            let row = p.row(s);
            if row.iter().any(|&x| !(x >= 0.0)) || Float::abs(row.iter().sum::<f64>() - 1.0) > 1e-9 {
                return Err(Error::BadPolicy);
            }
        }
        Ok(p)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        StochasticPolicy { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        StochasticPolicy { n_states, n_actions, probs }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

/// Random Garnet instance: each row has `branching` distinct successors with
/// normalized uniform weights; rewards are uniform on [0, 1); γ = 0.9 and ρ
/// is uniform.
pub fn generate_garnet(n_states: usize, n_actions: usize, branching: usize, seed: RngSeed) -> Result<TabularMdp> {
    if branching == 0 || branching > n_states {
        return Err(Error::BadBranching { branching, n_states });
    }
    if n_actions == 0 {
        return Err(Error::DimensionMismatch { what: "n_actions", expected: 1, found: 0 });
    }
    let mut rng = seed.rng();
    let nominal_kernel = garnet_rows(n_states, n_actions, branching, &mut rng);
    let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    Ok(TabularMdp {
        n_states,
        n_actions,
        discount: 0.9,
        reward,
        nominal_kernel,
        initial_dist: vec![1.0 / n_states as f64; n_states],
    })
}

pub(crate) fn garnet_rows<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    rng: &mut R,
) -> Vec<f64> {
    let mut table = vec![0.0; n_states * n_actions * n_states];
    let mut idx: Vec<usize> = (0..n_states).collect();
    for row in table.chunks_mut(n_states) {
        // partial Fisher-Yates picks the support
        for k in 0..branching {
            let j = rng.random_range(k..n_states);
            idx.swap(k, j);
        }
        // 1 - U lies in (0, 1], so every chosen entry is nonzero
        let w: Vec<f64> = (0..branching).map(|_| 1.0 - rng.random::<f64>()).collect();
        let total: f64 = w.iter().sum();
        for (k, wk) in w.iter().enumerate() {
            row[idx[k]] = wk / total;
        }
    }
    table
}

/// Left/right chain. Action 0 moves left and action 1 moves right; a move is
/// inverted with probability `slip`. Reward 1 in the last state, γ = 0.9,
/// uniform ρ.
pub fn generate_chain(n_states: usize, slip: f64) -> Result<TabularMdp> {
    if n_states < 2 {
        return Err(Error::DimensionMismatch { what: "chain length", expected: 2, found: n_states });
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::InvalidConfig(alloc::format!("slip {slip} outside [0, 1]")));
    }
    let n = n_states;
    let mut kernel = vec![0.0; n * 2 * n];
    for s in 0..n {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(n - 1);
        for (a, (go, back)) in [(left, right), (right, left)].into_iter().enumerate() {
            let base = (s * 2 + a) * n;
            kernel[base + go] += 1.0 - slip;
            kernel[base + back] += slip;
        }
    }
    let mut reward = vec![0.0; n * 2];
    reward[(n - 1) * 2] = 1.0;
    reward[(n - 1) * 2 + 1] = 1.0;
    let mdp = TabularMdp {
        n_states: n,
        n_actions: 2,
        discount: 0.9,
        reward,
        nominal_kernel: kernel,
        initial_dist: vec![1.0 / n as f64; n],
    };
    validate_mdp(&mdp)?;
    Ok(mdp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> TabularMdp {
        TabularMdp {
            n_states: 2,
            n_actions: 1,
            discount: 0.9,
            reward: vec![0.0, 1.0],
            nominal_kernel: vec![0.5, 0.5, 0.5, 0.5],
            initial_dist: vec![1.0, 0.0],
        }
    }

    #[test]
    fn validation_errors_name_the_index() {
        assert!(validate_mdp(&two_state()).is_ok());
        let mut m = two_state();
        m.nominal_kernel[2] = 0.4;
        assert!(matches!(validate_mdp(&m), Err(Error::RowNotStochastic { s: 1, a: 0, .. })));
        let mut m = two_state();
        m.reward[1] = 1.5;
        assert!(matches!(validate_mdp(&m), Err(Error::RewardOutOfRange { s: 1, a: 0, .. })));
        assert_eq!(validate_mdp(&two_state().with_discount(1.0)), Err(Error::BadDiscount(1.0)));
        let m = two_state().with_initial_dist(vec![0.5, 0.4]);
        assert_eq!(validate_mdp(&m), Err(Error::BadInitialDist));
    }

    #[test]
    fn garnet_support_and_determinism() {
        let a = generate_garnet(5, 3, 2, RngSeed(7)).unwrap();
        let b = generate_garnet(5, 3, 2, RngSeed(7)).unwrap();
        assert_eq!(a, b);
        for row in a.nominal_kernel.chunks(5) {
            assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 2);
        }
        let dense = generate_garnet(4, 2, 4, RngSeed(1)).unwrap();
        assert!(dense.nominal_kernel.iter().all(|&p| p > 0.0));
        assert!(matches!(generate_garnet(3, 2, 4, RngSeed(0)), Err(Error::BadBranching { .. })));
    }

    #[test]
    fn garnet_rows_sum_to_one() {
        for seed in 0..100 {
            let m = generate_garnet(6, 3, 1 + (seed as usize % 6), RngSeed(seed)).unwrap();
            assert!(validate_mdp(&m).is_ok());
        }
    }

    #[test]
    fn chain_rows() {
        let m = generate_chain(4, 0.1).unwrap();
        let p = m.nominal();
        assert_eq!(p.row(0, 1), &[0.1, 0.9, 0.0, 0.0]);
        let det = generate_chain(4, 0.0).unwrap().nominal();
        for s in 0..4 {
            for a in 0..2 {
                assert_eq!(det.row(s, a).iter().filter(|&&x| x == 1.0).count(), 1);
            }
        }
        let inv = generate_chain(4, 1.0).unwrap().nominal();
        assert_eq!(inv.row(2, 1), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(inv.row(2, 0), &[0.0, 0.0, 0.0, 1.0]);
    }
}
