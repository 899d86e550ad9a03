use alloc::string::String;

/// Errors raised by the solver library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("transition row (s={s}, a={a}) is not a probability distribution (sum {sum})")]
    RowNotStochastic { s: usize, a: usize, sum: f64 },
    #[error("reward at (s={s}, a={a}) is {value}, outside [0, 1]")]
    RewardOutOfRange { s: usize, a: usize, value: f64 },
    #[error("discount {0} is not in the open interval (0, 1)")]
    BadDiscount(f64),
    #[error("initial distribution is not a probability vector")]
    BadInitialDist,
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("branching {branching} must lie in 1..={n_states}")]
    BadBranching { branching: usize, n_states: usize },
    #[error("basis component {i} row (s={s}, a={a}) is not a probability distribution")]
    BasisRowNotStochastic { i: usize, s: usize, a: usize },
    #[error("feature bound {bound} is below the stacked l1 norm {norm} at (s={s}, a={a})")]
    FeatureBoundViolated { s: usize, a: usize, norm: f64, bound: f64 },
    #[error("kernel weights are outside the unit simplex")]
    XiOutsideSimplex,
    #[error("mixing coefficient {0} is outside [0, 1)")]
    BadMixCoefficient(f64),
    #[error("projection did not converge after {iterations} iterations")]
    ProjectionDidNotConverge { iterations: usize },
    #[error("invalid uncertainty set: {0}")]
    InvalidSet(String),
    #[error("s-rectangular relaxation does not contain the uncertainty set")]
    RelaxationDoesNotContainSet,
    #[error("grid is empty")]
    EmptyGrid,
    #[error("grid has {points} points, above the cap of {cap}")]
    GridTooLarge { points: usize, cap: usize },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("policy assigns zero probability to (s={s}, a={a}) while tau > 0")]
    ZeroPolicyProb { s: usize, a: usize },
    #[error("policy is not a stochastic table")]
    BadPolicy,
    #[error("induced chain is not ergodic: {0}")]
    NotErgodic(String),
    #[error("iteration cap of {iterations} exceeded")]
    IterationCapExceeded { iterations: usize },
    #[error("zero transition probability at (s={s}, a={a}, s'={s_next})")]
    ZeroTransitionProb { s: usize, a: usize, s_next: usize },
    #[error("P(s'={s_next} | s={s}, a={a}) = {p} is below p_min = {p_min}")]
    BelowMinProbability { s: usize, a: usize, s_next: usize, p: f64, p_min: f64 },
    #[error("finite-difference perturbation leaves the simplex")]
    InfeasiblePerturbation,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
