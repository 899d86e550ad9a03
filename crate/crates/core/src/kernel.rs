//! Linear kernel parameterization `P_ξ = Σ_i ξ_i B_i` and uncertainty-set
//! geometry.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{dist2, dot, norm2};
use crate::mdp::{check_len, garnet_rows, TransitionKernel, STOCHASTIC_TOL};
use crate::rng::RngSeed;

/// Tolerance for "ξ lies in the unit simplex".
pub const SIMPLEX_TOL: f64 = 1e-10;

const BISECT_CAP: usize = 2_000;
const WOLFE_CAP: usize = 10_000;

/// Basis tensor `basis[((i * S + s) * A + a) * S + s']`. Every component is a
/// transition kernel in its own right.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelBasis {
    pub dim: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub feature_bound: f64,
    pub basis: Vec<f64>,
}

/// A state and the basis components that act on its rows.
pub type StateBlock = (usize, Vec<usize>);

impl KernelBasis {
    /// Stacks base kernels. The feature bound is set to the largest stacked
    /// ℓ1 norm of `φ(s,a,·)`.
    pub fn from_kernels(kernels: &[TransitionKernel]) -> Result<Self> {
        let first = kernels.first().ok_or(Error::InvalidConfig("no base kernels".into()))?;
        let (ns, na) = (first.n_states, first.n_actions);
        let mut basis = Vec::with_capacity(kernels.len() * ns * na * ns);
        for k in kernels {
            if k.n_states != ns || k.n_actions != na {
                return Err(Error::DimensionMismatch {
                    what: "base kernel shape",
                    expected: ns * na,
                    found: k.n_states * k.n_actions,
                });
            }
            check_len("base kernel", ns * na * ns, k.probs.len())?;
            basis.extend_from_slice(&k.probs);
        }
        let mut b = KernelBasis { dim: kernels.len(), n_states: ns, n_actions: na, feature_bound: 0.0, basis };
        b.feature_bound = b.max_feature_norm();
        b.validate()?;
        Ok(b)
    }

    /// `dim` Garnet-style base kernels drawn from one seed.
    pub fn random(n_states: usize, n_actions: usize, dim: usize, branching: usize, seed: RngSeed) -> Result<Self> {
        if branching == 0 || branching > n_states {
            return Err(Error::BadBranching { branching, n_states });
        }
        let mut rng = seed.rng();
        let kernels: Vec<TransitionKernel> = (0..dim)
            .map(|_| TransitionKernel {
                n_states,
                n_actions,
                probs: garnet_rows(n_states, n_actions, branching, &mut rng),
            })
            .collect();
        Self::from_kernels(&kernels)
    }

    fn offset(&self, i: usize, s: usize, a: usize) -> usize {
        ((i * self.n_states + s) * self.n_actions + a) * self.n_states
    }

    /// Row `B_i(·|s,a)`.
    pub fn row(&self, i: usize, s: usize, a: usize) -> &[f64] {
        let o = self.offset(i, s, a);
        &self.basis[o..o + self.n_states]
    }

    pub fn phi(&self, i: usize, s: usize, a: usize, s_next: usize) -> f64 {
        self.basis[self.offset(i, s, a) + s_next]
    }

    /// Component `i` as a standalone kernel.
    pub fn component(&self, i: usize) -> TransitionKernel {
        let len = self.n_states * self.n_actions * self.n_states;
        TransitionKernel {
            n_states: self.n_states,
            n_actions: self.n_actions,
            probs: self.basis[i * len..(i + 1) * len].to_vec(),
        }
    }

    fn max_feature_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let n: f64 = (0..self.dim).map(|i| self.row(i, s, a).iter().map(|p| Float::abs(*p)).sum::<f64>()).sum();
                best = best.max(n);
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        check_len("basis", self.dim * self.n_states * self.n_actions * self.n_states, self.basis.len())?;
        if self.dim == 0 {
            return Err(Error::InvalidConfig("basis dimension is zero".into()));
        }
        for i in 0..self.dim {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    let row = self.row(i, s, a);
                    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite())
                        || Float::abs(row.iter().sum::<f64>() - 1.0) > STOCHASTIC_TOL
                    {
                        return Err(Error::BasisRowNotStochastic { i, s, a });
                    }
                }
            }
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let norm: f64 = (0..self.dim).map(|i| self.row(i, s, a).iter().sum::<f64>()).sum();
                if norm > self.feature_bound * (1.0 + 1e-12) {
                    return Err(Error::FeatureBoundViolated { s, a, norm, bound: self.feature_bound });
                }
            }
        }
        Ok(())
    }

    /// Builds an s-rectangular basis. Every component equals `filler`
    /// except on the rows of one state; `variants[k] = (state, rows)` where
    /// `rows[a * S + s']` replaces `filler(·|state, a)`. Returns the basis and,
    /// per state touched, the component indices that belong to it.
    pub fn s_rectangular(filler: &TransitionKernel, variants: &[(usize, Vec<f64>)]) -> Result<(Self, Vec<StateBlock>)> {
        let (ns, na) = (filler.n_states, filler.n_actions);
        let mut kernels = Vec::with_capacity(variants.len());
        let mut blocks: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, (state, rows)) in variants.iter().enumerate() {
            check_len("state rows", na * ns, rows.len())?;
            if *state >= ns {
                return Err(Error::InvalidConfig(format!("state {state} out of range")));
            }
            let mut k = filler.clone();
            let start = state * na * ns;
            k.probs[start..start + na * ns].copy_from_slice(rows);
            kernels.push(k);
            match blocks.iter_mut().find(|(s, _)| s == state) {
                Some((_, idx)) => idx.push(i),
                None => blocks.push((*state, vec![i])),
            }
        }
        Ok((Self::from_kernels(&kernels)?, blocks))
    }
}

/// Weight vector ξ.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelParams {
    pub xi: Vec<f64>,
}

impl KernelParams {
    pub fn new(xi: Vec<f64>) -> Self {
        KernelParams { xi }
    }

    pub fn unit(dim: usize, i: usize) -> Self {
        let mut xi = vec![0.0; dim];
        xi[i] = 1.0;
        KernelParams { xi }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.xi
    }

    pub fn in_unit_simplex(&self) -> bool {
        in_simplex(&self.xi, 1.0, SIMPLEX_TOL)
    }
}

impl From<Vec<f64>> for KernelParams {
    fn from(xi: Vec<f64>) -> Self {
        KernelParams { xi }
    }
}

fn in_simplex(x: &[f64], mass: f64, tol: f64) -> bool {
    x.iter().all(|&v| v >= -tol && v.is_finite()) && Float::abs(x.iter().sum::<f64>() - mass) <= tol
}

/// `P_ξ(s'|s,a) = Σ_i ξ_i B_i(s'|s,a)`.
pub fn kernel_from_params(basis: &KernelBasis, xi: &KernelParams) -> Result<TransitionKernel> {
    check_len("xi", basis.dim, xi.xi.len())?;
    if !xi.in_unit_simplex() {
        return Err(Error::XiOutsideSimplex);
    }
    let len = basis.n_states * basis.n_actions * basis.n_states;
    let mut probs = vec![0.0; len];
    for (i, w) in xi.xi.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (p, b) in probs.iter_mut().zip(&basis.basis[i * len..(i + 1) * len]) {
            *p += w * b;
        }
    }
    Ok(TransitionKernel { n_states: basis.n_states, n_actions: basis.n_actions, probs })
}

/// Mixing weight λ ∈ [0, 1) toward the uniform kernel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "f64", into = "f64"))]
pub struct MixCoefficient(f64);

impl MixCoefficient {
    pub fn new(lambda: f64) -> Result<Self> {
        if (0.0..1.0).contains(&lambda) {
            Ok(MixCoefficient(lambda))
        } else {
            Err(Error::BadMixCoefficient(lambda))
        }
    }

    pub fn lambda(self) -> f64 {
        self.0
    }

    /// Guaranteed minimum entry `λ / S` after mixing.
    pub fn p_min(self, n_states: usize) -> f64 {
        self.0 / n_states as f64
    }
}

impl TryFrom<f64> for MixCoefficient {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        MixCoefficient::new(v)
    }
}

impl From<MixCoefficient> for f64 {
    fn from(m: MixCoefficient) -> f64 {
        m.0
    }
}

/// Replaces every base row by `(1 − λ)·row + λ·uniform`.
pub fn enforce_pmin(basis: &KernelBasis, lambda: MixCoefficient) -> KernelBasis {
    let l = lambda.lambda();
    if l == 0.0 {
        return basis.clone();
    }
    let u = l / basis.n_states as f64;
    let mut out = basis.clone();
    for p in out.basis.iter_mut() {
        *p = (1.0 - l) * *p + u;
    }
    out
}

/// `{ξ ≥ 0, Σξ = Σcenter, ‖ξ − center‖₂ ≤ radius}`. An infinite radius leaves
/// only the simplex constraint.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimplexBall {
    pub center: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(with = "radius_serde"))]
    pub radius: f64,
}

#[cfg(feature = "serde")]
mod radius_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &f64, s: S) -> Result<S::Ok, S::Error> {
        if r.is_finite() {
            s.serialize_f64(*r)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SimplexBall {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        SimplexBall { center, radius }
    }

    pub fn mass(&self) -> f64 {
        self.center.iter().sum()
    }

    fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.center.len() && in_simplex(x, self.mass(), tol) && dist2(x, &self.center) <= self.radius + tol
    }

    fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let m = self.mass();
        if self.contains(y, 0.0) {
            return Ok(y.to_vec());
        }
        let direct = project_simplex(y, m);
        if dist2(&direct, &self.center) <= self.radius {
            return Ok(direct);
        }
        // the projection is Proj_Δ((y + μc) / (1 + μ)) for the μ ≥ 0 that puts it on the sphere
        let at = |mu: f64| -> Vec<f64> {
            let z: Vec<f64> = y.iter().zip(&self.center).map(|(yi, ci)| (yi + mu * ci) / (1.0 + mu)).collect();
            project_simplex(&z, m)
        };
        let mut hi = 1.0;
        let mut x_hi = at(hi);
        let mut it = 0;
        while dist2(&x_hi, &self.center) > self.radius {
            hi *= 2.0;
            x_hi = at(hi);
            it += 1;
            if it > BISECT_CAP {
                return Err(Error::ProjectionDidNotConverge { iterations: it });
            }
        }
        let mut lo = 0.0;
        for _ in 0..BISECT_CAP {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let xm = at(mid);
            if dist2(&xm, &self.center) > self.radius {
                lo = mid;
            } else {
                hi = mid;
                x_hi = xm;
            }
        }
        Ok(x_hi)
    }

    fn lmo(&self, v: &[f64]) -> Vec<f64> {
        let m = self.mass();
        let c = &self.center;
        let path = |t: f64| -> Vec<f64> {
            let z: Vec<f64> = c.iter().zip(v).map(|(ci, vi)| ci - t * vi).collect();
            project_simplex(&z, m)
        };
        let tv = crate::linalg::tangent(v);
        if norm2(&tv) == 0.0 || self.radius == 0.0 {
            return c.clone();
        }
        if !self.radius.is_finite() {
            return simplex_lmo(v, m);
        }
        let mut hi = 1.0;
        while dist2(&path(hi), c) < self.radius {
            if hi > 1e12 {
                return path(hi);
            }
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if dist2(&path(mid), c) <= self.radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        path(lo)
    }

    fn diameter(&self) -> f64 {
        let simplex = if self.center.len() > 1 { self.mass() * core::f64::consts::SQRT_2 } else { 0.0 };
        (2.0 * self.radius).min(simplex)
    }
}

fn simplex_lmo(v: &[f64], mass: f64) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    let mut out = vec![0.0; v.len()];
    out[best] = mass;
    out
}

/// Euclidean projection onto `{x ≥ 0, Σx = mass}` by the sort-and-threshold
/// rule.
pub fn project_simplex(y: &[f64], mass: f64) -> Vec<f64> {
    if mass <= 0.0 {
        return vec![0.0; y.len()];
    }
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - mass) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// One block of an s-rectangular product: the components in `indices` range
/// over `ball`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RectBlock {
    pub state: usize,
    pub indices: Vec<usize>,
    pub ball: SimplexBall,
}

/// Convex feasible region for ξ, contained in the unit simplex.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum UncertaintySet {
    SimplexBall(SimplexBall),
    VertexPolytope { vertices: Vec<Vec<f64>> },
    SRectProduct { blocks: Vec<RectBlock> },
}

impl UncertaintySet {
    pub fn simplex_ball(center: Vec<f64>, radius: f64) -> Self {
        UncertaintySet::SimplexBall(SimplexBall::new(center, radius))
    }

    pub fn vertices(vertices: Vec<Vec<f64>>) -> Self {
        UncertaintySet::VertexPolytope { vertices }
    }

    /// Product of per-block simplex balls. `blocks` pairs a state with its
    /// component indices; block masses are the center sums.
    pub fn s_rect(blocks: Vec<(usize, Vec<usize>, SimplexBall)>) -> Self {
        UncertaintySet::SRectProduct {
            blocks: blocks.into_iter().map(|(state, indices, ball)| RectBlock { state, indices, ball }).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            UncertaintySet::SimplexBall(b) => b.center.len(),
            UncertaintySet::VertexPolytope { vertices } => vertices.first().map_or(0, Vec::len),
            UncertaintySet::SRectProduct { blocks } => blocks.iter().map(|b| b.indices.len()).sum(),
        }
    }

    pub fn is_s_rectangular(&self) -> bool {
        matches!(self, UncertaintySet::SRectProduct { .. })
    }

    /// Checks nonemptiness, dimensions and containment in the unit simplex.
    pub fn validate(&self) -> Result<()> {
        match self {
            UncertaintySet::SimplexBall(b) => {
                if !in_simplex(&b.center, 1.0, SIMPLEX_TOL) {
                    return Err(Error::InvalidSet("center outside the unit simplex".into()));
                }
                if !(b.radius >= 0.0) {
                    return Err(Error::InvalidSet("negative radius".into()));
                }
            }
            UncertaintySet::VertexPolytope { vertices } => {
                let d = self.dim();
                if vertices.is_empty() || d == 0 {
                    return Err(Error::InvalidSet("no vertices".into()));
                }
                for (k, v) in vertices.iter().enumerate() {
                    if v.len() != d || !in_simplex(v, 1.0, SIMPLEX_TOL) {
                        return Err(Error::InvalidSet(format!("vertex {k} outside the unit simplex")));
                    }
                }
            }
            UncertaintySet::SRectProduct { blocks } => {
                let d = self.dim();
                let mut seen = vec![false; d];
                let mut mass = 0.0;
                if blocks.is_empty() {
                    return Err(Error::InvalidSet("no blocks".into()));
                }
                for b in blocks {
                    if b.indices.is_empty() || b.indices.len() != b.ball.center.len() {
                        return Err(Error::InvalidSet(format!("block for state {} is malformed", b.state)));
                    }
                    if b.ball.center.iter().any(|&c| c < 0.0) || !(b.ball.radius >= 0.0) {
                        return Err(Error::InvalidSet(format!("block for state {} has a bad ball", b.state)));
                    }
                    for &i in &b.indices {
                        if i >= d || seen[i] {
                            return Err(Error::InvalidSet("blocks do not partition the components".into()));
                        }
                        seen[i] = true;
                    }
                    mass += b.ball.mass();
                }
                if Float::abs(mass - 1.0) > SIMPLEX_TOL {
                    return Err(Error::InvalidSet("block masses do not sum to one".into()));
                }
            }
        }
        Ok(())
    }

    /// Validates the set and, for a product, checks structurally that each
    /// state's rows are only moved by the blocks assigned to that state.
    pub fn validate_against(&self, basis: &KernelBasis) -> Result<()> {
        self.validate()?;
        check_len("uncertainty set dimension", basis.dim, self.dim())?;
        if let UncertaintySet::SRectProduct { blocks } = self {
            for s in 0..basis.n_states {
                let outside: Vec<usize> =
                    blocks.iter().filter(|b| b.state != s).flat_map(|b| b.indices.iter().copied()).collect();
                if let Some((&first, rest)) = outside.split_first() {
                    for &i in rest {
                        for a in 0..basis.n_actions {
                            let same = basis
                                .row(first, s, a)
                                .iter()
                                .zip(basis.row(i, s, a))
                                .all(|(x, y)| Float::abs(x - y) <= STOCHASTIC_TOL);
                            if !same {
                                return Err(Error::InvalidSet(format!(
                                    "component {i} moves rows of state {s} outside its block"
                                )));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            UncertaintySet::SimplexBall(b) => b.contains(x, tol),
            UncertaintySet::VertexPolytope { .. } => match self.project(x) {
                Ok(p) => dist2(&p.xi, x) <= tol,
                Err(_) => false,
            },
            UncertaintySet::SRectProduct { blocks } => blocks.iter().all(|b| {
                let sub: Vec<f64> = b.indices.iter().map(|&i| x[i]).collect();
                b.ball.contains(&sub, tol)
            }),
        }
    }

    /// A canonical interior-ish point: the ball center, the vertex centroid,
    /// or the product of block centers.
    pub fn center(&self) -> KernelParams {
        match self {
            UncertaintySet::SimplexBall(b) => KernelParams::new(b.center.clone()),
            UncertaintySet::VertexPolytope { vertices } => {
                let d = self.dim();
                let mut c = vec![0.0; d];
                for v in vertices {
                    for (ci, vi) in c.iter_mut().zip(v) {
                        *ci += vi / vertices.len() as f64;
                    }
                }
                KernelParams::new(c)
            }
            UncertaintySet::SRectProduct { blocks } => {
                let mut c = vec![0.0; self.dim()];
                for b in blocks {
                    for (k, &i) in b.indices.iter().enumerate() {
                        c[i] = b.ball.center[k];
                    }
                }
                KernelParams::new(c)
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &[f64]) -> Result<KernelParams> {
        check_len("projection input", self.dim(), x.len())?;
        let out = match self {
            UncertaintySet::SimplexBall(b) => b.project(x)?,
            UncertaintySet::VertexPolytope { vertices } => project_polytope(vertices, x)?,
            UncertaintySet::SRectProduct { blocks } => {
                let mut out = vec![0.0; x.len()];
                for b in blocks {
                    let sub: Vec<f64> = b.indices.iter().map(|&i| x[i]).collect();
                    for (k, v) in b.ball.project(&sub)?.into_iter().enumerate() {
                        out[b.indices[k]] = v;
                    }
                }
                out
            }
        };
        Ok(KernelParams::new(out))
    }

    /// A minimizer of `⟨ξ, direction⟩` over the set; vertex ties go to the
    /// lowest index.
    pub fn lmo(&self, direction: &[f64]) -> KernelParams {
        let out = match self {
            UncertaintySet::SimplexBall(b) => b.lmo(direction),
            UncertaintySet::VertexPolytope { vertices } => {
                let mut best = 0;
                let mut best_val = dot(&vertices[0], direction);
                for (k, v) in vertices.iter().enumerate().skip(1) {
                    let val = dot(v, direction);
                    if val < best_val {
                        best = k;
                        best_val = val;
                    }
                }
                vertices[best].clone()
            }
            UncertaintySet::SRectProduct { blocks } => {
                let mut out = vec![0.0; direction.len()];
                for b in blocks {
                    let sub: Vec<f64> = b.indices.iter().map(|&i| direction[i]).collect();
                    for (k, v) in b.ball.lmo(&sub).into_iter().enumerate() {
                        out[b.indices[k]] = v;
                    }
                }
                out
            }
        };
        KernelParams::new(out)
    }

    /// Largest pairwise ℓ2 distance: exact for vertex sets, `min(2r, simplex
    /// diameter)` for a ball, and the root-sum-square of block diameters for a
    /// product.
    pub fn diameter(&self) -> f64 {
        match self {
            UncertaintySet::SimplexBall(b) => b.diameter(),
            UncertaintySet::VertexPolytope { vertices } => {
                let mut best = 0.0f64;
                for (i, u) in vertices.iter().enumerate() {
                    for v in &vertices[i + 1..] {
                        best = best.max(dist2(u, v));
                    }
                }
                best
            }
            UncertaintySet::SRectProduct { blocks } => {
                Float::sqrt(blocks.iter().map(|b| b.ball.diameter().powi(2)).sum::<f64>())
            }
        }
    }

    /// `max_{ξ ∈ set} ⟨ξ, g⟩`.
    pub fn support(&self, g: &[f64]) -> f64 {
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        dot(&self.lmo(&neg).xi, g)
    }
}

/// Minimum-norm point of `conv{v_k − y}` by Wolfe's method, shifted back by
/// `y`.
fn project_polytope(vertices: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let pts: Vec<Vec<f64>> = vertices.iter().map(|v| crate::linalg::sub(v, y)).collect();
    let w = wolfe_min_norm(&pts)?;
    let mut out = vec![0.0; y.len()];
    for (k, wk) in w.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(&vertices[k]) {
            *o += wk * v;
        }
    }
    Ok(out)
}

/// Convex weights over `pts` of the point of smallest norm in their hull.
fn wolfe_min_norm(pts: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = pts.len();
    let scale = pts.iter().map(|p| dot(p, p)).fold(0.0f64, f64::max).max(1e-300);
    let start = (0..n).min_by(|&i, &j| dot(&pts[i], &pts[i]).total_cmp(&dot(&pts[j], &pts[j]))).unwrap_or(0);
    let mut corral = vec![start];
    let mut w = vec![1.0];
    let combine = |corral: &[usize], w: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; pts[0].len()];
        for (k, &i) in corral.iter().enumerate() {
            for (xj, pj) in x.iter_mut().zip(&pts[i]) {
                *xj += w[k] * pj;
            }
        }
        x
    };
    let mut x = combine(&corral, &w);
    let mut prev_xx = f64::INFINITY;
    let mut prev_corral = corral.clone();
    let mut prev_w = w.clone();
    for _ in 0..WOLFE_CAP {
        let xx = dot(&x, &x);
        let (j, xpj) = (0..n).map(|i| (i, dot(&x, &pts[i]))).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap_or((0, 0.0));
        // the gap bounds the squared distance to the optimum; stop at rounding level
        let floor = 8.0 * f64::EPSILON * Float::sqrt(xx * scale) + 1e-24 * scale;
        if xx - xpj <= floor || corral.contains(&j) || xx >= prev_xx {
            if xx >= prev_xx {
                corral.clone_from(&prev_corral);
                w.clone_from(&prev_w);
            }
            let mut full = vec![0.0; n];
            for (k, &i) in corral.iter().enumerate() {
                full[i] += w[k];
            }
            return Ok(full);
        }
        prev_xx = xx;
        prev_corral.clone_from(&corral);
        prev_w.clone_from(&w);
        corral.push(j);
        w.push(0.0);
        loop {
            let alpha = affine_min_norm(pts, &corral)?;
            if alpha.iter().all(|&a| a > 1e-14) {
                w = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (k, &a) in alpha.iter().enumerate() {
                if a <= 1e-14 && w[k] - a > 0.0 {
                    theta = theta.min(w[k] / (w[k] - a));
                }
            }
            for (wk, a) in w.iter_mut().zip(&alpha) {
                *wk = theta * a + (1.0 - theta) * *wk;
            }
            let mut k = 0;
            while k < corral.len() {
                if w[k] <= 1e-14 {
                    corral.remove(k);
                    w.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = w.iter().sum();
            for wk in w.iter_mut() {
                *wk /= total;
            }
            if corral.len() == 1 {
                w = vec![1.0];
                break;
            }
        }
        x = combine(&corral, &w);
    }
    Err(Error::ProjectionDidNotConverge { iterations: WOLFE_CAP })
}

/// Weights `α` with `Σα = 1` minimizing `‖Σ α_k p_k‖` over the corral.
///
/// Solved as least squares in the differences `p_k - p_0`.
fn affine_min_norm(pts: &[Vec<f64>], corral: &[usize]) -> Result<Vec<f64>> {
    let m = corral.len();
    let d = pts[0].len();
    let base = &pts[corral[0]];
    let diff = DMatrix::<f64>::from_fn(d, m - 1, |r, c| pts[corral[c + 1]][r] - base[r]);
    let rhs = DVector::<f64>::from_fn(d, |r, _| -base[r]);
    let svd = diff.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let beta =
        svd.solve(&rhs, 1e-12 * smax.max(1e-300)).map_err(|_| Error::ProjectionDidNotConverge { iterations: 0 })?;
    let mut alpha = Vec::with_capacity(m);
    alpha.push(1.0 - beta.iter().sum::<f64>());
    alpha.extend(beta.iter().copied());
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::ProjectionDidNotConverge { iterations: 0 });
    }
    Ok(alpha)
}

/// Result of [`nonrect_degree`].
#[derive(Debug, Clone, PartialEq)]
pub struct NonRectDegree {
    pub delta: f64,
    pub argmin: KernelParams,
}

/// Grid approximation of the degree of non-rectangularity:
/// `min_{ξ' ∈ grid} [max_{hull} ⟨ξ, g(ξ')⟩ − max_{set} ⟨ξ, g(ξ')⟩]`, where
/// `hull` is an s-rectangular set enclosing `set`.
pub fn nonrect_degree<F>(
    set: &UncertaintySet,
    srect_hull: &UncertaintySet,
    mut grad_field: F,
    grid: &[KernelParams],
) -> Result<NonRectDegree>
where
    F: FnMut(&KernelParams) -> Result<Vec<f64>>,
{
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if !srect_hull.is_s_rectangular() {
        return Err(Error::InvalidSet("relaxation must be an s-rectangular product".into()));
    }
    if let UncertaintySet::VertexPolytope { vertices } = set {
        if vertices.iter().any(|v| !srect_hull.contains(v, 1e-9)) {
            return Err(Error::RelaxationDoesNotContainSet);
        }
    }
    let mut best: Option<NonRectDegree> = None;
    for xi in grid {
        let g = grad_field(xi)?;
        let outer = srect_hull.support(&g);
        let inner = set.support(&g);
        let gap = outer - inner;
        if gap < -1e-9 * (1.0 + Float::abs(inner)) {
            return Err(Error::RelaxationDoesNotContainSet);
        }
        if best.as_ref().is_none_or(|b| gap < b.delta) {
            best = Some(NonRectDegree { delta: gap, argmin: xi.clone() });
        }
    }
    let mut out = best.ok_or(Error::EmptyGrid)?;
    out.delta = out.delta.max(0.0);
    Ok(out)
}
