//! Finite-dimensional RKHS machinery on the real line.
//!
//! Kernels are built from finitely many scalar features,
//! `K(x, y) = Σⱼ φⱼ(x) φⱼ(y)`, or as sums of two such kernels. Functions are
//! coefficient vectors over kernel sections at anchor points. Points are
//! scalars; a domain may be a union of closed intervals.

mod anchors;
mod features;
mod function;
mod kernel;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use anchors::{select_anchors, AnchorSelection, AnchorSet, ANCHOR_RTOL};
pub use features::{matrix_rank, Feature, FeatureSet, FEATURE_RANK_RTOL};
pub use function::{inner_product, RkhsFunction};
pub use kernel::Kernel;

use crate::linalg::{condition_number, SymEig};

/// Largest condition number accepted for a basis change.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RkhsError {
    #[error("feature set is empty")]
    EmptyFeatureSet,
    #[error("features are linearly dependent: numerical rank {rank} of {dim}")]
    DependentFeatures { rank: usize, dim: usize },
    #[error("anchor set is empty")]
    EmptyAnchors,
    #[error("duplicate anchor point {0}")]
    DuplicateAnchor(f64),
    #[error("non-finite point {0}")]
    NonFinitePoint(f64),
    #[error("functions live in different spaces ({0} and {1})")]
    MixedSpace(SpaceTag, SpaceTag),
    #[error("functions use different kernel or anchor bases")]
    BasisMismatch,
    #[error("coefficient length {got} does not match {expected} anchors")]
    LengthMismatch { got: usize, expected: usize },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("no candidate raises the rank past {found} (need {needed})")]
    InsufficientRank { found: usize, needed: usize },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("regularization must be positive and finite, got {0}")]
    InvalidRho(f64),
}

/// Which Hilbert space a function or anchor set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    Agent1,
    Agent2,
    Fusion,
}

impl SpaceTag {
    /// Tag of agent `i` (0-based).
    pub fn agent(i: usize) -> SpaceTag {
        match i {
            0 => SpaceTag::Agent1,
            1 => SpaceTag::Agent2,
            _ => panic!("agent index {i} out of range"),
        }
    }
}

impl fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceTag::Agent1 => "H1",
            SpaceTag::Agent2 => "H2",
            SpaceTag::Fusion => "H",
        })
    }
}

/// Finite union of closed intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pieces: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(pieces: Vec<(f64, f64)>) -> Result<Self, RkhsError> {
        if pieces.is_empty() {
            return Err(RkhsError::InvalidDomain("no intervals".into()));
        }
        for &(lo, hi) in &pieces {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(RkhsError::InvalidDomain(format!("bad interval {lo}..{hi}")));
            }
        }
        Ok(Domain { pieces })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self, RkhsError> {
        Self::new(vec![(lo, hi)])
    }

    pub fn pieces(&self) -> &[(f64, f64)] {
        &self.pieces
    }

    pub fn contains(&self, x: f64) -> bool {
        self.pieces.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    pub fn hull(&self) -> (f64, f64) {
        let lo = self.pieces.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = self.pieces.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn length(&self) -> f64 {
        self.pieces.iter().map(|&(lo, hi)| hi - lo).sum()
    }

    /// `per_piece` evenly spaced points on every interval, endpoints included.
    pub fn grid(&self, per_piece: usize) -> Vec<f64> {
        self.pieces.iter().flat_map(|&(lo, hi)| linspace(lo, hi, per_piece)).collect()
    }

    /// Union of two domains (pieces concatenated).
    pub fn union(&self, other: &Domain) -> Domain {
        let mut pieces = self.pieces.clone();
        pieces.extend_from_slice(&other.pieces);
        Domain { pieces }
    }
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn eval_kernel(k: &Kernel, x: f64, y: f64) -> f64 {
    k.eval(x, y)
}

/// `G[j][k] = K(aⱼ, b_k)`.
pub fn gram(k: &Kernel, a: &AnchorSet, b: &AnchorSet) -> DMatrix<f64> {
    gram_points(k, a.points(), b.points())
}

pub fn gram_points(k: &Kernel, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| k.eval(a[i], b[j]))
}

pub fn eval_function(f: &RkhsFunction, x: f64) -> f64 {
    f.eval(x)
}

/// Minimum of `‖f¹‖²_{H¹} + ‖f²‖²_{H²}` over decompositions `f = f¹ + f²`.
///
/// Works from values of `f` on `grid`: the least-norm stacked coefficient
/// `d` with `[φ¹ | φ²](grid) d = f(grid)` gives the minimum as `|d|²`.
/// The grid must be rich enough to determine functions of the sum space.
pub fn sum_space_norm(f: &RkhsFunction, k1: &FeatureSet, k2: &FeatureSet, grid: &[f64]) -> Result<f64, RkhsError> {
    let stacked = Kernel::sum(Kernel::Feature(k1.clone()), Kernel::Feature(k2.clone()));
    let a = stacked.feature_matrix(grid);
    let y = DVector::from_iterator(grid.len(), grid.iter().map(|&x| f.eval(x)));
    if !a.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
        return Err(RkhsError::SingularSystem("non-finite feature evaluations".into()));
    }
    let svd = a.clone().svd(true, true);
    let top = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    if top == 0.0 {
        return Err(RkhsError::SingularSystem("stacked feature matrix is zero".into()));
    }
    let d = svd
        .solve(&y, FEATURE_RANK_RTOL * top)
        .map_err(|e| RkhsError::SingularSystem(e.to_string()))?;
    let resid = (&a * &d - &y).norm();
    if resid > 1e-8 * y.norm().max(f64::MIN_POSITIVE) && resid > 1e-12 {
        return Err(RkhsError::SingularSystem(format!(
            "function is not in the sum space on this grid (residual {resid:.3e})"
        )));
    }
    Ok(d.norm_squared())
}

/// Coefficients over `Kⁱ`-sections mapped to coefficients over `K`-sections
/// at the same anchors.
#[derive(Debug, Clone)]
pub struct BasisChange {
    pub matrix: DMatrix<f64>,
    /// Condition number of the `K` Gram matrix at the anchors.
    pub condition: f64,
}

impl BasisChange {
    pub fn apply(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.matrix * alpha
    }

    /// Largest pointwise mismatch on `grid` between the two expansions of the
    /// sections, relative to the largest section value.
    pub fn residual(&self, ki: &Kernel, k: &Kernel, a: &AnchorSet, grid: &[f64]) -> f64 {
        let lhs = gram_points(ki, grid, a.points());
        let rhs = gram_points(k, grid, a.points()) * &self.matrix;
        let scale = lhs.amax().max(f64::MIN_POSITIVE);
        (lhs - rhs).amax() / scale
    }
}

/// Solves `𝐊 Mⁱ = 𝐊ⁱ` at the anchors, where `𝐊` is the Gram matrix of `k`.
pub fn basis_change(ki: &Kernel, k: &Kernel, a: &AnchorSet) -> Result<BasisChange, RkhsError> {
    let g = gram(k, a, a);
    let eig = SymEig::new(&g);
    let condition = condition_number(&eig);
    if !(condition <= MAX_CONDITION) {
        return Err(RkhsError::SingularSystem(format!("anchor Gram condition number {condition:.3e}")));
    }
    let cross = gram(ki, a, a);
    let matrix = eig.pinv(0.0) * cross;
    Ok(BasisChange { matrix, condition })
}
