//! Local recursive ridge estimation at one agent.
//!
//! Given the previously downloaded estimate `f̄` and one data point `(x, y)`,
//! the agent minimizes `(f(x) − y)² + ϱ ‖f − f̄‖²` over its own space. The
//! minimizer has coefficients
//! `α* = (ϱ𝐊 + k kᵀ)⁺ (k y + ϱ 𝐊 ᾱ)` with `k = [K(x, x̄ⱼ)]ⱼ`.
//!
//! The anchor Gram matrix of an agent is usually singular (the agent space
//! has fewer dimensions than there are anchors), so coefficients are kept in
//! canonical form: projected onto the range of `𝐊`. The null-space part of a
//! coefficient vector represents the zero function.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::learning_runtime::Schedule;
use crate::linalg::{form_norm, spectral_norm, SymEig, SOLVE_RTOL};
use crate::rkhs_core::{gram, AnchorSet, Domain, FeatureSet, Kernel, RkhsError, RkhsFunction, SpaceTag};

/// One observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
}

/// An agent's knowledge space `Hⁱ` with its anchors and Gram matrix.
#[derive(Debug, Clone)]
pub struct AgentSpace {
    index: usize,
    features: FeatureSet,
    kernel: Arc<Kernel>,
    anchors: Arc<AnchorSet>,
    domain: Domain,
    grid: Vec<f64>,
    gram: DMatrix<f64>,
    range_vectors: DMatrix<f64>,
    range_values: DVector<f64>,
    range_projector: DMatrix<f64>,
}

impl AgentSpace {
    /// `index` is 0 or 1. `grid_per_piece` points per domain interval are kept
    /// for operator-norm sweeps and error metrics.
    pub fn new(
        index: usize,
        features: FeatureSet,
        anchors: &AnchorSet,
        domain: Domain,
        grid_per_piece: usize,
    ) -> Result<Self, RkhsError> {
        let tag = SpaceTag::agent(index);
        let anchors = Arc::new(anchors.retagged(tag));
        let kernel = Arc::new(Kernel::Feature(features.clone()));
        let gram = gram(&kernel, &anchors, &anchors);
        let eig = SymEig::new(&gram);
        let (range_vectors, range_values) = eig.range(SOLVE_RTOL);
        if range_values.is_empty() {
            return Err(RkhsError::SingularSystem("agent Gram matrix is zero".into()));
        }
        let range_projector = &range_vectors * range_vectors.transpose();
        let grid = domain.grid(grid_per_piece);
        Ok(AgentSpace {
            index,
            features,
            kernel,
            anchors,
            domain,
            grid,
            gram,
            range_vectors,
            range_values,
            range_projector,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn tag(&self) -> SpaceTag {
        SpaceTag::agent(self.index)
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn anchors(&self) -> &Arc<AnchorSet> {
        &self.anchors
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Number of anchors.
    pub fn m(&self) -> usize {
        self.anchors.len()
    }

    /// Dimension of the space (rank of the Gram matrix).
    pub fn rank(&self) -> usize {
        self.range_values.len()
    }

    pub fn range_projector(&self) -> &DMatrix<f64> {
        &self.range_projector
    }

    /// `[Kⁱ(x, x̄ⱼ)]ⱼ`.
    pub fn kernel_column(&self, x: f64) -> DVector<f64> {
        self.kernel.column(x, self.anchors.points())
    }

    pub fn canonical(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.range_projector * alpha
    }

    pub fn norm(&self, alpha: &DVector<f64>) -> f64 {
        form_norm(alpha.dot(&(&self.gram * alpha)))
    }

    /// Coordinates in an orthonormal basis of the space: `Λ^{1/2} Vᵀ α`.
    pub fn to_orthonormal(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let z = self.range_vectors.transpose() * alpha;
        z.zip_map(&self.range_values, |a, l| a * l.sqrt())
    }

    /// Canonical coefficients of the function with orthonormal coordinates `z`.
    pub fn from_orthonormal(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.range_vectors * z.zip_map(&self.range_values, |a, l| a / l.sqrt())
    }

    /// Matrix of [`to_orthonormal`](Self::to_orthonormal).
    pub fn orthonormal_map(&self) -> DMatrix<f64> {
        let mut t = self.range_vectors.transpose();
        for (i, l) in self.range_values.iter().enumerate() {
            t.row_mut(i).scale_mut(l.sqrt());
        }
        t
    }

    /// Matrix of [`from_orthonormal`](Self::from_orthonormal).
    pub fn from_orthonormal_map(&self) -> DMatrix<f64> {
        let mut t = self.range_vectors.clone();
        for (j, l) in self.range_values.iter().enumerate() {
            t.column_mut(j).scale_mut(1.0 / l.sqrt());
        }
        t
    }

    pub fn eval(&self, alpha: &DVector<f64>, x: f64) -> f64 {
        alpha.dot(&self.kernel_column(x))
    }

    pub fn function(&self, alpha: DVector<f64>) -> Result<RkhsFunction, RkhsError> {
        RkhsFunction::new(alpha, self.kernel.clone(), self.anchors.clone(), self.tag())
    }

    pub fn zero_function(&self) -> RkhsFunction {
        RkhsFunction::zero(self.kernel.clone(), self.anchors.clone(), self.tag())
    }

    /// `(ϱ𝐊 + k kᵀ)⁺`, the operator `Mⁱ(x, ϱ)`.
    pub fn regularized_inverse(&self, x: f64, rho: f64) -> Result<DMatrix<f64>, RkhsError> {
        check_rho(rho)?;
        let k = self.kernel_column(x);
        let a = &self.gram * rho + &k * k.transpose();
        if !a.iter().all(|v| v.is_finite()) {
            return Err(RkhsError::SingularSystem("non-finite regularized matrix".into()));
        }
        Ok(SymEig::new(&a).pinv(SOLVE_RTOL))
    }

    /// `R (ϱ𝐊 + k kᵀ)⁺ (ϱ 𝐊 α + γ)` where `R` projects onto the range of `𝐊`.
    pub fn learning_step(
        &self,
        alpha: &DVector<f64>,
        gamma: &DVector<f64>,
        x: f64,
        rho: f64,
    ) -> Result<DVector<f64>, RkhsError> {
        check_rho(rho)?;
        let k = self.kernel_column(x);
        let a = &self.gram * rho + &k * k.transpose();
        let b = &self.gram * alpha * rho + gamma;
        let sol = crate::linalg::pinv_solve(&a, &b)?;
        Ok(self.canonical(&sol))
    }

    /// Closed-form minimizer of the local cost, in canonical coefficients.
    pub fn local_estimate_coeffs(
        &self,
        prior: &DVector<f64>,
        d: DataPoint,
        rho: f64,
    ) -> Result<DVector<f64>, RkhsError> {
        let gamma = self.kernel_column(d.x) * d.y;
        self.learning_step(prior, &gamma, d.x, rho)
    }

    /// `(f(x) − y)² + ϱ ‖f − f̄‖²`.
    pub fn local_cost(&self, alpha: &DVector<f64>, prior: &DVector<f64>, d: DataPoint, rho: f64) -> f64 {
        let r = self.eval(alpha, d.x) - d.y;
        let diff = alpha - prior;
        r * r + rho * diff.dot(&(&self.gram * &diff))
    }

    /// Gradient of [`local_cost`](Self::local_cost) in `α`:
    /// `2 k (kᵀα − y) + 2ϱ 𝐊 (α − ᾱ)`.
    pub fn local_cost_gradient(&self, alpha: &DVector<f64>, prior: &DVector<f64>, d: DataPoint, rho: f64) -> DVector<f64> {
        let k = self.kernel_column(d.x);
        let r = k.dot(alpha) - d.y;
        k * (2.0 * r) + &self.gram * (alpha - prior) * (2.0 * rho)
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<(), RkhsError> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(RkhsError::InvalidRho(rho))
    }
}

/// An agent between iterations: its space, the last downloaded estimate, and
/// its regularization schedule.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub space: Arc<AgentSpace>,
    pub estimate: RkhsFunction,
    pub schedule: Schedule,
}

impl AgentState {
    pub fn new(space: Arc<AgentSpace>, schedule: Schedule) -> Self {
        let estimate = space.zero_function();
        AgentState { space, estimate, schedule }
    }

    pub fn with_estimate(space: Arc<AgentSpace>, estimate: RkhsFunction, schedule: Schedule) -> Result<Self, RkhsError> {
        if estimate.space() != space.tag() {
            return Err(RkhsError::MixedSpace(estimate.space(), space.tag()));
        }
        if estimate.coefficients().len() != space.m() {
            return Err(RkhsError::LengthMismatch { got: estimate.coefficients().len(), expected: space.m() });
        }
        Ok(AgentState { space, estimate, schedule })
    }
}

/// `ψ = y · K̄ⁱ(x)ᵀ K̄ⁱ(·)`, the data point embedded as a function.
#[derive(Debug, Clone)]
pub struct DataEmbedding {
    pub x: f64,
    pub function: RkhsFunction,
}

fn check_state_function(s: &AgentState, f: &RkhsFunction) -> Result<(), RkhsError> {
    if f.space() != s.space.tag() {
        return Err(RkhsError::MixedSpace(f.space(), s.space.tag()));
    }
    if f.coefficients().len() != s.space.m() {
        return Err(RkhsError::LengthMismatch { got: f.coefficients().len(), expected: s.space.m() });
    }
    Ok(())
}

/// Minimizer of the local cost around the agent's current estimate.
pub fn local_estimate(s: &AgentState, d: DataPoint, rho: f64) -> Result<RkhsFunction, RkhsError> {
    let alpha = s.space.local_estimate_coeffs(s.estimate.coefficients(), d, rho)?;
    s.space.function(alpha)
}

pub fn embed_data(s: &AgentState, d: DataPoint) -> DataEmbedding {
    let coeffs = s.space.kernel_column(d.x) * d.y;
    DataEmbedding {
        x: d.x,
        function: s.space.function(coeffs).expect("kernel column has one entry per anchor"),
    }
}

/// The learning operator `T̄ⁱ(ϱ)[f, ψ]`; linear in the pair `(f, ψ)`.
pub fn apply_learning_operator(
    s: &AgentState,
    f: &RkhsFunction,
    psi: &DataEmbedding,
    rho: f64,
) -> Result<RkhsFunction, RkhsError> {
    check_state_function(s, f)?;
    check_state_function(s, &psi.function)?;
    let beta = s.space.learning_step(f.coefficients(), psi.function.coefficients(), psi.x, rho)?;
    s.space.function(beta)
}

/// Matrix of `T̄ⁱ(ϱ)` at fixed `x` from `(z, t)` to canonical coefficients.
///
/// `z` are orthonormal coordinates of `f`; `t` is the signed `Hⁱ`-norm of `ψ`
/// along its one-dimensional slice `ψ ∝ K̄ⁱ(x)`. Returns `None` when the
/// slice degenerates (`K̄ⁱ(x)ᵀ 𝐊 K̄ⁱ(x) = 0`).
pub fn learning_operator_coefficients(space: &AgentSpace, x: f64, rho: f64) -> Result<Option<DMatrix<f64>>, RkhsError> {
    let k = space.kernel_column(x);
    let s = k.dot(&(space.gram() * &k));
    if !(s > f64::MIN_POSITIVE) || !s.is_finite() {
        return Ok(None);
    }
    let minv = space.regularized_inverse(x, rho)?;
    let r = space.rank();
    let mut inputs = DMatrix::zeros(space.m(), r + 1);
    inputs.view_mut((0, 0), (space.m(), r)).copy_from(&(space.gram() * space.from_orthonormal_map() * rho));
    inputs.set_column(r, &(k / s.sqrt()));
    Ok(Some(space.range_projector() * minv * inputs))
}

/// Matrix of `T̄ⁱ(ϱ)` at fixed `x` in orthonormal coordinates on both sides;
/// see [`learning_operator_coefficients`].
pub fn learning_operator_matrix(space: &AgentSpace, x: f64, rho: f64) -> Result<Option<DMatrix<f64>>, RkhsError> {
    Ok(learning_operator_coefficients(space, x, rho)?.map(|c| space.orthonormal_map() * c))
}

/// Result of an operator-norm sweep over a grid of data locations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentNorm {
    pub norm: f64,
    /// Grid points where `ψ` degenerates and which were left out.
    pub skipped: usize,
}

/// `sup_x ‖T̄ⁱ(ϱ)‖` over `grid`, each term an exact largest singular value.
pub fn agent_operator_norm(space: &AgentSpace, rho: f64, grid: &[f64]) -> Result<AgentNorm, RkhsError> {
    check_rho(rho)?;
    let mut norm: f64 = 0.0;
    let mut skipped = 0;
    let mut evaluated = 0;
    for &x in grid {
        match learning_operator_matrix(space, x, rho)? {
            Some(w) => {
                norm = norm.max(spectral_norm(&w));
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    if evaluated == 0 {
        return Err(RkhsError::SingularSystem("every grid point degenerates".into()));
    }
    Ok(AgentNorm { norm, skipped })
}
