//! Fusion center: upload, data reconstruction, fusion regression, download.
//!
//! The fusion space `H` has kernel `K = K¹ + K²`. Its dimension `m` is the
//! numerical rank of the stacked feature map `[φ¹ | φ²]`, and each agent's
//! `m` anchors index a basis of `K`-sections. An orthonormal basis `Φ` of
//! `H` is built by Gram–Schmidt over the stacked features (agent 1 first),
//! restricted to the orthogonal complement of the feature null space. In
//! `Φ`-coordinates the download operator is `L̄ⁱ = Uᵀ Eᵢ U`, where `Eᵢ`
//! selects agent `i`'s features.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::agent_estimator::{check_rho, AgentSpace};
use crate::linalg::{form_norm, pinv_solve, SymEig};
use crate::rkhs_core::{
    basis_change, gram, AnchorSet, BasisChange, Kernel, RkhsError, RkhsFunction, SpaceTag, FEATURE_RANK_RTOL,
};

/// Relative eigenvalue cutoff deciding the null space of `√L̄ⁱ`.
pub const DOWNLOAD_RTOL: f64 = 1e-10;

/// Norm below which a Gram–Schmidt candidate is dropped as dependent.
const GS_DROP: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FusionSpace {
    agents: [Arc<AgentSpace>; 2],
    kernel: Arc<Kernel>,
    anchors: Arc<AnchorSet>,
    uploaded_anchors: [Arc<AnchorSet>; 2],
    gram: DMatrix<f64>,
    anchor_grams: [DMatrix<f64>; 2],
    basis_changes: [BasisChange; 2],
    phi: DMatrix<f64>,
    stacked: DMatrix<f64>,
    split: usize,
    m: usize,
}

impl FusionSpace {
    /// Assembles the fusion space. `grid` must be rich enough to reveal every
    /// linear dependence among the stacked features on the input space.
    pub fn new(agent1: AgentSpace, agent2: AgentSpace, grid: &[f64]) -> Result<Self, RkhsError> {
        let kernel = Arc::new(Kernel::sum((**agent1.kernel()).clone(), (**agent2.kernel()).clone()));
        let phi = orthonormal_feature_basis(&kernel, grid)?;
        let m = phi.ncols();
        for a in [&agent1, &agent2] {
            if a.m() != m {
                return Err(RkhsError::LengthMismatch { got: a.m(), expected: m });
            }
        }
        let uploaded_anchors = [
            Arc::new(agent1.anchors().retagged(SpaceTag::Fusion)),
            Arc::new(agent2.anchors().retagged(SpaceTag::Fusion)),
        ];
        let mut changes = Vec::with_capacity(2);
        let mut anchor_grams = Vec::with_capacity(2);
        for (a, up) in [&agent1, &agent2].into_iter().zip(&uploaded_anchors) {
            up.check_basis(&kernel)?;
            changes.push(basis_change(a.kernel(), &kernel, up)?);
            anchor_grams.push(gram(&kernel, up, up));
        }
        let anchors = Arc::new(uploaded_anchors[0].concat(&uploaded_anchors[1], SpaceTag::Fusion));
        let gram = gram(&kernel, &anchors, &anchors);
        let stacked = kernel.feature_matrix(anchors.points());
        let split = agent1.features().dimension();
        let [c1, c2]: [BasisChange; 2] = changes.try_into().expect("two agents");
        let [g1, g2]: [DMatrix<f64>; 2] = anchor_grams.try_into().expect("two agents");
        Ok(FusionSpace {
            agents: [Arc::new(agent1), Arc::new(agent2)],
            kernel,
            anchors,
            uploaded_anchors,
            gram,
            anchor_grams: [g1, g2],
            basis_changes: [c1, c2],
            phi,
            stacked,
            split,
            m,
        })
    }

    pub fn agent(&self, i: usize) -> &Arc<AgentSpace> {
        &self.agents[i]
    }

    pub fn agents(&self) -> &[Arc<AgentSpace>; 2] {
        &self.agents
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    /// Both agents' anchors, agent 1 first.
    pub fn anchors(&self) -> &Arc<AnchorSet> {
        &self.anchors
    }

    /// The `2m × 2m` fusion Gram matrix `𝐊`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// `𝐊̆ⁱ`: the fusion kernel's Gram matrix at agent `i`'s anchors.
    pub fn anchor_gram(&self, i: usize) -> &DMatrix<f64> {
        &self.anchor_grams[i]
    }

    pub fn basis_change(&self, i: usize) -> &BasisChange {
        &self.basis_changes[i]
    }

    /// Dimension of `H`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// `U`: columns are the orthonormal basis `Φ` in stacked feature coordinates.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Number of agent-1 features in the stacked feature vector.
    pub fn split(&self) -> usize {
        self.split
    }

    pub fn feature_dim(&self) -> usize {
        self.phi.nrows()
    }

    /// `Φ`-coordinates of `Σ αⱼ K(·, aⱼ)` for arbitrary points `a`.
    pub fn phi_coords_at(&self, points: &[f64], alpha: &DVector<f64>) -> DVector<f64> {
        let c = self.kernel.feature_matrix(points).transpose() * alpha;
        self.phi.transpose() * c
    }

    /// `Φ`-coordinates of a fused function over the `2m` fusion anchors.
    pub fn phi_coords(&self, alpha: &DVector<f64>) -> DVector<f64> {
        self.phi.transpose() * (self.stacked.transpose() * alpha)
    }

    /// `Φ`-coordinates of an agent function `Σ αⱼ Kⁱ(·, x̄ⁱⱼ)`.
    pub fn phi_coords_agent(&self, i: usize, alpha: &DVector<f64>) -> DVector<f64> {
        let agent = &self.agents[i];
        let block = agent.features().matrix(agent.anchors().points()).transpose() * alpha;
        let mut c = DVector::zeros(self.feature_dim());
        let offset = if i == 0 { 0 } else { self.split };
        c.rows_mut(offset, block.len()).copy_from(&block);
        self.phi.transpose() * c
    }

    /// `Φ`-coordinates of any function whose kernel is the fusion kernel.
    pub fn phi_coords_of(&self, f: &RkhsFunction) -> Result<DVector<f64>, RkhsError> {
        if f.space() != SpaceTag::Fusion {
            return Err(RkhsError::MixedSpace(f.space(), SpaceTag::Fusion));
        }
        if **f.kernel() != *self.kernel {
            return Err(RkhsError::BasisMismatch);
        }
        Ok(self.phi_coords_at(f.anchors().points(), f.coefficients()))
    }

    /// Least-norm fused coefficients of the function with `Φ`-coordinates `b`.
    pub fn fused_from_phi(&self, b: &DVector<f64>) -> Result<DVector<f64>, RkhsError> {
        let target = &self.phi * b;
        let a = &self.stacked;
        pinv_solve(&(a * a.transpose()), &(a * target))
    }

    pub fn eval_fused(&self, alpha: &DVector<f64>, x: f64) -> f64 {
        alpha.dot(&self.kernel.column(x, self.anchors.points()))
    }

    pub fn fused_norm(&self, alpha: &DVector<f64>) -> f64 {
        form_norm(alpha.dot(&(&self.gram * alpha)))
    }

    pub fn fused_function(&self, alpha: DVector<f64>) -> Result<RkhsFunction, RkhsError> {
        RkhsFunction::new(alpha, self.kernel.clone(), self.anchors.clone(), SpaceTag::Fusion)
    }

    /// `Mⁱ α`.
    pub fn upload_coeffs(&self, i: usize, alpha: &DVector<f64>) -> DVector<f64> {
        self.basis_changes[i].apply(alpha)
    }

    /// Fusion-space norm of an uploaded agent function.
    pub fn uploaded_norm(&self, i: usize, alpha: &DVector<f64>) -> f64 {
        let a = self.upload_coeffs(i, alpha);
        form_norm(a.dot(&(&self.anchor_grams[i] * &a)))
    }

    /// `(𝐊² + ϱ𝐊)⁺ 𝐊 Ŷ`.
    pub fn fuse_coeffs(&self, outputs: &DVector<f64>, rho: f64) -> Result<DVector<f64>, RkhsError> {
        check_rho(rho)?;
        let k = &self.gram;
        let a = k * k + k * rho;
        pinv_solve(&a, &(k * outputs))
    }

    /// `|𝐊α − Ŷ|² + ϱ αᵀ𝐊α`.
    pub fn fusion_cost(&self, alpha: &DVector<f64>, outputs: &DVector<f64>, rho: f64) -> f64 {
        let ka = &self.gram * alpha;
        (&ka - outputs).norm_squared() + rho * alpha.dot(&ka)
    }

    fn agent_index(&self, tag: SpaceTag) -> Option<usize> {
        match tag {
            SpaceTag::Agent1 => Some(0),
            SpaceTag::Agent2 => Some(1),
            SpaceTag::Fusion => None,
        }
    }
}

/// Orthonormal basis of the complement of the stacked-feature null space,
/// obtained by Gram–Schmidt over projected unit vectors in feature order.
fn orthonormal_feature_basis(kernel: &Kernel, grid: &[f64]) -> Result<DMatrix<f64>, RkhsError> {
    let a = kernel.feature_matrix(grid);
    if !a.iter().all(|v| v.is_finite()) {
        return Err(RkhsError::SingularSystem("non-finite feature values on the grid".into()));
    }
    let p = a.ncols();
    let svd = a.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let top = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > FEATURE_RANK_RTOL * top).collect();
    if keep.is_empty() {
        return Err(RkhsError::SingularSystem("stacked features vanish on the grid".into()));
    }
    let mut range = DMatrix::zeros(p, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        range.set_column(c, &vt.row(i).transpose());
    }
    let projector = &range * range.transpose();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for l in 0..p {
        let mut v = projector.column(l).into_owned();
        for _ in 0..2 {
            for u in &basis {
                let c = u.dot(&v);
                v -= u * c;
            }
        }
        let n = v.norm();
        if n > GS_DROP {
            basis.push(v / n);
        }
        if basis.len() == keep.len() {
            break;
        }
    }
    Ok(DMatrix::from_columns(&basis))
}

/// Agent function re-expressed over fusion-kernel sections at the same anchors.
pub fn upload(space: &FusionSpace, f: &RkhsFunction) -> Result<RkhsFunction, RkhsError> {
    let i = space.agent_index(f.space()).ok_or(RkhsError::MixedSpace(f.space(), SpaceTag::Agent1))?;
    if f.coefficients().len() != space.m() {
        return Err(RkhsError::LengthMismatch { got: f.coefficients().len(), expected: space.m() });
    }
    RkhsFunction::new(
        space.upload_coeffs(i, f.coefficients()),
        space.kernel.clone(),
        space.uploaded_anchors[i].clone(),
        SpaceTag::Fusion,
    )
}

/// Data that a ridge regression at the anchors would turn back into `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedData {
    pub space: SpaceTag,
    pub inputs: Vec<f64>,
    pub outputs: DVector<f64>,
}

/// `Ŷ = (𝐆 + ϱI) α` with inputs at the anchors of `f`.
pub fn reconstruct_data(f: &RkhsFunction, rho: f64) -> Result<ReconstructedData, RkhsError> {
    check_rho(rho)?;
    let g = gram(f.kernel(), f.anchors(), f.anchors());
    let n = g.nrows();
    let outputs = (g + DMatrix::identity(n, n) * rho) * f.coefficients();
    Ok(ReconstructedData { space: f.space(), inputs: f.anchors().points().to_vec(), outputs })
}

/// Ridge regression at the anchors of a Gram matrix: `(𝐆ᵀ𝐆 + ϱ𝐆)⁺ 𝐆ᵀ Ŷ`.
pub fn ridge_refit(g: &DMatrix<f64>, outputs: &DVector<f64>, rho: f64) -> Result<DVector<f64>, RkhsError> {
    check_rho(rho)?;
    let a = g.transpose() * g + g * rho;
    pinv_solve(&a, &(g.transpose() * outputs))
}

/// Regression in `H` on the pooled reconstructed data of both agents.
pub fn fuse(
    space: &FusionSpace,
    d1: &ReconstructedData,
    d2: &ReconstructedData,
    rho: f64,
) -> Result<RkhsFunction, RkhsError> {
    let m = space.m();
    for (d, tag) in [(d1, SpaceTag::Agent1), (d2, SpaceTag::Agent2)] {
        if d.outputs.len() != m {
            return Err(RkhsError::LengthMismatch { got: d.outputs.len(), expected: m });
        }
        if d.space != tag {
            return Err(RkhsError::MixedSpace(d.space, tag));
        }
    }
    let outputs = DVector::from_iterator(2 * m, d1.outputs.iter().chain(d2.outputs.iter()).copied());
    let alpha = space.fuse_coeffs(&outputs, rho)?;
    space.fused_function(alpha)
}

/// `L̄ⁱ` in `Φ`-coordinates with its spectral data and the download maps.
#[derive(Debug, Clone)]
pub struct DownloadOperator {
    agent: usize,
    l: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    sqrt_l: DMatrix<f64>,
    projector: DMatrix<f64>,
    sections_inv: DMatrix<f64>,
    coefficient_map: DMatrix<f64>,
    range_projector: DMatrix<f64>,
}

impl DownloadOperator {
    pub fn agent(&self) -> usize {
        self.agent
    }

    /// `L̄ⁱ` in `Φ`-coordinates.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Eigenvalues kept as nonzero, descending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Matching eigenvectors as columns.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt_l
    }

    /// Projector onto the complement of the null space of `√L̄ⁱ`.
    pub fn projector(&self) -> &DMatrix<f64> {
        &self.projector
    }

    /// `‖L̄ⁱ‖`.
    pub fn norm(&self) -> f64 {
        if self.eigenvalues.is_empty() {
            0.0
        } else {
            self.eigenvalues[0]
        }
    }

    /// `√L̄ⁱ Π b` in `Φ`-coordinates.
    pub fn apply_matrix_form(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.sqrt_l * (&self.projector * b)
    }

    /// Agent coefficients of the downloaded function, summed term by term:
    /// `ᾱ = Σₖ bₖ aₖ / √λₖ` where `bₖ = vₖᵀ b` and `aₖ` expresses the
    /// eigenvector `vₖ` over `K`-sections at the agent's anchors.
    pub fn apply_closed_form(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut alpha = DVector::zeros(self.sections_inv.nrows());
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            let v = self.eigenvectors.column(k);
            let a_k = &self.sections_inv * v;
            alpha += a_k * (v.dot(b) / lambda.sqrt());
        }
        &self.range_projector * alpha
    }

    /// The closed form as one matrix from `Φ`-coordinates to agent coefficients.
    pub fn coefficient_map(&self) -> &DMatrix<f64> {
        &self.coefficient_map
    }
}

/// Builds `L̄ⁱ = Uᵀ Eᵢ U` and everything the download needs.
pub fn build_download_operator(space: &FusionSpace, i: usize) -> Result<DownloadOperator, RkhsError> {
    let p = space.feature_dim();
    let split = space.split();
    let select = DMatrix::from_fn(p, p, |r, c| {
        let inside = if i == 0 { r < split } else { r >= split };
        if r == c && inside {
            1.0
        } else {
            0.0
        }
    });
    let u = space.phi();
    let l = u.transpose() * select * u;
    let eig = SymEig::new(&l);
    let top = eig.max().max(0.0);
    let kept: Vec<usize> = (0..eig.values.len()).filter(|&k| eig.values[k] > DOWNLOAD_RTOL * top).collect();
    let eigenvalues = DVector::from_iterator(kept.len(), kept.iter().map(|&k| eig.values[k]));
    let mut eigenvectors = DMatrix::zeros(l.nrows(), kept.len());
    for (c, &k) in kept.iter().enumerate() {
        eigenvectors.set_column(c, &eig.vectors.column(k));
    }
    let sqrt_l = eig.sqrt();
    let projector = &eigenvectors * eigenvectors.transpose();

    let agent = space.agent(i);
    let sections = space.phi_coords_at_matrix(agent.anchors().points());
    let sections_inv = sections
        .clone()
        .pseudo_inverse(f64::EPSILON * sections.amax() * sections.nrows() as f64)
        .map_err(|e| RkhsError::SingularSystem(e.to_string()))?;
    let scaled = DMatrix::from_fn(eigenvectors.nrows(), eigenvectors.ncols(), |r, c| {
        eigenvectors[(r, c)] / eigenvalues[c].sqrt()
    });
    let range_projector = agent.range_projector().clone();
    let coefficient_map = &range_projector * &sections_inv * scaled * eigenvectors.transpose();
    Ok(DownloadOperator {
        agent: i,
        l,
        eigenvalues,
        eigenvectors,
        sqrt_l,
        projector,
        sections_inv,
        coefficient_map,
        range_projector,
    })
}

impl FusionSpace {
    /// Columns are `Φ`-coordinates of `K(·, aⱼ)`.
    pub fn phi_coords_at_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        self.phi.transpose() * self.kernel.feature_matrix(points).transpose()
    }
}

/// Downloads a fused function to agent `op.agent()`.
pub fn download(space: &FusionSpace, op: &DownloadOperator, f: &RkhsFunction) -> Result<RkhsFunction, RkhsError> {
    let b = space.phi_coords_of(f)?;
    space.agent(op.agent).function(op.apply_closed_form(&b))
}

/// `c_d = 1 + λmax(½(Π¹Π² + Π²Π¹))`, in `[1, 2]`.
pub fn download_normalization(op1: &DownloadOperator, op2: &DownloadOperator) -> f64 {
    let p = &op1.projector * &op2.projector;
    let sym = (&p + p.transpose()) * 0.5;
    1.0 + SymEig::new(&sym).max().max(0.0)
}
