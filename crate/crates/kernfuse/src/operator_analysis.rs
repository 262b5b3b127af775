//! Operator norms of the fusion map, the stage map and their products.
//!
//! Every norm here is the largest singular value of an explicit matrix in
//! coordinates that are orthonormal for the relevant Hilbert norms. Stage
//! maps depend on the data locations of the iteration; the data embedding
//! `ψ` is restricted to its one-dimensional slice at that location.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::agent_estimator::{check_rho, learning_operator_coefficients, AgentSpace};
use crate::fusion_center::FusionSpace;
use crate::learning_runtime::{DataSource, ReconstructionRho, RunConfig, System};
use crate::linalg::{block_diag, spectral_norm, SymEig, SOLVE_RTOL};
use crate::rkhs_core::RkhsError;

/// Cumulative products above this value are flagged as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Norm placed on the pair `(f¹, f²)` fed to the fusion operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainNorm {
    /// Fusion-space norm of the uploaded functions, `αᵀ Mᵀ 𝐊̆ M α`.
    Uploaded,
    /// `αᵀ Mᵀ 𝐊ⁱ M α`.
    Stated,
    /// Agent-space norm `αᵀ 𝐊ⁱ α`.
    Agent,
    /// Euclidean norm of the canonical coefficients.
    Euclidean,
}

/// How to rescale the kernels so a Gram matrix has largest eigenvalue 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramNormalization {
    /// Full fusion Gram matrix `𝐊`.
    Full,
    /// Largest of the two diagonal blocks `𝐊̃¹`, `𝐊̃²`.
    Blocks,
}

/// Factor that brings the chosen Gram matrix to largest eigenvalue 1.
pub fn gram_scale(space: &FusionSpace, how: GramNormalization) -> f64 {
    let top = match how {
        GramNormalization::Full => SymEig::new(space.gram()).max(),
        GramNormalization::Blocks => {
            SymEig::new(space.anchor_gram(0)).max().max(SymEig::new(space.anchor_gram(1)).max())
        }
    };
    1.0 / top
}

/// Eigenvalue comparison around the block decomposition
/// `𝐊 = [[𝐊̃¹, 𝐊¹²], [𝐊¹²ᵀ, 𝐊̃²]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchurReport {
    pub lambda_max_k: f64,
    pub block_max: [f64; 2],
    /// `λmax` of `D = diag(𝐊̃¹ − 𝐊¹² 𝐊̃²⁺ 𝐊¹²ᵀ, 𝐊̃²)`.
    pub lambda_max_d: f64,
    /// `max(λmax(𝐊̃¹), λmax(𝐊̃²))`.
    pub bound: f64,
}

impl SchurReport {
    /// `λmax(𝐊) ≤ max(λmax(𝐊̃¹), λmax(𝐊̃²)) + slack`.
    pub fn k_within_bound(&self, slack: f64) -> bool {
        self.lambda_max_k <= self.bound + slack
    }

    /// `λmax(D) ≤ max(λmax(𝐊̃¹), λmax(𝐊̃²)) + slack`.
    pub fn d_within_bound(&self, slack: f64) -> bool {
        self.lambda_max_d <= self.bound + slack
    }
}

/// Splits `k` after row/column `split` and compares eigenvalues.
pub fn schur_report(k: &DMatrix<f64>, split: usize) -> SchurReport {
    let n = k.nrows();
    let k11 = k.view((0, 0), (split, split)).into_owned();
    let k12 = k.view((0, split), (split, n - split)).into_owned();
    let k22 = k.view((split, split), (n - split, n - split)).into_owned();
    let e11 = SymEig::new(&k11).max();
    let e22_eig = SymEig::new(&k22);
    let e22 = e22_eig.max();
    let complement = &k11 - &k12 * e22_eig.pinv(SOLVE_RTOL) * k12.transpose();
    let d = block_diag(&complement, &k22);
    SchurReport {
        lambda_max_k: SymEig::new(k).max(),
        block_max: [e11, e22],
        lambda_max_d: SymEig::new(&d).max(),
        bound: e11.max(e22),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionNorm {
    pub norm: f64,
    pub norm_squared: f64,
    pub schur: SchurReport,
}

/// Matrix taking stacked agent coefficients `[α¹; α²]` to fused coefficients.
pub fn fusion_map_matrix(space: &FusionSpace, recon_rho: [f64; 2], rho: f64) -> Result<DMatrix<f64>, RkhsError> {
    check_rho(rho)?;
    let k = space.gram();
    let solve = SymEig::new(&(k * k + k * rho)).pinv(SOLVE_RTOL) * k;
    let m = space.m();
    let mut recon = Vec::with_capacity(2);
    for (i, &r) in recon_rho.iter().enumerate() {
        check_rho(r)?;
        recon.push(space.agent(i).gram() + DMatrix::identity(m, m) * r);
    }
    Ok(solve * block_diag(&recon[0], &recon[1]))
}

fn inverse_sqrt(q: &DMatrix<f64>) -> Result<DMatrix<f64>, RkhsError> {
    let eig = SymEig::new(q);
    if eig.min() <= 1e-14 * eig.max() {
        return Err(RkhsError::SingularSystem("domain norm is degenerate".into()));
    }
    let n = q.nrows();
    let s = DMatrix::from_fn(n, n, |i, j| eig.vectors[(i, j)] / eig.values[j].sqrt());
    Ok(s * eig.vectors.transpose())
}

fn range_basis(agent: &AgentSpace) -> DMatrix<f64> {
    let (v, _) = SymEig::new(agent.gram()).range(SOLVE_RTOL);
    v
}

/// `‖T(ϱ)‖` with reconstruction parameters `recon_rho` and the given domain norm.
pub fn fusion_operator_norm_with(
    space: &FusionSpace,
    rho: f64,
    recon_rho: [f64; 2],
    domain: DomainNorm,
) -> Result<FusionNorm, RkhsError> {
    let t = fusion_map_matrix(space, recon_rho, rho)?;
    let basis = [range_basis(space.agent(0)), range_basis(space.agent(1))];
    let p = block_diag(&basis[0], &basis[1]);
    let mut forms = Vec::with_capacity(2);
    for i in 0..2 {
        let mi = &space.basis_change(i).matrix;
        let g = match domain {
            DomainNorm::Uploaded => mi.transpose() * space.anchor_gram(i) * mi,
            DomainNorm::Stated => mi.transpose() * space.agent(i).gram() * mi,
            DomainNorm::Agent => space.agent(i).gram().clone(),
            DomainNorm::Euclidean => DMatrix::identity(space.m(), space.m()),
        };
        forms.push(basis[i].transpose() * g * &basis[i]);
    }
    let qih = inverse_sqrt(&block_diag(&forms[0], &forms[1]))?;
    let tp = t * p;
    let num = tp.transpose() * space.gram() * &tp;
    let norm_squared = SymEig::new(&(&qih * num * &qih)).max().max(0.0);
    Ok(FusionNorm { norm: norm_squared.sqrt(), norm_squared, schur: schur_report(space.gram(), space.m()) })
}

/// `‖T(ϱ)‖` with `ϱ` also used for reconstruction and the uploaded-function domain norm.
pub fn fusion_operator_norm(space: &FusionSpace, rho: f64) -> Result<FusionNorm, RkhsError> {
    fusion_operator_norm_with(space, rho, [rho, rho], DomainNorm::Uploaded)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiAgentNorm {
    pub norm: f64,
    /// `‖L̂ⁱ ∘ T̄ⁱ‖` per agent.
    pub blocks: [f64; 2],
    pub skipped: usize,
}

/// Norm of `(f¹, f², ψ¹, ψ²) ↦ (L̂¹ T̄¹[f¹, ψ¹], L̂² T̄²[f², ψ²])`, swept over
/// each agent's grid; block-diagonal, so the maximum of the two block norms.
pub fn multi_agent_operator_norm(space: &FusionSpace, rho1: f64, rho2: f64) -> Result<MultiAgentNorm, RkhsError> {
    let mut blocks = [0.0; 2];
    let mut skipped = 0;
    for (i, rho) in [rho1, rho2].into_iter().enumerate() {
        let agent = space.agent(i);
        let out = SymEig::new(space.anchor_gram(i)).sqrt() * &space.basis_change(i).matrix;
        for &x in agent.grid() {
            match learning_operator_coefficients(agent, x, rho)? {
                Some(c) => blocks[i] = f64::max(blocks[i], spectral_norm(&(&out * c))),
                None => skipped += 1,
            }
        }
    }
    Ok(MultiAgentNorm { norm: blocks[0].max(blocks[1]), blocks, skipped })
}

/// `‖T̂‖`: largest singular value of `[Π¹; Π²]`, divided by `c_d` when normalized.
pub fn download_operator_norm(system: &System, normalize: bool) -> f64 {
    let p1 = system.downloads[0].projector();
    let p2 = system.downloads[1].projector();
    let mut stacked = DMatrix::zeros(p1.nrows() + p2.nrows(), p1.ncols());
    stacked.view_mut((0, 0), p1.shape()).copy_from(p1);
    stacked.view_mut((p1.nrows(), 0), p2.shape()).copy_from(p2);
    let s = spectral_norm(&stacked);
    if normalize {
        s / system.c_d
    } else {
        s
    }
}

/// Parameters of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageParams {
    /// `[ϱ¹, ϱ², ϱ]`.
    pub rho: [f64; 3],
    /// Data locations `[x¹, x²]`.
    pub x: [f64; 2],
    pub normalize_download: bool,
    pub reconstruction: ReconstructionRho,
}

impl StageParams {
    pub fn from_config(config: &RunConfig, n: usize, x: [f64; 2]) -> Self {
        StageParams {
            rho: config.rhos(n),
            x,
            normalize_download: config.normalize_download,
            reconstruction: config.reconstruction,
        }
    }

    fn recon_rho(&self) -> [f64; 2] {
        match self.reconstruction {
            ReconstructionRho::Agent => [self.rho[0], self.rho[1]],
            ReconstructionRho::Fusion => [self.rho[2], self.rho[2]],
        }
    }
}

/// The stage map `𝕋 = T̂ ∘ T(ϱ) ∘ T̄(ϱ¹, ϱ²)` at fixed data locations.
#[derive(Debug, Clone)]
pub struct StageOperator {
    /// `[ᾱ¹; ᾱ²; γ¹; γ²] ↦ [ᾱ¹'; ᾱ²']` in anchor coefficients, where `γⁱ` are
    /// the coefficients of `ψⁱ`.
    pub coefficients: DMatrix<f64>,
    /// `[z¹; z²; t¹; t²] ↦ [z¹'; z²']` in orthonormal coordinates, with `tⁱ`
    /// the signed norm of `ψⁱ` on its slice.
    pub orthonormal: DMatrix<f64>,
    pub norm: f64,
    /// Orthonormal dimensions of the two agent spaces.
    pub dims: [usize; 2],
    /// `√(K̄ⁱ(x)ᵀ 𝐊ⁱ K̄ⁱ(x))`, the norm of `ψⁱ` per unit `y`.
    pub psi_scale: [f64; 2],
}

impl StageOperator {
    /// Affine map on the state `[z¹; z²]` with `ψ` frozen at outputs `y`.
    pub fn frozen(&self, y: [f64; 2]) -> StageMap {
        let r = self.dims[0] + self.dims[1];
        let linear = self.orthonormal.columns(0, r).into_owned();
        let t = DVector::from_vec(vec![y[0] * self.psi_scale[0], y[1] * self.psi_scale[1]]);
        let offset = self.orthonormal.columns(r, 2) * t;
        StageMap { linear, offset }
    }
}

fn download_rows(system: &System, normalize: bool) -> DMatrix<f64> {
    let space = &system.space;
    let m = space.m();
    let to_phi = space.phi().transpose() * space.kernel().feature_matrix(space.anchors().points()).transpose();
    let scale = if normalize { 1.0 / system.c_d } else { 1.0 };
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..2 {
        let rows = system.downloads[i].coefficient_map() * &to_phi * scale;
        out.view_mut((i * m, 0), (m, 2 * m)).copy_from(&rows);
    }
    out
}

pub fn stage_operator(system: &System, params: &StageParams) -> Result<StageOperator, RkhsError> {
    let space = &system.space;
    let m = space.m();
    let recon = params.recon_rho();
    let mut learn = DMatrix::zeros(2 * m, 4 * m);
    for i in 0..2 {
        let agent = space.agent(i);
        let minv = agent.regularized_inverse(params.x[i], params.rho[i])?;
        let r = agent.range_projector() * minv;
        let rec = agent.gram() + DMatrix::identity(m, m) * recon[i];
        learn.view_mut((i * m, i * m), (m, m)).copy_from(&(&rec * &r * agent.gram() * params.rho[i]));
        learn.view_mut((i * m, (2 + i) * m), (m, m)).copy_from(&(&rec * &r));
    }
    let k = space.gram();
    let fuse = SymEig::new(&(k * k + k * params.rho[2])).pinv(SOLVE_RTOL) * k;
    let coefficients = download_rows(system, params.normalize_download) * fuse * learn;

    let dims = [space.agent(0).rank(), space.agent(1).rank()];
    let r = dims[0] + dims[1];
    let mut input = DMatrix::zeros(4 * m, r + 2);
    let mut output = DMatrix::zeros(r, 2 * m);
    let mut psi_scale = [0.0; 2];
    for i in 0..2 {
        let agent = space.agent(i);
        let off = if i == 0 { 0 } else { dims[0] };
        input.view_mut((i * m, off), (m, dims[i])).copy_from(&agent.from_orthonormal_map());
        output.view_mut((off, i * m), (dims[i], m)).copy_from(&agent.orthonormal_map());
        let kx = agent.kernel_column(params.x[i]);
        let s = kx.dot(&(agent.gram() * &kx)).max(0.0).sqrt();
        psi_scale[i] = s;
        if s > 0.0 && s.is_finite() {
            input.view_mut(((2 + i) * m, r + i), (m, 1)).copy_from(&(kx / s));
        }
    }
    let orthonormal = output * &coefficients * input;
    let norm = spectral_norm(&orthonormal);
    Ok(StageOperator { coefficients, orthonormal, norm, dims, psi_scale })
}

/// Norms of the three factors of a stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageFactors {
    /// `‖T̄(ϱ¹, ϱ²)‖` on the data slices.
    pub learning: f64,
    /// `‖T(ϱ)‖` on agent-space norms.
    pub fusion: f64,
    /// `‖T̂‖`.
    pub download: f64,
}

impl StageFactors {
    pub fn product(&self) -> f64 {
        self.learning * self.fusion * self.download
    }
}

pub fn stage_factors(system: &System, params: &StageParams) -> Result<StageFactors, RkhsError> {
    let space = &system.space;
    let mut learning: f64 = 0.0;
    for i in 0..2 {
        if let Some(w) = crate::agent_estimator::learning_operator_matrix(space.agent(i), params.x[i], params.rho[i])? {
            learning = learning.max(spectral_norm(&w));
        }
    }
    let fusion = fusion_operator_norm_with(space, params.rho[2], params.recon_rho(), DomainNorm::Agent)?.norm;
    let download = download_operator_norm(system, params.normalize_download);
    Ok(StageFactors { learning, fusion, download })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecord {
    pub n: usize,
    pub norm: f64,
    /// `Π_{k ≤ n} ‖𝕋ₖ‖`.
    pub product: f64,
    /// Running infimum of `|‖𝕋ₖ‖ − 1|` over `k ≤ n`.
    pub deviation_inf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormTrace {
    pub records: Vec<NormRecord>,
    pub sup_product: f64,
    /// Set when some product exceeds [`DIVERGENCE_LIMIT`].
    pub diverged: bool,
}

/// `‖𝕋ₙ‖` and cumulative products for `n = first .. first + horizon − 1`,
/// with data locations taken from `source`.
pub fn norm_trace(
    system: &System,
    config: &RunConfig,
    source: &DataSource,
    horizon: usize,
) -> Result<NormTrace, RkhsError> {
    let mut records = Vec::with_capacity(horizon);
    let mut product = 1.0;
    let mut deviation_inf = f64::INFINITY;
    let mut sup_product: f64 = 0.0;
    for step in 0..horizon {
        let n = config.first_iteration + step;
        let mut x = [0.0; 2];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = source
                .point(i, n)
                .ok_or_else(|| RkhsError::SingularSystem(format!("no data for agent {} at {n}", i + 1)))?
                .x;
        }
        let stage = stage_operator(system, &StageParams::from_config(config, n, x))?;
        product *= stage.norm;
        deviation_inf = deviation_inf.min((stage.norm - 1.0).abs());
        sup_product = sup_product.max(product);
        records.push(NormRecord { n, norm: stage.norm, product, deviation_inf });
    }
    Ok(NormTrace { records, sup_product, diverged: sup_product > DIVERGENCE_LIMIT })
}

/// `f ↦ A f + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMap {
    pub linear: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl StageMap {
    pub fn identity(n: usize) -> Self {
        StageMap { linear: DMatrix::identity(n, n), offset: DVector::zeros(n) }
    }

    pub fn apply(&self, f: &DVector<f64>) -> DVector<f64> {
        &self.linear * f + &self.offset
    }

    /// `A f + b` scaled to unit norm; `None` when it vanishes.
    pub fn apply_normalized(&self, f: &DVector<f64>) -> Option<DVector<f64>> {
        let g = self.apply(f);
        let n = g.norm();
        (n > 0.0 && n.is_finite()).then(|| g / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    /// Unit-norm state in orthonormal coordinates.
    pub point: DVector<f64>,
    /// `‖N(f) − f‖` for the normalized map `N`.
    pub residual: f64,
    pub iterations: usize,
    pub start: usize,
}

/// Iterates the normalized map from `starts` seeded random unit vectors and
/// returns the first point whose residual is within `tolerance`. Finding
/// nothing is a valid outcome.
pub fn fixed_point_probe(
    map: &StageMap,
    tolerance: f64,
    max_iters: usize,
    seed: u64,
    starts: usize,
) -> Option<FixedPoint> {
    let n = map.linear.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for start in 0..starts {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let Some(mut f) = (v.norm() > 0.0).then(|| v.normalize()) else { continue };
        for it in 0..=max_iters {
            let Some(g) = map.apply_normalized(&f) else { break };
            let residual = (&g - &f).norm();
            if residual <= tolerance {
                return Some(FixedPoint { point: f, residual, iterations: it, start });
            }
            f = g;
        }
    }
    None
}
