use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::RkhsError;

/// Relative singular-value tolerance for numerical rank decisions on feature matrices.
pub const FEATURE_RANK_RTOL: f64 = 1e-10;

/// A scalar feature function.
#[derive(Clone)]
pub enum Feature {
    Constant,
    /// `x^k`
    Monomial(u32),
    /// `e^{x}`
    ExpPos,
    /// `e^{-x}`
    ExpNeg,
    /// Arbitrary closure, mainly for tests and experiments.
    Custom { name: String, f: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl Feature {
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Feature::Custom { name: name.into(), f: Arc::new(f) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Feature::Constant => 1.0,
            Feature::Monomial(k) => x.powi(*k as i32),
            Feature::ExpPos => x.exp(),
            Feature::ExpNeg => (-x).exp(),
            Feature::Custom { f, .. } => f(x),
        }
    }

    /// Name in the configuration grammar.
    pub fn name(&self) -> String {
        match self {
            Feature::Constant => "constant".into(),
            Feature::Monomial(k) => format!("monomial({k})"),
            Feature::ExpPos => "exp(+1)".into(),
            Feature::ExpNeg => "exp(-1)".into(),
            Feature::Custom { name, .. } => name.clone(),
        }
    }
}

impl fmt::Debug for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl PartialEq for Feature {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Feature::Custom { f: a, .. }, Feature::Custom { f: b, .. }) => Arc::ptr_eq(a, b),
            (Feature::Custom { .. }, _) | (_, Feature::Custom { .. }) => false,
            _ => self.name() == other.name(),
        }
    }
}

/// Linearly independent features `φ₁..φ_d` with a common scale `s`;
/// the induced kernel is `s · Σ φⱼ(x) φⱼ(y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    features: Vec<Feature>,
    scale: f64,
}

impl FeatureSet {
    /// Builds a feature set and checks independence on `grid`.
    pub fn new(features: Vec<Feature>, grid: &[f64]) -> Result<Self, RkhsError> {
        let set = Self::unchecked(features)?;
        let rank = set.numerical_rank(grid);
        if rank < set.dimension() {
            return Err(RkhsError::DependentFeatures { rank, dim: set.dimension() });
        }
        Ok(set)
    }

    /// Builds a feature set without the independence check.
    pub fn unchecked(features: Vec<Feature>) -> Result<Self, RkhsError> {
        if features.is_empty() {
            return Err(RkhsError::EmptyFeatureSet);
        }
        Ok(FeatureSet { features, scale: 1.0 })
    }

    pub fn dimension(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Same features with the kernel multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Self {
        FeatureSet { features: self.features.clone(), scale: self.scale * s }
    }

    /// Feature vector `√s · φ(x)`.
    pub fn eval(&self, x: f64) -> DVector<f64> {
        let c = self.scale.sqrt();
        DVector::from_iterator(self.features.len(), self.features.iter().map(|f| c * f.eval(x)))
    }

    /// Rows are feature vectors at `points`.
    pub fn matrix(&self, points: &[f64]) -> DMatrix<f64> {
        let c = self.scale.sqrt();
        DMatrix::from_fn(points.len(), self.features.len(), |i, j| c * self.features[j].eval(points[i]))
    }

    pub fn numerical_rank(&self, grid: &[f64]) -> usize {
        matrix_rank(&self.matrix(grid), FEATURE_RANK_RTOL)
    }
}

/// Numerical rank from singular values relative to the largest.
pub fn matrix_rank(a: &DMatrix<f64>, rtol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(0.0f64, |m, &v| m.max(v));
    sv.iter().filter(|&&v| v > rtol * top && v > 0.0).count()
}
