use std::sync::Arc;

use nalgebra::DVector;

use super::{gram, AnchorSet, Kernel, RkhsError, SpaceTag};
use crate::linalg::form_norm;

/// `f(·) = Σⱼ αⱼ K(·, x̄ⱼ)` over a fixed kernel and anchor set.
#[derive(Clone, Debug)]
pub struct RkhsFunction {
    coefficients: DVector<f64>,
    kernel: Arc<Kernel>,
    anchors: Arc<AnchorSet>,
    space: SpaceTag,
}

impl RkhsFunction {
    pub fn new(
        coefficients: DVector<f64>,
        kernel: Arc<Kernel>,
        anchors: Arc<AnchorSet>,
        space: SpaceTag,
    ) -> Result<Self, RkhsError> {
        if coefficients.len() != anchors.len() {
            return Err(RkhsError::LengthMismatch { got: coefficients.len(), expected: anchors.len() });
        }
        Ok(RkhsFunction { coefficients, kernel, anchors, space })
    }

    pub fn zero(kernel: Arc<Kernel>, anchors: Arc<AnchorSet>, space: SpaceTag) -> Self {
        let n = anchors.len();
        RkhsFunction { coefficients: DVector::zeros(n), kernel, anchors, space }
    }

    /// Kernel section `K(·, x̄ⱼ)`.
    pub fn section(kernel: Arc<Kernel>, anchors: Arc<AnchorSet>, space: SpaceTag, j: usize) -> Self {
        let mut f = Self::zero(kernel, anchors, space);
        f.coefficients[j] = 1.0;
        f
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn anchors(&self) -> &Arc<AnchorSet> {
        &self.anchors
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    /// Same basis, new coefficients.
    pub fn with_coefficients(&self, coefficients: DVector<f64>) -> Result<Self, RkhsError> {
        Self::new(coefficients, self.kernel.clone(), self.anchors.clone(), self.space)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.dot(&self.kernel.column(x, self.anchors.points()))
    }

    pub fn norm(&self) -> f64 {
        let g = gram(&self.kernel, &self.anchors, &self.anchors);
        form_norm(self.coefficients.dot(&(g * &self.coefficients)))
    }

    fn same_basis(&self, other: &RkhsFunction) -> bool {
        (Arc::ptr_eq(&self.kernel, &other.kernel) || self.kernel == other.kernel)
            && (Arc::ptr_eq(&self.anchors, &other.anchors) || self.anchors == other.anchors)
    }
}

/// `αᵀ 𝐆 β` for two functions over the same kernel and anchors.
pub fn inner_product(f: &RkhsFunction, g: &RkhsFunction) -> Result<f64, RkhsError> {
    if f.space != g.space {
        return Err(RkhsError::MixedSpace(f.space, g.space));
    }
    if !f.same_basis(g) {
        return Err(RkhsError::BasisMismatch);
    }
    let gm = gram(&f.kernel, &f.anchors, &f.anchors);
    Ok(f.coefficients.dot(&(gm * &g.coefficients)))
}
