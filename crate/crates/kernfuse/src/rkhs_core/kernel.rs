use nalgebra::{DMatrix, DVector};

use super::FeatureSet;

/// A finite-rank kernel: either built from features or the sum of two kernels.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    Feature(FeatureSet),
    Sum(Box<Kernel>, Box<Kernel>),
}

impl Kernel {
    pub fn sum(a: Kernel, b: Kernel) -> Kernel {
        Kernel::Sum(Box::new(a), Box::new(b))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Kernel::Feature(fs) => fs.eval(x).dot(&fs.eval(y)),
            Kernel::Sum(a, b) => a.eval(x, y) + b.eval(x, y),
        }
    }

    /// Length of the stacked feature vector.
    pub fn feature_dim(&self) -> usize {
        match self {
            Kernel::Feature(fs) => fs.dimension(),
            Kernel::Sum(a, b) => a.feature_dim() + b.feature_dim(),
        }
    }

    /// Stacked feature vector; `K(x, y) = φ(x)·φ(y)`.
    pub fn features(&self, x: f64) -> DVector<f64> {
        match self {
            Kernel::Feature(fs) => fs.eval(x),
            Kernel::Sum(a, b) => {
                let (fa, fb) = (a.features(x), b.features(x));
                DVector::from_iterator(fa.len() + fb.len(), fa.iter().chain(fb.iter()).copied())
            }
        }
    }

    /// Rows are stacked feature vectors at `points`.
    pub fn feature_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        let d = self.feature_dim();
        let mut out = DMatrix::zeros(points.len(), d);
        for (i, &x) in points.iter().enumerate() {
            out.row_mut(i).copy_from(&self.features(x).transpose());
        }
        out
    }

    /// Kernel column `[K(x, aⱼ)]ⱼ`.
    pub fn column(&self, x: f64, anchors: &[f64]) -> DVector<f64> {
        DVector::from_iterator(anchors.len(), anchors.iter().map(|&a| self.eval(x, a)))
    }

    /// Same kernel multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Kernel {
        match self {
            Kernel::Feature(fs) => Kernel::Feature(fs.scaled(s)),
            Kernel::Sum(a, b) => Kernel::sum(a.scaled(s), b.scaled(s)),
        }
    }
}
