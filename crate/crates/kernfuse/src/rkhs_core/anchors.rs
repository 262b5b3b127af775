use super::{gram, Kernel, RkhsError, SpaceTag};
use crate::linalg::{condition_number, SymEig};

/// Relative eigenvalue floor for an anchor Gram matrix to count as nonsingular.
pub const ANCHOR_RTOL: f64 = 1e-10;

/// Distinct points whose kernel sections form a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    points: Vec<f64>,
    space: SpaceTag,
}

impl AnchorSet {
    pub fn new(points: Vec<f64>, space: SpaceTag) -> Result<Self, RkhsError> {
        if points.is_empty() {
            return Err(RkhsError::EmptyAnchors);
        }
        for (i, &p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(RkhsError::NonFinitePoint(p));
            }
            if points[..i].contains(&p) {
                return Err(RkhsError::DuplicateAnchor(p));
            }
        }
        Ok(AnchorSet { points, space })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn space(&self) -> SpaceTag {
        self.space
    }

    pub fn retagged(&self, space: SpaceTag) -> Self {
        AnchorSet { points: self.points.clone(), space }
    }

    /// Union with another set, keeping order (self first).
    pub fn concat(&self, other: &AnchorSet, space: SpaceTag) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        AnchorSet { points, space }
    }

    /// Checks that the Gram matrix of `k` at these points is nonsingular and
    /// returns its condition number.
    pub fn check_basis(&self, k: &Kernel) -> Result<f64, RkhsError> {
        let eig = SymEig::new(&gram(k, self, self));
        if eig.min() <= ANCHOR_RTOL * eig.max() {
            return Err(RkhsError::SingularSystem(format!(
                "anchor Gram matrix is singular (min eigenvalue {:.3e}, max {:.3e})",
                eig.min(),
                eig.max()
            )));
        }
        Ok(condition_number(&eig))
    }

    /// Points shared with another anchor set.
    pub fn overlap(&self, other: &AnchorSet) -> Vec<f64> {
        self.points.iter().copied().filter(|p| other.points.contains(p)).collect()
    }
}

/// Greedy anchor choice together with the condition number of its Gram matrix.
#[derive(Clone, Debug)]
pub struct AnchorSelection {
    pub anchors: AnchorSet,
    pub condition: f64,
}

/// Picks `m` points from `pool` one at a time, each time taking the candidate
/// that maximizes the smallest eigenvalue of the growing Gram block. Ties go to
/// the earlier candidate, so the result depends only on pool order.
pub fn select_anchors(k: &Kernel, pool: &[f64], m: usize, space: SpaceTag) -> Result<AnchorSelection, RkhsError> {
    let mut chosen: Vec<f64> = Vec::with_capacity(m);
    while chosen.len() < m {
        let mut best: Option<(f64, f64)> = None;
        for &c in pool {
            if chosen.contains(&c) || !c.is_finite() {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(c);
            let g = nalgebra::DMatrix::from_fn(trial.len(), trial.len(), |i, j| k.eval(trial[i], trial[j]));
            let eig = SymEig::new(&g);
            if eig.min() <= ANCHOR_RTOL * eig.max() {
                continue;
            }
            if best.is_none_or(|(_, s)| eig.min() > s) {
                best = Some((c, eig.min()));
            }
        }
        match best {
            Some((c, _)) => chosen.push(c),
            None => return Err(RkhsError::InsufficientRank { found: chosen.len(), needed: m }),
        }
    }
    let anchors = AnchorSet::new(chosen, space)?;
    let condition = anchors.check_basis(k)?;
    Ok(AnchorSelection { anchors, condition })
}
