//! Relation-specific reflections `W = I − 2rrᵀ` and path-relation
//! composition. Nothing here materializes a d×d matrix.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Real};

/// Below this norm a Hadamard composition is treated as degenerate.
pub const COMPOSE_EPS: f64 = 1e-8;

/// A relation vector with unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRelationVector<F>(Vec<F>);

impl<F: Real> UnitRelationVector<F> {
    /// Normalizes `r`. Returns `None` for a zero or non-finite vector.
    pub fn new(r: &[F]) -> Option<Self> {
        let n = norm(r);
        if !(n > F::zero()) || !n.is_finite() {
            return None;
        }
        Some(Self(r.iter().map(|x| *x / n).collect()))
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }
}

/// Applies the reflection `I − 2rrᵀ` to `x`. The reflection is symmetric, so
/// `transposed` does not change the result.
pub fn householder_apply<F: Real>(
    r: &UnitRelationVector<F>,
    x: &[F],
    transposed: bool,
) -> Result<Vec<F>> {
    let _ = transposed;
    if r.dim() != x.len() {
        return Err(Error::Shape(format!(
            "reflection of dim {} applied to vector of dim {}",
            r.dim(),
            x.len()
        )));
    }
    Ok(reflect(r.as_slice(), x))
}

/// `x − 2 r (rᵀx)` without checks.
pub(crate) fn reflect<F: Real>(r: &[F], x: &[F]) -> Vec<F> {
    let two_proj = F::of(2.0) * dot(r, x);
    x.iter().zip(r).map(|(xi, ri)| *xi - two_proj * *ri).collect()
}

/// Relation of the path `parent ∘ edge`: the normalized Hadamard product,
/// falling back to the normalized edge relation when the product vanishes.
pub fn compose_relation<F: Real>(r_parent: &[F], r_edge: &[F]) -> Result<UnitRelationVector<F>> {
    if r_parent.len() != r_edge.len() {
        return Err(Error::Shape(format!(
            "composing relations of dims {} and {}",
            r_parent.len(),
            r_edge.len()
        )));
    }
    let h: Vec<F> = r_parent.iter().zip(r_edge).map(|(a, b)| *a * *b).collect();
    if norm(&h) >= F::of(COMPOSE_EPS) {
        if let Some(u) = UnitRelationVector::new(&h) {
            return Ok(u);
        }
    }
    UnitRelationVector::new(r_edge)
        .ok_or_else(|| Error::NonFinite("edge relation vector has zero norm".into()))
}
