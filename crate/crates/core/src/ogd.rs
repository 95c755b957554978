//! Projected online gradient descent over a fully known feasible set.

use nalgebra::{DMatrix, DVector};

use crate::constraints::AffineFamily;
use crate::error::{Error, Result};
use crate::learner::EqualityRows;
use crate::projection::{project_warm, Polyhedron, ProjectionOptions, ProjectionResult};

/// `{x | g_i(x) ≥ 0 for every row, e_jᵀx = d_j}`, optionally intersected with the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSetDescription {
    pub inequalities: AffineFamily,
    pub equalities: Option<EqualityRows>,
    /// Adds `Σx_i = 1` and `x ≥ 0`.
    pub simplex: bool,
}

impl FeasibleSetDescription {
    pub fn unconstrained(dim: usize) -> Self {
        Self {
            inequalities: AffineFamily::new(DVector::zeros(0), DMatrix::zeros(0, dim))
                .expect("empty family"),
            equalities: None,
            simplex: false,
        }
    }

    pub fn simplex(dim: usize) -> Self {
        Self {
            simplex: true,
            ..Self::unconstrained(dim)
        }
    }

    pub fn dim(&self) -> usize {
        self.inequalities.slopes.ncols()
    }

    /// The set as a polyhedron in `x`: affine rows first, then the simplex facets.
    pub fn polyhedron(&self) -> Result<Polyhedron> {
        let n = self.dim();
        let m = self.inequalities.intercepts.len();
        let facets = if self.simplex { n } else { 0 };
        let mut normals = DMatrix::zeros(n, m + facets);
        normals
            .columns_mut(0, m)
            .copy_from(&self.inequalities.slopes.transpose());
        let mut offsets = DVector::zeros(m + facets);
        offsets.rows_mut(0, m).copy_from(&(-&self.inequalities.intercepts));
        for i in 0..facets {
            normals[(i, m + i)] = 1.0;
        }

        let (eq_normals, eq_offsets) = match &self.equalities {
            Some(rows) => {
                if rows.normals.nrows() != n {
                    return Err(Error::DimensionMismatch {
                        what: "equality rows",
                        expected: n,
                        found: rows.normals.nrows(),
                    });
                }
                (rows.normals.clone(), rows.offsets.clone())
            }
            None => (DMatrix::zeros(n, 0), DVector::zeros(0)),
        };
        let mut poly = Polyhedron::with_equalities(normals, offsets, eq_normals, eq_offsets)?;
        if self.simplex {
            poly.push_equality(&DVector::from_element(n, 1.0), 1.0);
        }
        Ok(poly)
    }

    pub fn num_rows(&self) -> usize {
        let n = self.dim();
        self.inequalities.intercepts.len()
            + self.equalities.as_ref().map_or(0, EqualityRows::len)
            + if self.simplex { n + 1 } else { 0 }
    }
}

/// `Proj_C(x − η∇f)`.
pub fn ogd_step(
    x: &DVector<f64>,
    gradient: &DVector<f64>,
    eta: f64,
    feasible: &FeasibleSetDescription,
) -> Result<DVector<f64>> {
    Ok(ogd_projection(x, gradient, eta, feasible, &[])?.v)
}

/// [`ogd_step`] with a warm start, returning the full projection result.
pub fn ogd_projection(
    x: &DVector<f64>,
    gradient: &DVector<f64>,
    eta: f64,
    feasible: &FeasibleSetDescription,
    warm: &[usize],
) -> Result<ProjectionResult> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    if x.len() != feasible.dim() || gradient.len() != x.len() {
        return Err(Error::DimensionMismatch {
            what: "ogd step",
            expected: feasible.dim(),
            found: if x.len() != feasible.dim() { x.len() } else { gradient.len() },
        });
    }
    let y = x - gradient * eta;
    let poly = feasible.polyhedron()?;
    project_warm(&y, &poly, &ProjectionOptions::default(), warm)
}
