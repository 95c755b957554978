//! Constraint families and the constraint-violation oracle.
//!
//! Constraints are concave functions with the feasible side `g_i(x) ≥ 0`.
//! A family exposes full evaluation (every row) for baselines and
//! diagnostics; the learner only ever sees [`evaluate_violations`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the cost and constraint function classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionClassParams {
    /// Feasible sets are contained in the ball of this radius.
    pub radius: f64,
    /// Bound on cost gradient norms over the ball of radius `4·radius`.
    pub cost_lipschitz: f64,
    /// Bound on constraint gradient norms over the same ball.
    pub constraint_lipschitz: f64,
    /// Smoothness constant of the constraints.
    pub smoothness: f64,
}

impl FunctionClassParams {
    pub fn new(
        radius: f64,
        cost_lipschitz: f64,
        constraint_lipschitz: f64,
        smoothness: f64,
    ) -> Result<Self> {
        let params = Self {
            radius,
            cost_lipschitz,
            constraint_lipschitz,
            smoothness,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.radius, self.cost_lipschitz, self.constraint_lipschitz];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::InvalidArgument(
                "radius and Lipschitz constants must be finite and positive".into(),
            ));
        }
        if !(self.smoothness.is_finite() && self.smoothness >= 0.0) {
            return Err(Error::InvalidArgument(
                "smoothness must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// `L_G/R + c·β_G`, the bracket that recurs in the feasibility bounds.
    pub fn constraint_bracket(&self, smoothness_weight: f64) -> f64 {
        self.constraint_lipschitz / self.radius + smoothness_weight * self.smoothness
    }

    /// The step size parameter `α = L_F/R`.
    pub fn default_alpha(&self) -> f64 {
        self.cost_lipschitz / self.radius
    }
}

/// Violated rows at a point: `I(x) = {i | g_i(x) ≤ 0}` with values and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub indices: Vec<usize>,
    pub values: DVector<f64>,
    /// Column `c` is the gradient of row `indices[c]`.
    pub gradients: DMatrix<f64>,
}

impl ViolationReport {
    pub fn empty(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: DVector::zeros(0),
            gradients: DMatrix::zeros(dim, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gradients.nrows()
    }
}

/// A finite family of concave constraints `g_i : ℝⁿ → ℝ`.
pub trait ConstraintFamily {
    fn dim(&self) -> usize;

    /// Number of rows `m`.
    fn len(&self) -> usize;

    fn value(&self, index: usize, x: &DVector<f64>) -> f64;

    fn gradient(&self, index: usize, x: &DVector<f64>) -> DVector<f64>;

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.len(), |i, _| self.value(i, x))
    }

    /// All `m` gradients as columns.
    fn gradients(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim(), self.len());
        for i in 0..self.len() {
            out.set_column(i, &self.gradient(i, x));
        }
        out
    }

    fn min_value(&self, x: &DVector<f64>) -> f64 {
        self.values(x).iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The violation oracle: exactly the rows with `g_i(x) ≤ 0`, ascending.
pub fn evaluate_violations(
    family: &dyn ConstraintFamily,
    x: &DVector<f64>,
) -> Result<ViolationReport> {
    if x.len() != family.dim() {
        return Err(Error::DimensionMismatch {
            what: "oracle query point",
            expected: family.dim(),
            found: x.len(),
        });
    }
    let values = family.values(x);
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteConstraint { index });
    }
    let indices: Vec<usize> = (0..values.len()).filter(|&i| values[i] <= 0.0).collect();
    let mut gradients = DMatrix::zeros(family.dim(), indices.len());
    for (c, &i) in indices.iter().enumerate() {
        let grad = family.gradient(i, x);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteConstraint { index: i });
        }
        gradients.set_column(c, &grad);
    }
    let values = DVector::from_iterator(indices.len(), indices.iter().map(|&i| values[i]));
    Ok(ViolationReport {
        indices,
        values,
        gradients,
    })
}

/// `g_i(x) = intercept_i + slope_iᵀx`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineFamily {
    pub intercepts: DVector<f64>,
    /// Row `i` is `slope_i`.
    pub slopes: DMatrix<f64>,
}

impl AffineFamily {
    pub fn new(intercepts: DVector<f64>, slopes: DMatrix<f64>) -> Result<Self> {
        if intercepts.len() != slopes.nrows() {
            return Err(Error::DimensionMismatch {
                what: "affine intercepts",
                expected: slopes.nrows(),
                found: intercepts.len(),
            });
        }
        Ok(Self { intercepts, slopes })
    }

    /// `x_i ≥ 0` for every coordinate.
    pub fn nonnegativity(dim: usize) -> Self {
        Self {
            intercepts: DVector::zeros(dim),
            slopes: DMatrix::identity(dim, dim),
        }
    }

    /// Largest slope norm; the family's gradient bound.
    pub fn max_slope_norm(&self) -> f64 {
        self.slopes
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }
}

impl ConstraintFamily for AffineFamily {
    fn dim(&self) -> usize {
        self.slopes.ncols()
    }

    fn len(&self) -> usize {
        self.intercepts.len()
    }

    fn value(&self, index: usize, x: &DVector<f64>) -> f64 {
        self.intercepts[index] + self.slopes.row(index).transpose().dot(x)
    }

    fn gradient(&self, index: usize, _x: &DVector<f64>) -> DVector<f64> {
        self.slopes.row(index).transpose()
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.intercepts + &self.slopes * x
    }

    fn gradients(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.slopes.transpose()
    }
}

/// Ball constraints `g_i(x) = ½(ρ_i² − ‖x − z_i‖²)`: concave and 1-smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct BallFamily {
    pub centers: Vec<DVector<f64>>,
    pub radii: Vec<f64>,
}

impl BallFamily {
    pub fn new(centers: Vec<DVector<f64>>, radii: Vec<f64>) -> Result<Self> {
        if centers.len() != radii.len() || centers.is_empty() {
            return Err(Error::InvalidArgument(
                "ball family needs one radius per center".into(),
            ));
        }
        let dim = centers[0].len();
        if centers.iter().any(|c| c.len() != dim) {
            return Err(Error::InvalidArgument("ball centers differ in dimension".into()));
        }
        Ok(Self { centers, radii })
    }
}

impl ConstraintFamily for BallFamily {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn len(&self) -> usize {
        self.centers.len()
    }

    fn value(&self, index: usize, x: &DVector<f64>) -> f64 {
        0.5 * (self.radii[index].powi(2) - (x - &self.centers[index]).norm_squared())
    }

    fn gradient(&self, index: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.centers[index] - x
    }
}

/// Rows of several families concatenated in order.
pub struct StackedFamily<'a> {
    parts: Vec<&'a dyn ConstraintFamily>,
}

impl<'a> StackedFamily<'a> {
    pub fn new(parts: Vec<&'a dyn ConstraintFamily>) -> Result<Self> {
        if let Some(first) = parts.first() {
            let dim = first.dim();
            if let Some(bad) = parts.iter().find(|p| p.dim() != dim) {
                return Err(Error::DimensionMismatch {
                    what: "stacked family",
                    expected: dim,
                    found: bad.dim(),
                });
            }
        } else {
            return Err(Error::InvalidArgument("stacked family needs a part".into()));
        }
        Ok(Self { parts })
    }

    fn locate(&self, mut index: usize) -> (&'a dyn ConstraintFamily, usize) {
        for part in &self.parts {
            if index < part.len() {
                return (*part, index);
            }
            index -= part.len();
        }
        panic!("constraint index out of range");
    }
}

impl ConstraintFamily for StackedFamily<'_> {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    fn len(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    fn value(&self, index: usize, x: &DVector<f64>) -> f64 {
        let (part, local) = self.locate(index);
        part.value(local, x)
    }

    fn gradient(&self, index: usize, x: &DVector<f64>) -> DVector<f64> {
        let (part, local) = self.locate(index);
        part.gradient(local, x)
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        let all: Vec<f64> = self
            .parts
            .iter()
            .flat_map(|p| p.values(x).iter().copied().collect::<Vec<_>>())
            .collect();
        DVector::from_vec(all)
    }
}

/// `g(x) = ½(R² − ‖x‖²)` and its gradient `−x`.
pub fn hypersphere_constraint(x: &DVector<f64>, radius: f64) -> (f64, DVector<f64>) {
    (0.5 * (radius * radius - x.norm_squared()), -x)
}

/// Running average of per-round affine constraints,
/// `g_t(x) = (1/t) Σ_{ℓ≤t} g̃_ℓ(x)`, stored as averaged coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedConstraintState {
    pub round: usize,
    pub average: AffineFamily,
}

impl AveragedConstraintState {
    /// State after the first round.
    pub fn new(first: AffineFamily) -> Self {
        Self {
            round: 1,
            average: first,
        }
    }

    /// `g_{t+1} = g_t + (g̃_{t+1} − g_t)/(t+1)`, applied coefficient-wise.
    pub fn update(&mut self, next: &AffineFamily) -> Result<()> {
        if next.slopes.shape() != self.average.slopes.shape() {
            return Err(Error::DimensionMismatch {
                what: "averaged constraint update",
                expected: self.average.slopes.len(),
                found: next.slopes.len(),
            });
        }
        let weight = 1.0 / (self.round as f64 + 1.0);
        self.average.intercepts += (&next.intercepts - &self.average.intercepts) * weight;
        self.average.slopes += (&next.slopes - &self.average.slopes) * weight;
        self.round += 1;
        Ok(())
    }

    /// Update where only the intercepts change (shared slopes).
    pub fn update_intercepts(&mut self, next: &DVector<f64>) -> Result<()> {
        if next.len() != self.average.intercepts.len() {
            return Err(Error::DimensionMismatch {
                what: "averaged constraint update",
                expected: self.average.intercepts.len(),
                found: next.len(),
            });
        }
        let weight = 1.0 / (self.round as f64 + 1.0);
        self.average.intercepts += (next - &self.average.intercepts) * weight;
        self.round += 1;
        Ok(())
    }
}

/// Functional form of [`AveragedConstraintState::update`].
pub fn averaged_update(
    mut state: AveragedConstraintState,
    next: &AffineFamily,
) -> Result<AveragedConstraintState> {
    state.update(next)?;
    Ok(state)
}

impl ConstraintFamily for AveragedConstraintState {
    fn dim(&self) -> usize {
        self.average.dim()
    }

    fn len(&self) -> usize {
        self.average.len()
    }

    fn value(&self, index: usize, x: &DVector<f64>) -> f64 {
        self.average.value(index, x)
    }

    fn gradient(&self, index: usize, x: &DVector<f64>) -> DVector<f64> {
        self.average.gradient(index, x)
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        self.average.values(x)
    }

    fn gradients(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.average.gradients(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvcCheck {
    /// `max_x ‖g_{t+1}(x) − g_t(x)‖_∞` over the samples.
    pub max_diff: f64,
    /// `98/(t+16)·[L_G/R + 3β_G]·R²`.
    pub bound: f64,
    pub passes: bool,
    /// `max_diff·(t+1)`; bounded in `t` iff the drift is `O(1/t)`.
    pub scaled_diff: f64,
}

/// The decay-rate bound on consecutive constraint families.
pub fn tvc_bound(params: &FunctionClassParams, round: usize) -> f64 {
    98.0 / (round as f64 + 16.0) * params.constraint_bracket(3.0) * params.radius.powi(2)
}

/// Compare consecutive families on sample points inside the ball of radius `4R`.
pub fn tvc_decay_check(
    previous: &dyn ConstraintFamily,
    next: &dyn ConstraintFamily,
    samples: &[DVector<f64>],
    params: &FunctionClassParams,
    round: usize,
) -> Result<TvcCheck> {
    if round == 0 {
        return Err(Error::InvalidArgument("round must be at least 1".into()));
    }
    let domain = 4.0 * params.radius * (1.0 + 1e-12);
    let mut max_diff = 0.0_f64;
    for x in samples {
        if x.norm() > domain {
            return Err(Error::SampleOutsideDomain);
        }
        let diff = (next.values(x) - previous.values(x)).amax();
        max_diff = max_diff.max(diff);
    }
    let bound = tvc_bound(params, round);
    Ok(TvcCheck {
        max_diff,
        bound,
        passes: max_diff <= bound,
        scaled_diff: max_diff * (round as f64 + 1.0),
    })
}
