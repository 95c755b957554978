//! The velocity-projection learner.
//!
//! Each round builds `V_α(x_t) = {v | ∇g_i(x_t)ᵀv ≥ −α g_i(x_t), i ∈ I(x_t)}`
//! from the oracle report, optionally adds the hypersphere row, projects
//! `−∇f_t(x_t)` onto it and moves `x_{t+1} = x_t + η_t v_t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{hypersphere_constraint, FunctionClassParams, ViolationReport};
use crate::error::{Error, Result};
use crate::projection::{project_warm, Polyhedron, ProjectionOptions};

/// Row id used for the hypersphere row when carrying warm-start information.
const HYPERSPHERE_ROW: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub alpha: f64,
    /// `d` in `η_t = 1/(α√(t+d))`.
    pub step_offset: u32,
    /// Add the hypersphere row when `‖x_t‖ > R`.
    pub augment: bool,
    pub params: FunctionClassParams,
}

impl LearnerConfig {
    /// `α = L_F/R`, `d = 0`, plain polyhedron.
    pub fn time_invariant(params: FunctionClassParams) -> Self {
        Self {
            alpha: params.default_alpha(),
            step_offset: 0,
            augment: false,
            params,
        }
    }

    /// `α = L_F/R`, `d = 15`, augmented polyhedron.
    pub fn time_varying(params: FunctionClassParams) -> Self {
        Self {
            alpha: params.default_alpha(),
            step_offset: 15,
            augment: true,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        self.params.validate()
    }

    /// Whether the configuration matches the hypotheses of the bounds in [`theorem_bounds`].
    pub fn is_honest(&self) -> bool {
        let alpha = self.params.default_alpha();
        (self.alpha - alpha).abs() <= 1e-12 * alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub x: DVector<f64>,
    /// Round index, starting at 1.
    pub t: usize,
}

impl LearnerState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, t: 1 }
    }
}

/// Value and gradient of `f_t` at the played point.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSample {
    pub value: f64,
    pub gradient: DVector<f64>,
}

/// Equality rows `e_jᵀv = d_j` added to every velocity polyhedron.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualityRows {
    pub normals: DMatrix<f64>,
    pub offsets: DVector<f64>,
}

impl EqualityRows {
    /// `Σ v_i = 0`, which keeps `Σ x_i` constant along the trajectory.
    pub fn simplex_sum(dim: usize) -> Self {
        Self {
            normals: DMatrix::from_element(dim, 1, 1.0),
            offsets: DVector::zeros(1),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub eta: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// `v_t + ∇f_t(x_t)`.
    pub r: Vec<f64>,
    pub cost: f64,
    /// `|I(x_t)|`.
    pub violated_count: usize,
    pub hypersphere_active: bool,
    pub kkt_residual: f64,
    /// Inequality plus equality rows handed to the projection.
    pub projection_rows: usize,
}

impl StepRecord {
    pub fn velocity_norm(&self) -> f64 {
        self.v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

pub fn step_size(t: usize, alpha: f64, offset: u32) -> f64 {
    1.0 / (alpha * ((t + offset as usize) as f64).sqrt())
}

/// One row `∇g_i(x_t)ᵀv ≥ −α g_i(x_t)` per reported index.
pub fn build_velocity_polyhedron(report: &ViolationReport, alpha: f64) -> Polyhedron {
    Polyhedron {
        normals: report.gradients.clone(),
        offsets: -&report.values * alpha,
        eq_normals: DMatrix::zeros(report.dim(), 0),
        eq_offsets: DVector::zeros(0),
    }
}

/// Adds `−x_tᵀv ≥ α(‖x_t‖² − R²)/2` when `‖x_t‖ > R`; unchanged otherwise.
pub fn augment_with_hypersphere(
    mut poly: Polyhedron,
    x: &DVector<f64>,
    radius: f64,
    alpha: f64,
) -> Polyhedron {
    if x.norm() <= radius {
        return poly;
    }
    let (value, gradient) = hypersphere_constraint(x, radius);
    poly.push_inequality(&gradient, -alpha * value);
    poly
}

/// A single learner update from explicit inputs.
pub fn cvvpro_step(
    state: &LearnerState,
    cost: &CostSample,
    report: &ViolationReport,
    config: &LearnerConfig,
    extra_rows: Option<&EqualityRows>,
) -> Result<(LearnerState, StepRecord)> {
    let mut learner = CvvPro::new(*config, state.x.clone())?;
    learner.state.t = state.t;
    if let Some(rows) = extra_rows {
        learner = learner.with_equalities(rows.clone());
    }
    let record = learner.step(cost, report)?;
    Ok((learner.state, record))
}

/// Stateful learner that warm-starts each projection from the rows active
/// in the previous round.
#[derive(Debug, Clone)]
pub struct CvvPro {
    pub config: LearnerConfig,
    pub state: LearnerState,
    equalities: Option<EqualityRows>,
    previous_active: Vec<usize>,
    options: ProjectionOptions,
}

impl CvvPro {
    pub fn new(config: LearnerConfig, x1: DVector<f64>) -> Result<Self> {
        config.validate()?;
        if x1.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial decision must be finite".into()));
        }
        Ok(Self {
            config,
            state: LearnerState::new(x1),
            equalities: None,
            previous_active: Vec::new(),
            options: ProjectionOptions::default(),
        })
    }

    pub fn with_equalities(mut self, rows: EqualityRows) -> Self {
        self.equalities = Some(rows);
        self
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.state.x
    }

    /// The polyhedron the next [`CvvPro::step`] would solve for this report.
    pub fn velocity_polyhedron(&self, report: &ViolationReport) -> (Polyhedron, bool) {
        let base = build_velocity_polyhedron(report, self.config.alpha);
        let before = base.num_inequalities();
        let mut poly = if self.config.augment {
            augment_with_hypersphere(
                base,
                &self.state.x,
                self.config.params.radius,
                self.config.alpha,
            )
        } else {
            base
        };
        let hypersphere_active = poly.num_inequalities() > before;
        if let Some(rows) = &self.equalities {
            for j in 0..rows.len() {
                poly.push_equality(&rows.normals.column(j).into_owned(), rows.offsets[j]);
            }
        }
        (poly, hypersphere_active)
    }

    pub fn step(&mut self, cost: &CostSample, report: &ViolationReport) -> Result<StepRecord> {
        let t = self.state.t;
        self.step_inner(cost, report).map_err(|e| e.at_round(t))
    }

    fn step_inner(&mut self, cost: &CostSample, report: &ViolationReport) -> Result<StepRecord> {
        let n = self.state.x.len();
        if cost.gradient.len() != n || report.dim() != n {
            return Err(Error::DimensionMismatch {
                what: "learner step",
                expected: n,
                found: if cost.gradient.len() != n {
                    cost.gradient.len()
                } else {
                    report.dim()
                },
            });
        }
        let (poly, hypersphere_active) = self.velocity_polyhedron(report);

        let row_ids: Vec<usize> = report
            .indices
            .iter()
            .copied()
            .chain(hypersphere_active.then_some(HYPERSPHERE_ROW))
            .collect();
        let warm: Vec<usize> = row_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| self.previous_active.binary_search(id).is_ok())
            .map(|(row, _)| row)
            .collect();

        let target = -&cost.gradient;
        let projection = project_warm(&target, &poly, &self.options, &warm)?;
        let mut active: Vec<usize> = projection.active_set.iter().map(|&i| row_ids[i]).collect();
        active.sort_unstable();
        self.previous_active = active;

        let eta = step_size(self.state.t, self.config.alpha, self.config.step_offset);
        let v = projection.v;
        let r = &v + &cost.gradient;
        let record = StepRecord {
            t: self.state.t,
            eta,
            x: self.state.x.iter().copied().collect(),
            v: v.iter().copied().collect(),
            r: r.iter().copied().collect(),
            cost: cost.value,
            violated_count: report.len(),
            hypersphere_active,
            kkt_residual: projection.kkt_residual,
            projection_rows: poly.num_rows(),
        };
        self.state.x += &v * eta;
        self.state.t += 1;
        Ok(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// `18 L_F R √T` (time-invariant constraints, bounded iterates).
    Thm1Regret,
    /// `−8[L_G/R + 2β_G]R²/√t`.
    Thm1Feasibility,
    /// `246 L_F R √T` (time-varying constraints, augmented polyhedron).
    Thm2Regret,
    /// `−265[L_G/R + 4β_G]R²/√(t+15)`.
    Thm2Feasibility,
    /// `−[265 L_G/R + 927 β_G]R²/√(t+15)`, a second proved form of the same bound.
    Thm2FeasibilityLoose,
    /// `−27 R²/√(t+15)` for the hypersphere row.
    Thm2Attraction,
    /// `−21[L_G/R + 3β_G]R²/√(t+15)` (time-invariant constraints, augmented polyhedron).
    AugmentedFeasibility,
    /// `‖v_t‖ ≤ 7 L_F`.
    VelocityBound,
}

impl Theorem {
    pub const ALL: [Theorem; 8] = [
        Theorem::Thm1Regret,
        Theorem::Thm1Feasibility,
        Theorem::Thm2Regret,
        Theorem::Thm2Feasibility,
        Theorem::Thm2FeasibilityLoose,
        Theorem::Thm2Attraction,
        Theorem::AugmentedFeasibility,
        Theorem::VelocityBound,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Theorem::Thm1Regret => "thm1_regret",
            Theorem::Thm1Feasibility => "thm1_feasibility",
            Theorem::Thm2Regret => "thm2_regret",
            Theorem::Thm2Feasibility => "thm2_feasibility",
            Theorem::Thm2FeasibilityLoose => "thm2_feasibility_loose",
            Theorem::Thm2Attraction => "thm2_attraction",
            Theorem::AugmentedFeasibility => "augmented_feasibility",
            Theorem::VelocityBound => "velocity_bound",
        }
    }
}

impl std::str::FromStr for Theorem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Theorem::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTheorem(s.to_string()))
    }
}

impl std::fmt::Display for Theorem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    /// `T` for regret bounds, `t` for per-round bounds.
    pub horizon: usize,
    pub value: f64,
    /// Leading numeric constant of the bound.
    pub constant: f64,
    /// Uniform velocity bound assumed by the analysis.
    pub velocity_cap: f64,
}

pub fn theorem_bounds(
    params: &FunctionClassParams,
    horizon: usize,
    theorem: Theorem,
) -> Result<BoundReport> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let p = params;
    let r2 = p.radius * p.radius;
    let t = horizon as f64;
    let shifted = (t + 15.0).sqrt();
    let (constant, value, velocity_cap) = match theorem {
        Theorem::Thm1Regret => (18.0, 18.0 * p.cost_lipschitz * p.radius * t.sqrt(), 4.0),
        Theorem::Thm1Feasibility => (8.0, -8.0 * p.constraint_bracket(2.0) * r2 / t.sqrt(), 4.0),
        Theorem::Thm2Regret => (246.0, 246.0 * p.cost_lipschitz * p.radius * t.sqrt(), 7.0),
        Theorem::Thm2Feasibility => {
            (265.0, -265.0 * p.constraint_bracket(4.0) * r2 / shifted, 7.0)
        }
        Theorem::Thm2FeasibilityLoose => {
            let bracket = 265.0 * p.constraint_lipschitz / p.radius + 927.0 * p.smoothness;
            (265.0, -bracket * r2 / shifted, 7.0)
        }
        Theorem::Thm2Attraction => (27.0, -27.0 * r2 / shifted, 7.0),
        Theorem::AugmentedFeasibility => {
            (21.0, -21.0 * p.constraint_bracket(3.0) * r2 / shifted, 7.0)
        }
        Theorem::VelocityBound => (7.0, 7.0 * p.cost_lipschitz, 7.0),
    };
    Ok(BoundReport {
        theorem,
        horizon,
        value,
        constant,
        velocity_cap: velocity_cap * p.cost_lipschitz,
    })
}

pub fn theorem_bounds_by_name(
    params: &FunctionClassParams,
    horizon: usize,
    name: &str,
) -> Result<BoundReport> {
    theorem_bounds(params, horizon, name.parse()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::halfspace_projection;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn unit_params() -> FunctionClassParams {
        FunctionClassParams::new(1.0, 1.0, 1.0, 0.0).unwrap()
    }

    fn report(values: &[f64], grads: &[&[f64]]) -> ViolationReport {
        let n = grads.first().map_or(2, |g| g.len());
        let mut gradients = DMatrix::zeros(n, grads.len());
        for (c, g) in grads.iter().enumerate() {
            gradients.set_column(c, &v(g));
        }
        ViolationReport {
            indices: (0..values.len()).collect(),
            values: v(values),
            gradients,
        }
    }

    fn config(alpha: f64, d: u32, augment: bool) -> LearnerConfig {
        LearnerConfig {
            alpha,
            step_offset: d,
            augment,
            params: unit_params(),
        }
    }

    #[test]
    fn step_size_examples() {
        assert!((step_size(1, 100.0, 0) - 0.01).abs() < 1e-18);
        assert_eq!(step_size(1, 1.0, 15), 0.25);
        assert_eq!(step_size(4, 2.0, 0), 0.25);
    }

    #[test]
    fn velocity_polyhedron_rows() {
        let empty = build_velocity_polyhedron(&ViolationReport::empty(2), 2.0);
        assert_eq!(empty.num_rows(), 0);

        let poly = build_velocity_polyhedron(&report(&[-0.5], &[&[1.0, 0.0]]), 2.0);
        assert_eq!(poly.normals.column(0).into_owned(), v(&[1.0, 0.0]));
        assert_eq!(poly.offsets, v(&[1.0]));

        let poly = build_velocity_polyhedron(&report(&[-1.0], &[&[0.0, 1.0]]), 1.0);
        assert_eq!(poly.offsets, v(&[1.0]));
    }

    #[test]
    fn hypersphere_augmentation() {
        let base = Polyhedron::whole_space(2);
        let inside = augment_with_hypersphere(base.clone(), &v(&[0.3, 0.4]), 1.0, 1.0);
        assert_eq!(inside.num_rows(), 0);
        let boundary = augment_with_hypersphere(base.clone(), &v(&[0.6, 0.8]), 1.0, 1.0);
        assert_eq!(boundary.num_rows(), 0);
        let outside = augment_with_hypersphere(base, &v(&[2.0, 0.0]), 1.0, 1.0);
        assert_eq!(outside.normals.column(0).into_owned(), v(&[-2.0, 0.0]));
        assert_eq!(outside.offsets, v(&[1.5]));
    }

    #[test]
    fn interior_step_is_gradient_step() {
        let state = LearnerState::new(v(&[0.0, 0.0]));
        let cost = CostSample {
            value: 0.0,
            gradient: v(&[1.0, 0.0]),
        };
        let (next, rec) = cvvpro_step(
            &state,
            &cost,
            &ViolationReport::empty(2),
            &config(2.0, 0, false),
            None,
        )
        .unwrap();
        assert_eq!(rec.v, vec![-1.0, 0.0]);
        assert_eq!(rec.r, vec![0.0, 0.0]);
        assert_eq!(next.x, v(&[-0.5, 0.0]));
        assert_eq!(next.t, 2);
    }

    #[test]
    fn violated_step_matches_halfspace_projection() {
        let state = LearnerState::new(v(&[0.0, 0.0]));
        let cost = CostSample {
            value: 0.0,
            gradient: v(&[1.0, 0.0]),
        };
        let rep = report(&[-0.5], &[&[1.0, 0.0]]);
        let (next, rec) =
            cvvpro_step(&state, &cost, &rep, &config(2.0, 0, false), None).unwrap();
        let expected = halfspace_projection(&v(&[-1.0, 0.0]), &v(&[1.0, 0.0]), 1.0).unwrap();
        assert_eq!(expected, v(&[1.0, 0.0]));
        assert!((v(&rec.v) - &expected).amax() < 1e-12);
        assert!((v(&rec.r) - v(&[2.0, 0.0])).amax() < 1e-12);
        assert_eq!(rec.eta, 0.5);
        assert!((next.x - v(&[0.5, 0.0])).amax() < 1e-12);
        assert!(rec.kkt_residual <= 1e-9);
    }

    #[test]
    fn augmentation_sets_flag() {
        let state = LearnerState::new(v(&[2.0, 0.0]));
        let cost = CostSample {
            value: 0.0,
            gradient: v(&[-1.0, 0.0]),
        };
        let (_, rec) = cvvpro_step(
            &state,
            &cost,
            &ViolationReport::empty(2),
            &config(1.0, 15, true),
            None,
        )
        .unwrap();
        assert!(rec.hypersphere_active);
        assert_eq!(rec.projection_rows, 1);
        // Row −2 v1 ≥ 1.5 forces v1 ≤ −0.75.
        assert!((rec.v[0] + 0.75).abs() < 1e-12);
    }

    #[test]
    fn simplex_equality_row_preserves_sum() {
        let mut learner = CvvPro::new(config(1.0, 0, false), v(&[0.5, 0.5, 0.0]))
            .unwrap()
            .with_equalities(EqualityRows::simplex_sum(3));
        let cost = CostSample {
            value: 0.0,
            gradient: v(&[1.0, -2.0, 0.3]),
        };
        for _ in 0..5 {
            learner.step(&cost, &ViolationReport::empty(3)).unwrap();
            assert!((learner.x().sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_carries_round() {
        let state = LearnerState { x: v(&[0.0, 0.0]), t: 7 };
        let cost = CostSample {
            value: 0.0,
            gradient: v(&[1.0]),
        };
        let err = cvvpro_step(&state, &cost, &ViolationReport::empty(2), &config(1.0, 0, false), None)
            .unwrap_err();
        assert!(matches!(err, Error::Round { round: 7, .. }));
    }

    #[test]
    fn bound_examples() {
        let p = unit_params();
        let b = theorem_bounds(&p, 100, Theorem::Thm1Regret).unwrap();
        assert!((b.value - 180.0).abs() < 1e-12);
        let b = theorem_bounds(&p, 1, Theorem::Thm2Attraction).unwrap();
        assert_eq!(b.value, -6.75);
        let b = theorem_bounds(&p, 1, Theorem::Thm2Feasibility).unwrap();
        assert_eq!(b.value, -66.25);
        let b = theorem_bounds_by_name(&p, 1, "velocity_bound").unwrap();
        assert_eq!(b.value, 7.0);
    }

    #[test]
    fn bound_signs() {
        let p = FunctionClassParams::new(2.0, 3.0, 0.5, 0.7).unwrap();
        for th in Theorem::ALL {
            let b = theorem_bounds(&p, 10, th).unwrap();
            assert!(b.value.is_finite());
            match th {
                Theorem::Thm1Regret | Theorem::Thm2Regret | Theorem::VelocityBound => {
                    assert!(b.value > 0.0)
                }
                _ => assert!(b.value < 0.0),
            }
        }
        let flat = FunctionClassParams::new(2.0, 3.0, 0.5, 0.0).unwrap();
        let loose = theorem_bounds(&flat, 10, Theorem::Thm2FeasibilityLoose).unwrap();
        let main = theorem_bounds(&flat, 10, Theorem::Thm2Feasibility).unwrap();
        assert_eq!(loose.value, main.value);
    }

    #[test]
    fn unknown_theorem() {
        let err = theorem_bounds_by_name(&unit_params(), 1, "thm9").unwrap_err();
        assert!(matches!(err, Error::UnknownTheorem(_)));
    }
}
