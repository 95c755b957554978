#![allow(dead_code)]

use cvvpro::constraints::{
    evaluate_violations, AffineFamily, BallFamily, ConstraintFamily, FunctionClassParams,
    StackedFamily,
};
use cvvpro::learner::{CostSample, CvvPro, LearnerConfig, StepRecord};
use cvvpro::rng::{self, NormalSampler, Stream};
use nalgebra::{DMatrix, DVector};

pub const DIM: usize = 4;
pub const BALL_RADIUS: f64 = 0.7;
pub const HALFSPACE_LEVEL: f64 = 0.25;

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

pub fn ball_center() -> DVector<f64> {
    let mut z = DVector::zeros(DIM);
    z[0] = 0.2;
    z
}

/// `½(ρ² − ‖x − z‖²) ≥ 0` and `0.25 − x₂ ≥ 0`: a set inside the unit ball.
pub struct Certified {
    pub ball: BallFamily,
    pub halfspace: AffineFamily,
}

impl Certified {
    pub fn new() -> Self {
        let mut slope = DMatrix::zeros(1, DIM);
        slope[(0, 1)] = -1.0;
        Self {
            ball: BallFamily::new(vec![ball_center()], vec![BALL_RADIUS]).unwrap(),
            halfspace: AffineFamily::new(v(&[HALFSPACE_LEVEL]), slope).unwrap(),
        }
    }

    pub fn family(&self) -> StackedFamily<'_> {
        StackedFamily::new(vec![&self.ball, &self.halfspace]).unwrap()
    }

    /// Gradients over the ball of radius 4 are at most `4 + ‖z‖`; the ball row is 1-smooth.
    pub fn params() -> FunctionClassParams {
        FunctionClassParams::new(1.0, 1.0, 4.0 + ball_center().norm(), 1.0).unwrap()
    }
}

/// `argmin_{x∈C} wᵀx` in closed form.
pub fn certified_minimizer(w: &DVector<f64>) -> DVector<f64> {
    let z = ball_center();
    let on_ball = &z - w * (BALL_RADIUS / w.norm());
    if on_ball[1] <= HALFSPACE_LEVEL {
        return on_ball;
    }
    // The halfspace is active: minimize over the disk cut from the ball.
    let mut center = z.clone();
    center[1] = HALFSPACE_LEVEL;
    let radius = (BALL_RADIUS.powi(2) - (HALFSPACE_LEVEL - z[1]).powi(2)).sqrt();
    let mut tangent = w.clone();
    tangent[1] = 0.0;
    if tangent.norm() == 0.0 {
        return center;
    }
    let scale = radius / tangent.norm();
    center - tangent * scale
}

pub struct CertifiedRun {
    pub records: Vec<StepRecord>,
    /// `g(x_t)` over both rows.
    pub values: Vec<DVector<f64>>,
    pub costs: Vec<DVector<f64>>,
    pub config: LearnerConfig,
}

impl CertifiedRun {
    pub fn regret(&self) -> f64 {
        let total: DVector<f64> = self.costs.iter().fold(DVector::zeros(DIM), |a, c| a + c);
        let best = certified_minimizer(&total);
        let paid: f64 = self.records.iter().map(|r| r.cost).sum();
        paid - total.dot(&best)
    }
}

/// Unit-norm linear costs drifting towards the halfspace boundary.
pub fn run_certified(horizon: usize, seed: u64, config: LearnerConfig) -> CertifiedRun {
    let set = Certified::new();
    let family = set.family();
    let mut rng = rng::stream(seed, Stream::Adversary);
    let mut normal = NormalSampler::default();
    let drift = v(&[-1.0, -1.0, 0.3, 0.0]);
    let mut learner = CvvPro::new(config, DVector::zeros(DIM)).unwrap();
    let mut run = CertifiedRun {
        records: Vec::with_capacity(horizon),
        values: Vec::with_capacity(horizon),
        costs: Vec::with_capacity(horizon),
        config,
    };
    for _ in 0..horizon {
        let noise = DVector::from_fn(DIM, |_, _| 0.5 * normal.sample(&mut rng));
        let mut c = &drift + noise;
        c /= c.norm();
        let x = learner.x().clone();
        let report = evaluate_violations(&family, &x).unwrap();
        run.values.push(family.values(&x));
        let record = learner
            .step(&CostSample { value: c.dot(&x), gradient: c.clone() }, &report)
            .unwrap();
        run.records.push(record);
        run.costs.push(c);
    }
    run
}
