//! The two-player resource game used in the experiments.
//!
//! Player x minimizes `xᵀA y` over the simplex while an adversary answers
//! with a noisy best response. Both share the resource rows
//! `C_x x + C_y y ≤ b`; the learner only sees their running average over
//! the adversary's past moves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{
    evaluate_violations, AffineFamily, AveragedConstraintState, ConstraintFamily,
    FunctionClassParams,
};
use crate::error::{Error, Result};
use crate::learner::{step_size, CostSample, CvvPro, EqualityRows, LearnerConfig, StepRecord};
use crate::metrics::{CheckpointBenchmark, MetricsLog, RoundRecord, RunMetadata};
use crate::ogd::{ogd_projection, FeasibleSetDescription};
use crate::projection::{project_warm, ProjectionOptions};
use crate::rng::{stream, uniform, uniform_open_left, NormalSampler, Stream, StreamRng};

/// Weight on the best response in the adversary's move.
pub const DEFAULT_MIX: f64 = 0.8;
/// Required fixed-point residual of the hindsight benchmark.
pub const BENCHMARK_TOLERANCE: f64 = 1e-6;
const BENCHMARK_BUDGET: usize = 20_000;
/// First step length; far beyond the simplex diameter so early steps land on the optimal face.
const BENCHMARK_FIRST_STEP: f64 = 1e2;

#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    pub a: DMatrix<f64>,
    /// `m × n`.
    pub cx: DMatrix<f64>,
    /// `m × n`.
    pub cy: DMatrix<f64>,
    pub capacity: f64,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

/// Entries are drawn row by row: `A` from standard normals, then `C_x`, then `C_y` uniform on `[0, 1)`.
pub fn generate_instance(n: usize, m: usize, capacity: f64, seed: u64) -> Result<GameInstance> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("n and m must be at least 1".into()));
    }
    if !capacity.is_finite() {
        return Err(Error::InvalidArgument("capacity must be finite".into()));
    }
    let mut rng = stream(seed, Stream::Instance);
    let mut normal = NormalSampler::default();
    let a = row_major(n, n, || normal.sample(&mut rng));
    let cx = row_major(m, n, || uniform(&mut rng));
    let cy = row_major(m, n, || uniform(&mut rng));
    Ok(GameInstance {
        a,
        cx,
        cy,
        capacity,
        n,
        m,
        seed,
    })
}

fn row_major(rows: usize, cols: usize, mut draw: impl FnMut() -> f64) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| draw()).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

impl GameInstance {
    /// `g(x) = b − C_x x − C_y y`, one row per resource.
    pub fn resource_constraints(&self, y: &DVector<f64>) -> AffineFamily {
        AffineFamily {
            intercepts: DVector::from_element(self.m, self.capacity) - &self.cy * y,
            slopes: -&self.cx,
        }
    }

    pub fn cost(&self, x: &DVector<f64>, y: &DVector<f64>) -> CostSample {
        let gradient = &self.a * y;
        CostSample {
            value: x.dot(&gradient),
            gradient,
        }
    }

    /// `R = 1` (the simplex lies in the unit ball), `L_F = max_j ‖A e_j‖`,
    /// `L_G` the largest gradient over resource rows and facets, `β_G = 0`.
    pub fn function_class(&self) -> FunctionClassParams {
        let cost = self
            .a
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        let constraint = self
            .cx
            .row_iter()
            .map(|r| r.norm())
            .fold(1.0, f64::max);
        FunctionClassParams::new(1.0, cost, constraint, 0.0).expect("game parameters are finite")
    }

    /// Largest spread of a `C_y` row; bounds `(t+1)·|g_{t+1}(x) − g_t(x)|`.
    pub fn drift_constant(&self) -> f64 {
        self.cy
            .row_iter()
            .map(|r| r.max() - r.min())
            .fold(0.0, f64::max)
    }

    /// `Δ_n ∩ {C_x x ≤ b − C_y ȳ}`.
    pub fn feasible_set(&self, y_bar: &DVector<f64>) -> FeasibleSetDescription {
        FeasibleSetDescription {
            inequalities: self.resource_constraints(y_bar),
            equalities: None,
            simplex: true,
        }
    }
}

/// The learner's constraints at round `t`: the averaged resource rows
/// `b − C_x x − C_y ȳ_t` (indices `0..m`) followed by the facets `x_i ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameConstraints {
    pub averaged: AveragedConstraintState,
}

impl GameConstraints {
    pub fn new(instance: &GameInstance, y1: &DVector<f64>) -> Self {
        Self {
            averaged: AveragedConstraintState::new(instance.resource_constraints(y1)),
        }
    }

    pub fn push_move(&mut self, instance: &GameInstance, y: &DVector<f64>) -> Result<()> {
        self.averaged
            .update_intercepts(&instance.resource_constraints(y).intercepts)
    }

    pub fn round(&self) -> usize {
        self.averaged.round
    }

    pub fn resources(&self) -> &AffineFamily {
        &self.averaged.average
    }

    pub fn num_resources(&self) -> usize {
        self.averaged.average.intercepts.len()
    }
}

impl ConstraintFamily for GameConstraints {
    fn dim(&self) -> usize {
        self.averaged.dim()
    }

    fn len(&self) -> usize {
        self.num_resources() + self.dim()
    }

    fn value(&self, index: usize, x: &DVector<f64>) -> f64 {
        let m = self.num_resources();
        if index < m {
            self.averaged.value(index, x)
        } else {
            x[index - m]
        }
    }

    fn gradient(&self, index: usize, x: &DVector<f64>) -> DVector<f64> {
        let m = self.num_resources();
        if index < m {
            self.averaged.gradient(index, x)
        } else {
            let mut e = DVector::zeros(self.dim());
            e[index - m] = 1.0;
            e
        }
    }

    fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.num_resources();
        let mut out = DVector::zeros(m + x.len());
        out.rows_mut(0, m).copy_from(&self.averaged.values(x));
        out.rows_mut(m, x.len()).copy_from(x);
        out
    }
}

/// Vertex `e_j` maximizing `(Aᵀx)_j`; lowest index wins ties.
pub fn best_response(a: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let scores = a.tr_mul(x);
    let mut best = 0;
    for j in 1..scores.len() {
        if scores[j] > scores[best] {
            best = j;
        }
    }
    let mut e = DVector::zeros(scores.len());
    e[best] = 1.0;
    e
}

/// Uniform on the simplex via normalized exponential spacings.
pub fn sample_simplex_uniform(n: usize, rng: &mut StreamRng) -> DVector<f64> {
    let mut e = DVector::from_fn(n, |_, _| -uniform_open_left(rng).ln());
    let total = e.sum();
    if total > 0.0 {
        e /= total;
    } else {
        e.fill(1.0 / n as f64);
    }
    e
}

/// `mix·BR(x) + (1 − mix)·ξ` with `ξ` uniform on the simplex.
pub fn adversary_move(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    rng: &mut StreamRng,
    mix: f64,
) -> DVector<f64> {
    let response = best_response(a, x);
    if mix >= 1.0 {
        return response;
    }
    let noise = sample_simplex_uniform(x.len(), rng);
    response * mix + noise * (1.0 - mix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub x_star: Vec<f64>,
    /// `Σ_{ℓ≤T} f_ℓ(x*) = T·x*ᵀA ȳ_T`.
    pub value: f64,
    /// `‖P(x* − ĉ) − x*‖` with `ĉ` the normalized cost vector.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// `min xᵀA ȳ` over `Δ_n ∩ {C_x x ≤ b − C_y ȳ}` by projected gradient steps
/// `S/√k` along the normalized cost vector.
pub fn solve_hindsight_benchmark(
    instance: &GameInstance,
    y_bar: &DVector<f64>,
    horizon: usize,
) -> Result<BenchmarkResult> {
    solve_benchmark_from(instance, y_bar, horizon, None)
}

/// [`solve_hindsight_benchmark`] started from `start` (projected first).
pub fn solve_benchmark_from(
    instance: &GameInstance,
    y_bar: &DVector<f64>,
    horizon: usize,
    start: Option<&DVector<f64>>,
) -> Result<BenchmarkResult> {
    let n = instance.n;
    if y_bar.len() != n {
        return Err(Error::DimensionMismatch {
            what: "benchmark adversary average",
            expected: n,
            found: y_bar.len(),
        });
    }
    let poly = instance.feasible_set(y_bar).polyhedron()?;
    let options = ProjectionOptions::default();
    let c = &instance.a * y_bar;
    let scale = c.norm();
    let direction = if scale > 0.0 { &c / scale } else { c.clone() };

    let mut warm: Vec<usize> = Vec::new();
    let project = |p: &DVector<f64>, warm: &mut Vec<usize>| -> Result<DVector<f64>> {
        let res = project_warm(p, &poly, &options, warm).map_err(|e| match e {
            Error::EmptyPolyhedron => Error::BenchmarkInfeasible,
            e => e,
        })?;
        *warm = res.active_set;
        Ok(res.v)
    };

    let uniform_start = DVector::from_element(n, 1.0 / n as f64);
    let mut x = project(start.unwrap_or(&uniform_start), &mut warm)?;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for k in 1..=BENCHMARK_BUDGET {
        iterations = k;
        let step = BENCHMARK_FIRST_STEP / (k as f64).sqrt();
        let next = project(&(&x - &direction * step), &mut warm)?;
        let moved = (&next - &x).norm();
        x = next;
        if moved <= 1e-12 || k % 50 == 0 {
            let mut probe_warm = warm.clone();
            let probe = project(&(&x - &direction), &mut probe_warm)?;
            residual = (&probe - &x).norm();
            if residual <= 1e-10 {
                break;
            }
        }
    }
    if residual > 1e-10 {
        let probe = project(&(&x - &direction), &mut warm)?;
        residual = (&probe - &x).norm();
    }
    if residual > BENCHMARK_TOLERANCE {
        return Err(Error::BenchmarkBudget {
            best: x.iter().copied().collect(),
            kkt_residual: residual,
        });
    }
    Ok(BenchmarkResult {
        value: horizon as f64 * x.dot(&c),
        x_star: x.iter().copied().collect(),
        kkt_residual: residual,
        iterations,
    })
}

/// Incremental means `x̄_t`, `ȳ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningAverages {
    pub x_bar: DVector<f64>,
    pub y_bar: DVector<f64>,
    pub round: usize,
}

impl RunningAverages {
    pub fn new(dim: usize) -> Self {
        Self {
            x_bar: DVector::zeros(dim),
            y_bar: DVector::zeros(dim),
            round: 0,
        }
    }

    pub fn push(&mut self, x: &DVector<f64>, y: &DVector<f64>) {
        self.round += 1;
        let w = 1.0 / self.round as f64;
        self.x_bar += (x - &self.x_bar) * w;
        self.y_bar += (y - &self.y_bar) * w;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Cvvpro,
    Ogd,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Cvvpro => "cvvpro",
            LearnerKind::Ogd => "ogd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointMode {
    /// Powers of two and `T`.
    Log,
    /// Every round.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub learner: LearnerKind,
    pub horizon: usize,
    pub learner_config: LearnerConfig,
    pub run_seed: u64,
    pub checkpoints: CheckpointMode,
    /// Rounds benchmarked in addition to the schedule.
    pub extra_checkpoints: Vec<usize>,
    pub mix: f64,
}

impl SimulationConfig {
    /// The experiment defaults: `α = 100`, `η_t = 1/(α√t)`, no augmentation.
    pub fn experiment(learner: LearnerKind, instance: &GameInstance, horizon: usize, run_seed: u64) -> Self {
        Self {
            learner,
            horizon,
            learner_config: LearnerConfig {
                alpha: 100.0,
                step_offset: 0,
                augment: false,
                params: instance.function_class(),
            },
            run_seed,
            checkpoints: CheckpointMode::Log,
            extra_checkpoints: Vec::new(),
            mix: DEFAULT_MIX,
        }
    }

    /// Sorted, deduplicated checkpoint rounds within `1..=T`.
    pub fn checkpoint_rounds(&self) -> Vec<usize> {
        let t_max = self.horizon;
        let mut rounds: Vec<usize> = match self.checkpoints {
            CheckpointMode::All => (1..=t_max).collect(),
            CheckpointMode::Log => std::iter::successors(Some(1usize), |&t| t.checked_mul(2))
                .take_while(|&t| t <= t_max)
                .chain(std::iter::once(t_max))
                .collect(),
        };
        rounds.extend(self.extra_checkpoints.iter().filter(|&&t| (1..=t_max).contains(&t)));
        rounds.sort_unstable();
        rounds.dedup();
        rounds
    }
}

/// Play `T` rounds and benchmark at the configured checkpoints.
pub fn run_simulation(instance: &GameInstance, config: &SimulationConfig) -> Result<MetricsLog> {
    if config.horizon == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&config.mix) {
        return Err(Error::InvalidArgument("mix must lie in [0, 1]".into()));
    }
    config.learner_config.validate()?;
    let n = instance.n;
    let m = instance.m;
    let checkpoints = config.checkpoint_rounds();
    let mut next_checkpoint = checkpoints.iter().peekable();

    let mut adversary = stream(config.run_seed, Stream::Adversary);
    let x1 = DVector::from_element(n, 1.0 / n as f64);
    let mut learner = CvvPro::new(config.learner_config, x1.clone())?
        .with_equalities(EqualityRows::simplex_sum(n));
    let mut x = x1;
    let mut ogd_warm: Vec<usize> = Vec::new();
    let mut averages = RunningAverages::new(n);
    let mut constraints: Option<GameConstraints> = None;
    let mut records = Vec::with_capacity(config.horizon);
    let mut benchmarks = Vec::new();
    let mut last_star: Option<DVector<f64>> = None;

    for t in 1..=config.horizon {
        let y = adversary_move(&instance.a, &x, &mut adversary, config.mix);
        averages.push(&x, &y);
        match constraints.as_mut() {
            None => constraints = Some(GameConstraints::new(instance, &y)),
            Some(c) => c.push_move(instance, &y).map_err(|e| e.at_round(t))?,
        }
        let family = constraints.as_ref().expect("set above");
        let report = evaluate_violations(family, &x).map_err(|e| e.at_round(t))?;
        let resource_values = family.resources().values(&x);
        let max_violation = (-resource_values.min()).max(0.0);
        let resource_violated = report.indices.iter().take_while(|&&i| i < m).count();
        let cost = instance.cost(&x, &y);

        let step = match config.learner {
            LearnerKind::Cvvpro => {
                let record = learner.step(&cost, &report)?;
                x = learner.x().clone();
                record
            }
            LearnerKind::Ogd => {
                let lc = &config.learner_config;
                let eta = step_size(t, lc.alpha, lc.step_offset);
                let set = FeasibleSetDescription {
                    inequalities: family.resources().clone(),
                    equalities: None,
                    simplex: true,
                };
                let projection = ogd_projection(&x, &cost.gradient, eta, &set, &ogd_warm)
                    .map_err(|e| e.at_round(t))?;
                ogd_warm = projection.active_set;
                let v = (&projection.v - &x) / eta;
                let r = &v + &cost.gradient;
                let record = StepRecord {
                    t,
                    eta,
                    x: x.iter().copied().collect(),
                    v: v.iter().copied().collect(),
                    r: r.iter().copied().collect(),
                    cost: cost.value,
                    violated_count: report.len(),
                    hypersphere_active: false,
                    kkt_residual: projection.kkt_residual,
                    projection_rows: set.num_rows(),
                };
                x = projection.v;
                record
            }
        };

        records.push(RoundRecord {
            step,
            y: y.iter().copied().collect(),
            max_violation,
            resource_violated,
        });

        if next_checkpoint.peek() == Some(&&t) {
            next_checkpoint.next();
            let outcome = solve_benchmark_from(instance, &averages.y_bar, t, last_star.as_ref());
            benchmarks.push(match outcome {
                Ok(result) => {
                    last_star = Some(DVector::from_vec(result.x_star.clone()));
                    CheckpointBenchmark {
                        t,
                        result: Some(result),
                        failure: None,
                    }
                }
                Err(e) if e.is_numerical() => CheckpointBenchmark {
                    t,
                    result: None,
                    failure: Some(e.to_string()),
                },
                Err(e) => return Err(e.at_round(t)),
            });
        }
    }

    let metadata = RunMetadata::new(instance, config);
    Ok(MetricsLog::new(metadata, records, benchmarks))
}
