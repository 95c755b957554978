//! Trajectory checks of the structural results behind the learner's analysis.
//!
//! Every check reads a finished trajectory; nothing here feeds back into a run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{evaluate_violations, hypersphere_constraint, ConstraintFamily, ViolationReport};
use crate::error::{Error, Result};
use crate::game::{generate_instance, sample_simplex_uniform, GameConstraints, GameInstance};
use crate::learner::{theorem_bounds, LearnerConfig, StepRecord, Theorem};
use crate::metrics::{replay_constraints, MetricsLog};
use crate::projection::{project_onto_polyhedron, DEFAULT_TOLERANCE};
use crate::rng::{stream, Stream, StreamRng};

/// Slack allowed in the lemma checks.
pub const LEMMA_TOLERANCE: f64 = 1e-7;
/// Slack allowed in the cone-intersection check.
pub const INTERSECTION_TOLERANCE: f64 = 1e-8;
/// Rejection draws per requested sample before falling back to projections.
const REJECTION_FACTOR: usize = 20;

/// `∇g_i(x_t)ᵀ·α(x − x_t) ≥ −α g_i(x_t)` for every reported row, per sample.
pub fn check_claim_membership(
    report: &ViolationReport,
    alpha: f64,
    x_t: &DVector<f64>,
    samples: &[DVector<f64>],
) -> Vec<bool> {
    samples
        .iter()
        .map(|x| claim_margin(report, alpha, x_t, x) >= -LEMMA_TOLERANCE)
        .collect()
}

/// Smallest `∇g_iᵀα(x − x_t) + α g_i` over the report; `+∞` when empty.
pub fn claim_margin(
    report: &ViolationReport,
    alpha: f64,
    x_t: &DVector<f64>,
    x: &DVector<f64>,
) -> f64 {
    let step = (x - x_t) * alpha;
    let lhs = report.gradients.tr_mul(&step);
    (0..report.len())
        .map(|c| lhs[c] + alpha * report.values[c])
        .fold(f64::INFINITY, f64::min)
}

/// `r_tᵀ(x − x_t) ≥ 0` per sample.
pub fn check_normal_cone_inequality(
    r_t: &DVector<f64>,
    x_t: &DVector<f64>,
    samples: &[DVector<f64>],
) -> Vec<bool> {
    samples
        .iter()
        .map(|x| r_t.dot(&(x - x_t)) >= -LEMMA_TOLERANCE)
        .collect()
}

/// The cones `S_ℓ = {x | G(x_ℓ)ᵀ(x − x_ℓ) ≥ 0}` of rounds with violations.
#[derive(Debug, Clone, Default)]
pub struct IntersectionTracker {
    pub cones: Vec<(DVector<f64>, DMatrix<f64>)>,
    /// Round of each stored cone.
    pub rounds: Vec<usize>,
}

impl IntersectionTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: usize, x: &DVector<f64>, report: &ViolationReport) {
        if !report.is_empty() {
            self.cones.push((x.clone(), report.gradients.clone()));
            self.rounds.push(round);
        }
    }

    /// Smallest `G(x_ℓ)ᵀ(x − x_ℓ)` entry over all cones; `+∞` when empty.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        self.cones
            .iter()
            .map(|(center, normals)| normals.tr_mul(&(x - center)).min())
            .fold(f64::INFINITY, f64::min)
    }

    /// Rounds whose cone excludes `x`.
    pub fn excluding_rounds(&self, x: &DVector<f64>) -> Vec<usize> {
        self.cones
            .iter()
            .zip(&self.rounds)
            .filter(|((center, normals), _)| {
                normals.tr_mul(&(x - center)).min() < -INTERSECTION_TOLERANCE
            })
            .map(|(_, &t)| t)
            .collect()
    }
}

pub fn intersection_membership(tracker: &IntersectionTracker, x: &DVector<f64>) -> bool {
    tracker.margin(x) >= -INTERSECTION_TOLERANCE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    /// Pairs `(t, i)` checked.
    pub checked: usize,
    pub failures: usize,
    pub worst_margin: f64,
    pub worst_round: usize,
    /// `𝒱`, the largest recorded velocity norm.
    pub velocity_cap: f64,
}

impl RecursionReport {
    pub fn passes(&self) -> bool {
        self.failures == 0
    }
}

/// `g_{t+1,i}(x_{t+1}) ≥ (1 − αη_t) g_{t,i}(x_t) − η_t²𝒱²β/2 − slack` for `i ∈ I(x_t)`,
/// where `values[t−1] = g_t(x_t)` over all rows. The slack is
/// `2η_t²[L_G/R + 3β]𝒱²` for time-varying families and zero otherwise.
pub fn constraint_recursion_check(
    records: &[StepRecord],
    values: &[DVector<f64>],
    config: &LearnerConfig,
    time_varying: bool,
) -> Result<RecursionReport> {
    if records.len() != values.len() {
        return Err(Error::DimensionMismatch {
            what: "recursion values",
            expected: records.len(),
            found: values.len(),
        });
    }
    let p = &config.params;
    let cap = records.iter().map(StepRecord::velocity_norm).fold(0.0, f64::max);
    let mut report = RecursionReport {
        checked: 0,
        failures: 0,
        worst_margin: f64::INFINITY,
        worst_round: 0,
        velocity_cap: cap,
    };
    for t in 1..records.len() {
        let eta = records[t - 1].eta;
        let drift = if time_varying {
            2.0 * eta * eta * p.constraint_bracket(3.0) * cap * cap
        } else {
            0.0
        };
        let curvature = eta * eta * cap * cap * p.smoothness / 2.0;
        let (now, next) = (&values[t - 1], &values[t]);
        for i in (0..now.len()).filter(|&i| now[i] <= 0.0) {
            let bound = (1.0 - config.alpha * eta) * now[i] - curvature - drift;
            let margin = next[i] - bound;
            report.checked += 1;
            if margin < -LEMMA_TOLERANCE {
                report.failures += 1;
            }
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_round = t;
            }
        }
    }
    Ok(report)
}

/// Points of `Δ_n ∩ {resource rows ≥ 0}`: uniform rejection draws first,
/// then projections of uniform draws when acceptance is low.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSamples {
    pub points: Vec<DVector<f64>>,
    pub rejection_accepted: usize,
    pub projected: usize,
}

pub fn sample_feasible_points(
    family: &GameConstraints,
    count: usize,
    rng: &mut StreamRng,
) -> Result<FeasibleSamples> {
    let n = family.dim();
    let resources = family.resources();
    let mut points = Vec::with_capacity(count);
    for _ in 0..count * REJECTION_FACTOR {
        if points.len() == count {
            break;
        }
        let x = sample_simplex_uniform(n, rng);
        if resources.values(&x).min() >= 0.0 {
            points.push(x);
        }
    }
    let rejection_accepted = points.len();
    if points.len() < count {
        let set = crate::ogd::FeasibleSetDescription {
            inequalities: resources.clone(),
            equalities: None,
            simplex: true,
        };
        let poly = set.polyhedron()?;
        while points.len() < count {
            let x = sample_simplex_uniform(n, rng);
            match project_onto_polyhedron(&x, &poly, DEFAULT_TOLERANCE) {
                Ok(p) => points.push(p.v),
                Err(Error::EmptyPolyhedron) => break,
                Err(e) => return Err(e),
            }
        }
    }
    let projected = points.len() - rejection_accepted;
    Ok(FeasibleSamples {
        points,
        rejection_accepted,
        projected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Claim1,
    Lemma2,
    Intersection,
    Recursion,
    Bounds,
}

impl std::str::FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "claim1" => Ok(Check::Claim1),
            "lemma2" => Ok(Check::Lemma2),
            "intersection" => Ok(Check::Intersection),
            "recursion" => Ok(Check::Recursion),
            "bounds" => Ok(Check::Bounds),
            other => Err(Error::InvalidArgument(format!("unknown check `{other}`"))),
        }
    }
}

/// Which rounds the per-round checks visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundSelection {
    /// `1, 2, 4, …` and `T`.
    Geometric,
    /// Geometric rounds plus every multiple of `k`.
    Every(usize),
}

impl RoundSelection {
    pub fn rounds(&self, horizon: usize) -> Vec<usize> {
        let mut out: Vec<usize> = std::iter::successors(Some(1usize), |&t| t.checked_mul(2))
            .take_while(|&t| t <= horizon)
            .collect();
        if let RoundSelection::Every(k) = *self {
            out.extend((1..=horizon / k.max(1)).map(|j| j * k.max(1)));
        }
        if horizon > 0 {
            out.push(horizon);
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnoseOptions {
    pub checks: Vec<Check>,
    pub samples: usize,
    pub rounds: RoundSelection,
    /// Seed of the sample stream.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    /// Rounds (or round pairs) visited.
    pub rounds: usize,
    /// Individual inequalities evaluated.
    pub evaluated: usize,
    pub failures: usize,
    pub worst_margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub outcomes: Vec<CheckOutcome>,
    pub rounds_without_samples: usize,
    pub rejection_samples: usize,
    pub projected_samples: usize,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn outcome(&self, check: Check) -> Option<&CheckOutcome> {
        self.outcomes.iter().find(|o| o.check == check)
    }
}

pub fn instance_for(log: &MetricsLog) -> Result<GameInstance> {
    let m = &log.metadata;
    generate_instance(m.n, m.m, m.capacity, m.instance_seed)
}

pub fn learner_config_for(log: &MetricsLog) -> LearnerConfig {
    let m = &log.metadata;
    LearnerConfig {
        alpha: m.alpha,
        step_offset: m.step_offset,
        augment: m.augment,
        params: m.params,
    }
}

/// Run the requested checks over a game log.
pub fn diagnose(log: &MetricsLog, options: &DiagnoseOptions) -> Result<DiagnosticsReport> {
    let instance = instance_for(log)?;
    let config = learner_config_for(log);
    let horizon = log.horizon();
    let selected = options.rounds.rounds(horizon);
    let mut selected_iter = selected.iter().peekable();
    let mut rng = stream(options.seed, Stream::Samples);
    let wants = |c: Check| options.checks.contains(&c);

    let mut claim = Tally::new(Check::Claim1);
    let mut lemma = Tally::new(Check::Lemma2);
    let mut tracker = IntersectionTracker::new();
    let mut values = Vec::new();
    let mut missing = 0;
    let mut rejection = 0;
    let mut projected = 0;
    let mut failure: Option<Error> = None;

    replay_constraints(log, &instance, |t, family, record| {
        if failure.is_some() {
            return;
        }
        let x_t = DVector::from_column_slice(&record.step.x);
        let report = match evaluate_violations(family, &x_t) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.at_round(t));
                return;
            }
        };
        if wants(Check::Intersection) {
            tracker.push(t, &x_t, &report);
        }
        if wants(Check::Recursion) || wants(Check::Bounds) {
            values.push(family.values(&x_t));
        }
        if selected_iter.peek() != Some(&&t) {
            return;
        }
        selected_iter.next();
        if !(wants(Check::Claim1) || wants(Check::Lemma2)) {
            return;
        }
        let samples = match sample_feasible_points(family, options.samples, &mut rng) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e.at_round(t));
                return;
            }
        };
        if samples.points.is_empty() {
            missing += 1;
        }
        rejection += samples.rejection_accepted;
        projected += samples.projected;
        if wants(Check::Claim1) {
            claim.round();
            for x in &samples.points {
                claim.add(t, claim_margin(&report, config.alpha, &x_t, x), LEMMA_TOLERANCE);
            }
        }
        if wants(Check::Lemma2) {
            lemma.round();
            let r_t = DVector::from_column_slice(&record.step.r);
            for x in &samples.points {
                lemma.add(t, r_t.dot(&(x - &x_t)), LEMMA_TOLERANCE);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }

    let mut outcomes = Vec::new();
    for &check in &options.checks {
        let outcome = match check {
            Check::Claim1 => claim.finish(String::new()),
            Check::Lemma2 => lemma.finish(String::new()),
            Check::Intersection => intersection_outcome(log, &tracker),
            Check::Recursion => {
                let records: Vec<StepRecord> = log.records.iter().map(|r| r.step.clone()).collect();
                let rec = constraint_recursion_check(&records, &values, &config, true)?;
                CheckOutcome {
                    check,
                    passed: rec.passes(),
                    rounds: horizon.saturating_sub(1),
                    evaluated: rec.checked,
                    failures: rec.failures,
                    worst_margin: rec.worst_margin,
                    detail: format!(
                        "worst round {}, velocity cap {}",
                        rec.worst_round, rec.velocity_cap
                    ),
                }
            }
            Check::Bounds => {
                let records: Vec<StepRecord> = log.records.iter().map(|r| r.step.clone()).collect();
                let checks = check_bounds(&records, &values, &config, true)?;
                bounds_outcome(&checks)
            }
        };
        outcomes.push(outcome);
    }
    Ok(DiagnosticsReport {
        outcomes,
        rounds_without_samples: missing,
        rejection_samples: rejection,
        projected_samples: projected,
    })
}

fn intersection_outcome(log: &MetricsLog, tracker: &IntersectionTracker) -> CheckOutcome {
    let horizon = log.horizon();
    match log.benchmark_at(horizon) {
        Ok(benchmark) => {
            let x = DVector::from_column_slice(&benchmark.x_star);
            let margin = tracker.margin(&x);
            let excluded = tracker.excluding_rounds(&x);
            // The lemma's conclusion, which membership is sufficient for.
            let cone_failures = log
                .records
                .iter()
                .filter(|r| {
                    let x_t = DVector::from_column_slice(&r.step.x);
                    let r_t = DVector::from_column_slice(&r.step.r);
                    r_t.dot(&(&x - x_t)) < -LEMMA_TOLERANCE
                })
                .count();
            let span = match (excluded.first(), excluded.last()) {
                (Some(a), Some(b)) => format!(", excluding rounds {a}..={b}"),
                _ => String::new(),
            };
            CheckOutcome {
                check: Check::Intersection,
                passed: margin >= -INTERSECTION_TOLERANCE,
                rounds: tracker.cones.len(),
                evaluated: tracker.cones.iter().map(|(_, g)| g.ncols()).sum(),
                failures: excluded.len(),
                worst_margin: margin,
                detail: format!(
                    "benchmark at t={horizon}; {} of {} cones exclude it{span}; \
                     r_tᵀ(x* − x_t) < 0 at {cone_failures} of {horizon} rounds",
                    excluded.len(),
                    tracker.cones.len()
                ),
            }
        }
        Err(e) => CheckOutcome {
            check: Check::Intersection,
            passed: false,
            rounds: 0,
            evaluated: 0,
            failures: 1,
            worst_margin: f64::NEG_INFINITY,
            detail: e.to_string(),
        },
    }
}

struct Tally {
    check: Check,
    rounds: usize,
    evaluated: usize,
    failures: usize,
    worst: f64,
    worst_round: usize,
}

impl Tally {
    fn new(check: Check) -> Self {
        Self {
            check,
            rounds: 0,
            evaluated: 0,
            failures: 0,
            worst: f64::INFINITY,
            worst_round: 0,
        }
    }

    fn round(&mut self) {
        self.rounds += 1;
    }

    fn add(&mut self, t: usize, margin: f64, tol: f64) {
        self.evaluated += 1;
        if margin < -tol {
            self.failures += 1;
        }
        if margin < self.worst {
            self.worst = margin;
            self.worst_round = t;
        }
    }

    fn finish(&self, detail: String) -> CheckOutcome {
        CheckOutcome {
            check: self.check,
            passed: self.failures == 0,
            rounds: self.rounds,
            evaluated: self.evaluated,
            failures: self.failures,
            worst_margin: self.worst,
            detail: if detail.is_empty() {
                format!("worst round {}", self.worst_round)
            } else {
                detail
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub theorem: Theorem,
    /// False when the run's configuration is outside the theorem's hypotheses.
    pub applicable: bool,
    pub evaluated: usize,
    pub failures: usize,
    /// Smallest `observed − bound` (or `bound − observed` for upper bounds).
    pub worst_margin: f64,
    pub note: String,
}

/// Per-round theorem bounds that the configuration supports.
///
/// `values[t−1] = g_t(x_t)` for every constraint row. Feasibility bounds are
/// checked against the most negative row.
pub fn check_bounds(
    records: &[StepRecord],
    values: &[DVector<f64>],
    config: &LearnerConfig,
    time_varying: bool,
) -> Result<Vec<BoundCheck>> {
    let p = &config.params;
    let honest = config.is_honest();
    let augmented = config.augment && config.step_offset == 15;
    let plain = !config.augment && config.step_offset == 0;
    let why = |ok: bool, need: &str| -> String {
        if ok {
            String::new()
        } else if !honest {
            format!("skipped: alpha {} differs from L_F/R = {}", config.alpha, p.default_alpha())
        } else {
            format!("skipped: requires {need}")
        }
    };
    let mut out = Vec::new();

    let feasibility = if time_varying {
        (Theorem::Thm2Feasibility, honest && augmented, "augmented polyhedron with d = 15")
    } else if config.augment {
        (Theorem::AugmentedFeasibility, honest && augmented, "d = 15")
    } else {
        (Theorem::Thm1Feasibility, honest && plain, "d = 0 and iterates in B_R")
    };
    let mut check = BoundCheck {
        theorem: feasibility.0,
        applicable: feasibility.1,
        evaluated: 0,
        failures: 0,
        worst_margin: f64::INFINITY,
        note: why(feasibility.1, feasibility.2),
    };
    if check.applicable {
        for (i, (record, vals)) in records.iter().zip(values).enumerate() {
            let t = i + 1;
            let mut bound = theorem_bounds(p, t, feasibility.0)?.value;
            if time_varying {
                // Two proved brackets exist; take the weaker of the two.
                bound = bound.min(theorem_bounds(p, t, Theorem::Thm2FeasibilityLoose)?.value);
            }
            if feasibility.0 == Theorem::Thm1Feasibility {
                let x = DVector::from_column_slice(&record.x);
                if x.norm() > p.radius {
                    check.applicable = false;
                    check.note = format!("skipped: ‖x_{t}‖ exceeds R");
                    break;
                }
            }
            let observed = vals.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
            tally_bound(&mut check, observed - bound);
        }
    }
    out.push(check);

    let ok = honest && augmented;
    let mut velocity = BoundCheck {
        theorem: Theorem::VelocityBound,
        applicable: ok,
        evaluated: 0,
        failures: 0,
        worst_margin: f64::INFINITY,
        note: why(ok, "augmented polyhedron with d = 15"),
    };
    let mut attraction = BoundCheck {
        theorem: Theorem::Thm2Attraction,
        applicable: ok,
        ..velocity.clone()
    };
    if ok {
        let cap = theorem_bounds(p, 1, Theorem::VelocityBound)?.value;
        for (i, record) in records.iter().enumerate() {
            tally_bound(&mut velocity, cap - record.velocity_norm());
            let x = DVector::from_column_slice(&record.x);
            let (g, _) = hypersphere_constraint(&x, p.radius);
            let bound = theorem_bounds(p, i + 1, Theorem::Thm2Attraction)?.value;
            tally_bound(&mut attraction, g - bound);
            tally_bound(&mut attraction, 4.0 * p.radius - x.norm());
        }
    }
    out.push(velocity);
    out.push(attraction);
    Ok(out)
}

fn tally_bound(check: &mut BoundCheck, margin: f64) {
    check.evaluated += 1;
    if margin < -LEMMA_TOLERANCE {
        check.failures += 1;
    }
    check.worst_margin = check.worst_margin.min(margin);
}

fn bounds_outcome(checks: &[BoundCheck]) -> CheckOutcome {
    let applicable: Vec<&BoundCheck> = checks.iter().filter(|c| c.applicable).collect();
    let failures = applicable.iter().map(|c| c.failures).sum();
    let detail = checks
        .iter()
        .map(|c| {
            if c.applicable {
                format!("{}: {} failures, worst margin {}", c.theorem, c.failures, c.worst_margin)
            } else {
                format!("{}: {}", c.theorem, c.note)
            }
        })
        .collect::<Vec<_>>()
        .join("; ");
    CheckOutcome {
        check: Check::Bounds,
        passed: failures == 0,
        rounds: applicable.iter().map(|c| c.evaluated).max().unwrap_or(0),
        evaluated: applicable.iter().map(|c| c.evaluated).sum(),
        failures,
        worst_margin: applicable
            .iter()
            .map(|c| c.worst_margin)
            .fold(f64::INFINITY, f64::min),
        detail,
    }
}
