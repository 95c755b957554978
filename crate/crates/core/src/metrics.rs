//! Per-round series, checkpoint regret, and CSV/JSON emission.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintFamily, FunctionClassParams};
use crate::error::{Error, Result};
use crate::game::{
    BenchmarkResult, CheckpointMode, GameConstraints, GameInstance, LearnerKind, SimulationConfig,
};
use crate::learner::StepRecord;
use crate::projection::DEFAULT_TOLERANCE;

pub const CSV_HEADER: &str = "t,cost,regret,max_violation,violated_fraction,avg_iterate_distance,eta,velocity_norm,kkt_residual,projection_rows,hypersphere_active";

/// How the regret column is benchmarked.
pub const REGRET_CONVENTION: &str = "per_checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    #[serde(flatten)]
    pub step: StepRecord,
    /// Adversary move `y_t`.
    pub y: Vec<f64>,
    /// `max(0, −min_i g_{t,i}(x_t))` over the resource rows.
    pub max_violation: f64,
    /// Violated resource rows; `violated_count` also counts simplex facets.
    pub resource_violated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBenchmark {
    pub t: usize,
    pub result: Option<BenchmarkResult>,
    /// Set when the benchmark could not be solved at this round.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub learner: LearnerKind,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub step_offset: u32,
    pub augment: bool,
    pub capacity: f64,
    pub instance_seed: u64,
    pub run_seed: u64,
    pub checkpoints: CheckpointMode,
    pub extra_checkpoints: Vec<usize>,
    pub adversary_mix: f64,
    pub params: FunctionClassParams,
    pub regret_convention: String,
    pub rng: String,
    pub projection_tolerance: f64,
}

impl RunMetadata {
    pub fn new(instance: &GameInstance, config: &SimulationConfig) -> Self {
        let lc = &config.learner_config;
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            learner: config.learner,
            n: instance.n,
            m: instance.m,
            horizon: config.horizon,
            alpha: lc.alpha,
            step_offset: lc.step_offset,
            augment: lc.augment,
            capacity: instance.capacity,
            instance_seed: instance.seed,
            run_seed: config.run_seed,
            checkpoints: config.checkpoints,
            extra_checkpoints: config.extra_checkpoints.clone(),
            adversary_mix: config.mix,
            params: lc.params,
            regret_convention: REGRET_CONVENTION.to_string(),
            rng: "xoshiro256** seeded by splitmix64; streams by long_jump".to_string(),
            projection_tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// A completed run with its derived series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub metadata: RunMetadata,
    pub records: Vec<RoundRecord>,
    pub checkpoints: Vec<CheckpointBenchmark>,
    pub regret: Vec<Option<f64>>,
    pub avg_iterate_distance: Vec<f64>,
    pub violated_fraction: Vec<f64>,
}

impl MetricsLog {
    pub fn new(
        metadata: RunMetadata,
        records: Vec<RoundRecord>,
        checkpoints: Vec<CheckpointBenchmark>,
    ) -> Self {
        let mut log = Self {
            metadata,
            records,
            checkpoints,
            regret: Vec::new(),
            avg_iterate_distance: Vec::new(),
            violated_fraction: Vec::new(),
        };
        let mut regret = vec![None; log.records.len()];
        for (t, value) in compute_regret_curve(&log) {
            regret[t - 1] = Some(value);
        }
        log.regret = regret;
        log.avg_iterate_distance = averaged_iterate_convergence(&log);
        log.violated_fraction = violated_fraction_series(&log);
        log
    }

    pub fn horizon(&self) -> usize {
        self.records.len()
    }

    pub fn benchmark_at(&self, t: usize) -> Result<&BenchmarkResult> {
        self.checkpoints
            .iter()
            .find(|c| c.t == t)
            .and_then(|c| c.result.as_ref())
            .ok_or(Error::MissingBenchmark(t))
    }

    /// `Σ_{ℓ≤t} f_ℓ(x_ℓ) − Σ_{ℓ≤t} f_ℓ(x*_t)`.
    pub fn regret_at(&self, t: usize) -> Result<f64> {
        let benchmark = self.benchmark_at(t)?;
        let total: f64 = self.records[..t].iter().map(|r| r.step.cost).sum();
        Ok(total - benchmark.value)
    }

    pub fn max_violation(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.max_violation).collect()
    }

    pub fn projection_rows(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.step.projection_rows).collect()
    }

    /// Mean `x̄_t` of the played decisions after `t` rounds.
    pub fn averaged_iterate(&self, t: usize) -> DVector<f64> {
        let n = self.metadata.n;
        let mut mean = DVector::zeros(n);
        for (i, r) in self.records[..t].iter().enumerate() {
            mean += (DVector::from_column_slice(&r.step.x) - &mean) / (i + 1) as f64;
        }
        mean
    }
}

/// Regret at every checkpoint with a solved benchmark, accumulating costs once.
pub fn compute_regret_curve(log: &MetricsLog) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut total = 0.0;
    let mut next = 0;
    let solved: Vec<(usize, f64)> = log
        .checkpoints
        .iter()
        .filter_map(|c| c.result.as_ref().map(|r| (c.t, r.value)))
        .collect();
    for (i, record) in log.records.iter().enumerate() {
        total += record.step.cost;
        while next < solved.len() && solved[next].0 == i + 1 {
            out.push((i + 1, total - solved[next].1));
            next += 1;
        }
    }
    out
}

/// `max(0, −min_i g_{t,i}(x_t))` re-evaluated from the logged adversary moves.
pub fn max_violation_series(log: &MetricsLog, instance: &GameInstance) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(log.records.len());
    replay_constraints(log, instance, |_, family, record| {
        let x = DVector::from_column_slice(&record.step.x);
        out.push((-family.resources().values(&x).min()).max(0.0));
    })?;
    Ok(out)
}

/// Rebuild the learner's constraint family round by round from the logged adversary moves.
pub fn replay_constraints(
    log: &MetricsLog,
    instance: &GameInstance,
    mut visit: impl FnMut(usize, &GameConstraints, &RoundRecord),
) -> Result<()> {
    let mut family: Option<GameConstraints> = None;
    for (i, record) in log.records.iter().enumerate() {
        let y = DVector::from_column_slice(&record.y);
        match family.as_mut() {
            None => family = Some(GameConstraints::new(instance, &y)),
            Some(f) => f.push_move(instance, &y)?,
        }
        visit(i + 1, family.as_ref().expect("set above"), record);
    }
    Ok(())
}

/// `‖x̄_t − x̄_T‖` for every `t`, with `x̄` maintained incrementally.
pub fn averaged_iterate_convergence(log: &MetricsLog) -> Vec<f64> {
    let last = log.averaged_iterate(log.records.len());
    let mut mean = DVector::zeros(log.metadata.n);
    log.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            mean += (DVector::from_column_slice(&r.step.x) - &mean) / (i + 1) as f64;
            (&mean - &last).norm()
        })
        .collect()
}

/// Share of resource rows violated at `x_t`.
pub fn violated_fraction_series(log: &MetricsLog) -> Vec<f64> {
    let m = log.metadata.m.max(1) as f64;
    log.records
        .iter()
        .map(|r| r.resource_violated as f64 / m)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// One emitted row; the CSV columns in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmittedRow {
    pub t: usize,
    pub cost: f64,
    pub regret: Option<f64>,
    pub max_violation: f64,
    pub violated_fraction: f64,
    pub avg_iterate_distance: f64,
    pub eta: f64,
    pub velocity_norm: f64,
    pub kkt_residual: f64,
    pub projection_rows: usize,
    pub hypersphere_active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonRecord {
    #[serde(flatten)]
    row: EmittedRow,
    violated_count: usize,
    resource_violated: usize,
    x: Vec<f64>,
    v: Vec<f64>,
    r: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JsonLog {
    metadata: RunMetadata,
    checkpoints: Vec<CheckpointBenchmark>,
    records: Vec<JsonRecord>,
}

pub fn emitted_rows(log: &MetricsLog) -> Vec<EmittedRow> {
    log.records
        .iter()
        .enumerate()
        .map(|(i, r)| EmittedRow {
            t: r.step.t,
            cost: r.step.cost,
            regret: log.regret.get(i).copied().flatten(),
            max_violation: r.max_violation,
            violated_fraction: log.violated_fraction[i],
            avg_iterate_distance: log.avg_iterate_distance[i],
            eta: r.step.eta,
            velocity_norm: r.step.velocity_norm(),
            kkt_residual: r.step.kkt_residual,
            projection_rows: r.step.projection_rows,
            hypersphere_active: r.step.hypersphere_active,
        })
        .collect()
}

pub fn to_csv(log: &MetricsLog) -> String {
    let mut out = String::with_capacity(64 * (log.records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in emitted_rows(log) {
        let regret = row.regret.map(|r| r.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.t,
            row.cost,
            regret,
            row.max_violation,
            row.violated_fraction,
            row.avg_iterate_distance,
            row.eta,
            row.velocity_norm,
            row.kkt_residual,
            row.projection_rows,
            row.hypersphere_active,
        )
        .expect("writing to a string");
    }
    out
}

pub fn to_json(log: &MetricsLog) -> String {
    let records = emitted_rows(log)
        .into_iter()
        .zip(&log.records)
        .map(|(row, r)| JsonRecord {
            row,
            violated_count: r.step.violated_count,
            resource_violated: r.resource_violated,
            x: r.step.x.clone(),
            v: r.step.v.clone(),
            r: r.step.r.clone(),
            y: r.y.clone(),
        })
        .collect();
    let doc = JsonLog {
        metadata: log.metadata.clone(),
        checkpoints: log.checkpoints.clone(),
        records,
    };
    let mut s = serde_json::to_string(&doc).expect("log serializes");
    s.push('\n');
    s
}

pub fn emit(log: &MetricsLog, format: OutputFormat, path: &Path) -> Result<()> {
    let body = match format {
        OutputFormat::Csv => to_csv(log),
        OutputFormat::Json => to_json(log),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Rebuild a log from JSON emitted by [`emit`]; derived series are recomputed.
pub fn parse_json(text: &str) -> std::result::Result<(MetricsLog, Vec<EmittedRow>), serde_json::Error> {
    let doc: JsonLog = serde_json::from_str(text)?;
    let emitted: Vec<EmittedRow> = doc.records.iter().map(|r| r.row.clone()).collect();
    let records = doc
        .records
        .into_iter()
        .map(|r| RoundRecord {
            step: StepRecord {
                t: r.row.t,
                eta: r.row.eta,
                x: r.x,
                v: r.v,
                r: r.r,
                cost: r.row.cost,
                violated_count: r.violated_count,
                hypersphere_active: r.row.hypersphere_active,
                kkt_residual: r.row.kkt_residual,
                projection_rows: r.row.projection_rows,
            },
            y: r.y,
            max_violation: r.row.max_violation,
            resource_violated: r.resource_violated,
        })
        .collect();
    Ok((MetricsLog::new(doc.metadata, records, doc.checkpoints), emitted))
}

pub fn load_json(path: &Path) -> Result<(MetricsLog, Vec<EmittedRow>)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
