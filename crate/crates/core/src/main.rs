use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use cvvpro::diagnostics::{diagnose, Check, DiagnoseOptions, RoundSelection};
use cvvpro::game::{
    generate_instance, run_simulation, CheckpointMode, LearnerKind, SimulationConfig, DEFAULT_MIX,
};
use cvvpro::learner::LearnerConfig;
use cvvpro::metrics::{emit, load_json, MetricsLog, OutputFormat};
use cvvpro::selftest::run_selftest;
use cvvpro::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "cvvpro", version, about = "Velocity-projection online learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Play the resource game with one learner and write its metrics.
    Simulate(SimulateArgs),
    /// Run both learners on each seed and write paired logs.
    Compare(CompareArgs),
    /// Check structural properties along a JSON log.
    Diagnose(DiagnoseArgs),
    /// Compare the projection solver against active-set enumeration.
    QpSelftest(SelftestArgs),
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "cvvpro")]
    learner: LearnerKind,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long = "T", default_value_t = 4000)]
    horizon: usize,
    /// Defaults to L_F/R of the generated instance.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    capacity: f64,
    #[arg(long = "d-offset", default_value = "0", value_parser = ["0", "15"])]
    d_offset: String,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    augment: bool,
    #[arg(long = "instance-seed", default_value_t = 0)]
    instance_seed: u64,
    #[arg(long = "run-seed", default_value_t = 0)]
    run_seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
    #[arg(long, value_enum, default_value = "log")]
    checkpoints: CheckpointMode,
    /// Additional benchmark rounds, comma separated.
    #[arg(long = "extra-checkpoints", value_delimiter = ',')]
    extra_checkpoints: Vec<usize>,
}

#[derive(Debug, clap::Args)]
struct CompareArgs {
    #[arg(long = "T", default_value_t = 2000)]
    horizon: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 1.3)]
    capacity: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 100.0)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct DiagnoseArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "claim1,lemma2,intersection,recursion,bounds")]
    checks: Vec<String>,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also check every k-th round besides the powers of two.
    #[arg(long)]
    every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, clap::Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Compare(args) => compare(args),
        Command::Diagnose(args) => diagnose_cmd(args),
        Command::QpSelftest(args) => selftest(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(EXIT_NUMERICAL)
            } else if matches!(e.root(), Error::InvalidArgument(_) | Error::UnknownTheorem(_)) {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn simulate(args: SimulateArgs) -> cvvpro::Result<ExitCode> {
    let instance = generate_instance(args.n, args.m, args.capacity, args.instance_seed)?;
    let params = instance.function_class();
    let config = SimulationConfig {
        learner: args.learner,
        horizon: args.horizon,
        learner_config: LearnerConfig {
            alpha: args.alpha.unwrap_or_else(|| params.default_alpha()),
            step_offset: args.d_offset.parse().expect("restricted by clap"),
            augment: args.augment,
            params,
        },
        run_seed: args.run_seed,
        checkpoints: args.checkpoints,
        extra_checkpoints: args.extra_checkpoints,
        mix: DEFAULT_MIX,
    };
    let log = run_simulation(&instance, &config)?;
    emit(&log, args.format, &args.out)?;
    report_failed_checkpoints(&log);
    Ok(ExitCode::SUCCESS)
}

fn report_failed_checkpoints(log: &MetricsLog) {
    for c in log.checkpoints.iter().filter(|c| c.result.is_none()) {
        eprintln!(
            "warning: no benchmark at t={}: {}",
            c.t,
            c.failure.as_deref().unwrap_or("unknown")
        );
    }
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    seed: u64,
    cvvpro_mean_rows: f64,
    ogd_mean_rows: f64,
    row_ratio: f64,
    cvvpro_seconds: f64,
    ogd_seconds: f64,
    cvvpro_final_max_violation: f64,
    cvvpro_peak_violated_fraction_first_10: f64,
    cvvpro_max_violated_fraction_after_500: f64,
}

fn mean_rows_from(log: &MetricsLog, from: usize) -> f64 {
    let rows = &log.projection_rows()[from.min(log.horizon()).saturating_sub(1)..];
    rows.iter().sum::<usize>() as f64 / rows.len().max(1) as f64
}

fn compare(args: CompareArgs) -> cvvpro::Result<ExitCode> {
    std::fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    let mut summaries = Vec::new();
    for &seed in &args.seeds {
        let instance = generate_instance(args.n, args.m, args.capacity, seed)?;
        let mut logs = Vec::new();
        for learner in [LearnerKind::Cvvpro, LearnerKind::Ogd] {
            let mut config = SimulationConfig::experiment(learner, &instance, args.horizon, seed);
            config.learner_config.alpha = args.alpha;
            let start = Instant::now();
            let log = run_simulation(&instance, &config)?;
            let seconds = start.elapsed().as_secs_f64();
            let path = args.out.join(format!("seed{seed}_{}.csv", learner.name()));
            emit(&log, OutputFormat::Csv, &path)?;
            report_failed_checkpoints(&log);
            logs.push((log, seconds));
        }
        let (cvv, cvv_secs) = &logs[0];
        let (ogd, ogd_secs) = &logs[1];
        let vf = &cvv.violated_fraction;
        let summary = CompareSummary {
            seed,
            cvvpro_mean_rows: mean_rows_from(cvv, 100),
            ogd_mean_rows: mean_rows_from(ogd, 100),
            row_ratio: mean_rows_from(cvv, 100) / mean_rows_from(ogd, 100),
            cvvpro_seconds: *cvv_secs,
            ogd_seconds: *ogd_secs,
            cvvpro_final_max_violation: cvv.records.last().map_or(0.0, |r| r.max_violation),
            cvvpro_peak_violated_fraction_first_10: vf.iter().take(10).copied().fold(0.0, f64::max),
            cvvpro_max_violated_fraction_after_500: vf.iter().skip(499).copied().fold(0.0, f64::max),
        };
        println!(
            "seed {seed}: mean projection rows (t >= 100) cvvpro {} ogd {} ratio {:.3}",
            summary.cvvpro_mean_rows, summary.ogd_mean_rows, summary.row_ratio
        );
        summaries.push(summary);
    }
    write_json(&args.out.join("summary.json"), &summaries)?;
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> cvvpro::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn diagnose_cmd(args: DiagnoseArgs) -> cvvpro::Result<ExitCode> {
    let checks = args
        .checks
        .iter()
        .map(|c| c.parse::<Check>())
        .collect::<cvvpro::Result<Vec<_>>>()?;
    let (log, _) = load_json(&args.log)?;
    let options = DiagnoseOptions {
        checks,
        samples: args.samples,
        rounds: match args.every {
            Some(k) if k > 0 => RoundSelection::Every(k),
            _ => RoundSelection::Geometric,
        },
        seed: args.seed,
    };
    let report = diagnose(&log, &options)?;
    for o in &report.outcomes {
        println!(
            "{:<12} {}  evaluated {} failures {} worst margin {}  ({})",
            serde_json::to_value(o.check).expect("check serializes").as_str().unwrap_or("?"),
            if o.passed { "PASS" } else { "FAIL" },
            o.evaluated,
            o.failures,
            o.worst_margin,
            o.detail
        );
    }
    write_json(&args.out, &report)?;
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK)
    })
}

fn selftest(args: SelftestArgs) -> cvvpro::Result<ExitCode> {
    let start = Instant::now();
    let report = run_selftest(args.instances, args.seed)?;
    println!(
        "qp-selftest: {} instances, {} mismatches, max deviation {:e}, {:.2}s",
        report.instances,
        report.mismatches.len(),
        report.max_deviation,
        start.elapsed().as_secs_f64()
    );
    if !report.passed() {
        let shown: Vec<String> = report.mismatches.iter().take(20).map(|i| i.to_string()).collect();
        println!("mismatched instances: {}", shown.join(","));
        return Ok(ExitCode::from(EXIT_CHECK));
    }
    Ok(ExitCode::SUCCESS)
}
