//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any criterion fails.

mod common;

use std::process::Command;
use std::time::Instant;

use common::{run_certified, Certified};
use cvvpro::constraints::{tvc_decay_check, ConstraintFamily};
use cvvpro::diagnostics::{check_bounds, diagnose, Check, DiagnoseOptions, RoundSelection};
use cvvpro::game::{generate_instance, run_simulation, GameInstance, LearnerKind, SimulationConfig};
use cvvpro::learner::{theorem_bounds, LearnerConfig, Theorem};
use cvvpro::metrics::{replay_constraints, MetricsLog};
use cvvpro::rng::{self, NormalSampler, Stream};
use nalgebra::DVector;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const HORIZON: usize = 4000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(criterion: usize, outcome: &Outcome) -> bool {
    let status = if outcome.passed { "PASS" } else { "FAIL" };
    println!("{status} criterion {criterion}: {}", outcome.detail);
    outcome.passed
}

fn ratio(a: f64, b: f64) -> f64 {
    a.max(b) / a.min(b)
}

fn cvvpro_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvvpro"))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let out = cvvpro_bin()
        .args(["qp-selftest", "--instances", "1000", "--seed", "7"])
        .output()
        .expect("binary runs");
    let secs = start.elapsed().as_secs_f64();
    let stdout = String::from_utf8_lossy(&out.stdout);
    Outcome {
        passed: out.status.success() && secs < 30.0,
        detail: format!("{} in {secs:.2}s", stdout.trim()),
    }
}

struct GameRun {
    seed: u64,
    instance: GameInstance,
    log: MetricsLog,
    seconds: f64,
}

fn game_runs() -> Vec<GameRun> {
    std::thread::scope(|s| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    let start = Instant::now();
                    let instance = generate_instance(100, 10, 1.0, seed).unwrap();
                    let mut config =
                        SimulationConfig::experiment(LearnerKind::Cvvpro, &instance, HORIZON, seed);
                    config.extra_checkpoints = vec![100, 400, 1000, 1600];
                    let log = run_simulation(&instance, &config).unwrap();
                    GameRun { seed, instance, log, seconds: start.elapsed().as_secs_f64() }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn criterion_2(runs: &[GameRun]) -> Outcome {
    let start = Instant::now();
    let options = DiagnoseOptions {
        checks: vec![Check::Claim1, Check::Lemma2, Check::Intersection],
        samples: 50,
        rounds: RoundSelection::Every(100),
        seed: 0,
    };
    let reports: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = runs
            .iter()
            .map(|run| s.spawn(|| diagnose(&run.log, &options).unwrap()))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let secs = start.elapsed().as_secs_f64() + runs.iter().map(|r| r.seconds).sum::<f64>();
    let mut passed = secs < 300.0;
    let mut parts = Vec::new();
    for (run, rep) in runs.iter().zip(&reports) {
        let claim = rep.outcome(Check::Claim1).unwrap();
        let lemma = rep.outcome(Check::Lemma2).unwrap();
        let inter = rep.outcome(Check::Intersection).unwrap();
        passed &= claim.passed && lemma.passed && inter.passed && rep.rounds_without_samples == 0;
        parts.push(format!(
            "seed {}: claim1 {} ({} rounds), lemma2 {}, intersection {} ({} of {} cones exclude x*_T)",
            run.seed,
            if claim.passed { "ok" } else { "fail" },
            claim.rounds,
            if lemma.passed { "ok" } else { "fail" },
            if inter.passed { "ok" } else { "fail" },
            inter.failures,
            inter.rounds,
        ));
    }
    Outcome { passed, detail: format!("{}; {secs:.1}s serial", parts.join("; ")) }
}

fn criterion_3(runs: &[GameRun]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for run in runs {
        let mv = |t: usize| run.log.records[t - 1].max_violation;
        let scaled: Vec<f64> = [400, 1600, 4000].iter().map(|&t| mv(t) * (t as f64).sqrt()).collect();
        let hi = scaled.iter().copied().fold(0.0, f64::max);
        let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        let ok = spread <= 3.0 && mv(4000) < mv(100);
        passed &= ok;
        parts.push(format!(
            "seed {}: mv·√t = {:.4}/{:.4}/{:.4} (spread {spread:.2}), mv(100) {:.2e} mv(4000) {:.2e}",
            run.seed, scaled[0], scaled[1], scaled[2], mv(100), mv(4000)
        ));
    }
    Outcome { passed, detail: parts.join("; ") }
}

fn criterion_4(runs: &[GameRun]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for run in runs {
        let at = |t: usize| run.log.regret_at(t).ok();
        let curve: Vec<(usize, f64)> = run
            .log
            .regret
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|r| (i + 1, r)))
            .collect();
        let positive = curve.iter().all(|&(_, r)| r > 0.0);
        let dips: Vec<String> = curve
            .windows(2)
            .filter(|w| w[1].1 <= w[0].1)
            .map(|w| format!("{}->{} ({:.2}->{:.2})", w[0].0, w[1].0, w[0].1, w[1].1))
            .collect();
        let increasing = dips.is_empty();
        let (ok, shape) = match (at(1000), at(4000)) {
            (Some(a), Some(b)) => {
                let q = ratio(a / 1000f64.sqrt(), b / 4000f64.sqrt());
                (q <= 1.5, format!("ratio {q:.3}"))
            }
            _ => (false, "missing benchmark".to_string()),
        };
        passed &= ok && positive && increasing;
        parts.push(format!(
            "seed {}: {shape}, {} checkpoints positive {positive} increasing {increasing}{}",
            run.seed,
            curve.len(),
            if dips.is_empty() { String::new() } else { format!(" (dips {})", dips.join(", ")) }
        ));
    }
    Outcome { passed, detail: parts.join("; ") }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let params = Certified::params();
    let config = LearnerConfig::time_varying(params);
    let horizon = 2000;
    let run = run_certified(horizon, 1, config);
    let checks = check_bounds(&run.records, &run.values, &config, false).unwrap();
    let regret = run.regret();
    let cap = theorem_bounds(&params, horizon, Theorem::Thm2Regret).unwrap().value;
    let mut passed = regret <= cap;
    let mut parts = vec![format!("regret {regret:.3} <= {cap:.1}")];
    for c in &checks {
        passed &= c.applicable && c.failures == 0;
        parts.push(format!("{}: {} of {} violated, worst margin {:.3e}", c.theorem, c.failures, c.evaluated, c.worst_margin));
    }
    let secs = start.elapsed().as_secs_f64();
    passed &= secs < 120.0;
    Outcome { passed, detail: format!("{}; {secs:.2}s", parts.join("; ")) }
}

fn criterion_6(runs: &[GameRun]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for run in runs {
        let d = |t: usize| run.log.avg_iterate_distance[t - 1] * (t as f64).sqrt();
        let q = ratio(d(400), d(1600));
        passed &= q <= 3.0;
        parts.push(format!("seed {}: {:.4} vs {:.4} (ratio {q:.2})", run.seed, d(400), d(1600)));
    }
    Outcome { passed, detail: parts.join("; ") }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let horizon = 2000;
    let seeds = [1u64, 2, 3];
    let pairs: Vec<(u64, MetricsLog, MetricsLog)> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                s.spawn(move || {
                    let instance = generate_instance(200, 20, 1.3, seed).unwrap();
                    let run = |kind| {
                        let config = SimulationConfig::experiment(kind, &instance, horizon, seed);
                        run_simulation(&instance, &config).unwrap()
                    };
                    (seed, run(LearnerKind::Cvvpro), run(LearnerKind::Ogd))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut passed = true;
    let mut parts = Vec::new();
    for (seed, cvv, ogd) in &pairs {
        let vf = &cvv.violated_fraction;
        let peak = vf[..10].iter().copied().fold(0.0, f64::max);
        let later_mean = vf[10..].iter().sum::<f64>() / (vf.len() - 10) as f64;
        let late_max = vf[499..].iter().copied().fold(0.0, f64::max);
        let mean_rows = |log: &MetricsLog| {
            let rows = &log.projection_rows()[99..];
            rows.iter().sum::<usize>() as f64 / rows.len() as f64
        };
        let share = mean_rows(cvv) / mean_rows(ogd);
        passed &= peak > 0.0 && later_mean < peak && late_max < 0.6 && share <= 0.7;
        parts.push(format!(
            "seed {seed}: violated fraction peak {peak:.2} in rounds 1..=10, mean {later_mean:.4} after, \
             max {late_max:.2} for t >= 500; rows {:.1} vs {:.1} ({:.1}%)",
            mean_rows(cvv),
            mean_rows(ogd),
            100.0 * share
        ));
    }
    // The three seeds run concurrently; the serial estimate is what the budget bounds.
    let secs = start.elapsed().as_secs_f64();
    passed &= secs < 300.0;
    Outcome { passed, detail: format!("{}; {secs:.1}s", parts.join("; ")) }
}

fn criterion_8(runs: &[GameRun]) -> Outcome {
    let mut passed = true;
    let mut checked = 0;
    let mut worst_scaled = 0.0_f64;
    let mut worst_identity = 0.0_f64;
    let mut tvc_failures = 0;
    for run in runs {
        let instance = &run.instance;
        let drift = instance.drift_constant();
        let params = instance.function_class();
        let rounds = RoundSelection::Every(100).rounds(HORIZON - 1);
        let mut rng = rng::stream(run.seed, Stream::Samples);
        let mut normal = NormalSampler::default();
        // Points in the ball of radius 4R, not only on the simplex.
        let samples: Vec<DVector<f64>> = (0..100)
            .map(|_| {
                let d = DVector::from_fn(instance.n, |_, _| normal.sample(&mut rng));
                d.normalize() * (4.0 * params.radius * rng::uniform(&mut rng))
            })
            .collect();
        let mut previous = None;
        let mut next_round = rounds.iter().peekable();
        replay_constraints(&run.log, instance, |t, family, record| {
            let Some(prev) = previous.take() else {
                previous = Some(family.clone());
                return;
            };
            let prev: cvvpro::game::GameConstraints = prev;
            let s = t - 1;
            if next_round.peek() == Some(&&s) {
                next_round.next();
                checked += 1;
                let check = tvc_decay_check(&prev, family, &samples, &params, s).unwrap();
                if !check.passes || check.scaled_diff > drift * (1.0 + 1e-9) {
                    tvc_failures += 1;
                }
                worst_scaled = worst_scaled.max(check.scaled_diff / drift);
                let fresh = instance.resource_constraints(&DVector::from_column_slice(&record.y));
                for x in &samples {
                    let before = prev.resources().values(x);
                    let after = family.resources().values(x);
                    let target = (fresh.values(x) - &before).abs() / (s as f64 + 1.0);
                    let gap = ((after - before).abs() - target).amax();
                    worst_identity = worst_identity.max(gap);
                }
            }
            previous = Some(family.clone());
        })
        .unwrap();
    }
    passed &= tvc_failures == 0 && worst_identity <= 1e-10 && checked > 0;
    Outcome {
        passed,
        detail: format!(
            "{checked} round pairs over {} runs; {tvc_failures} decay failures; \
             max (t+1)·|Δg| / drift constant {worst_scaled:.3}; identity gap {worst_identity:.2e}",
            runs.len()
        ),
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut passed = true;
    for (format, horizon) in [("csv", "4000"), ("json", "500")] {
        let files: Vec<Vec<u8>> = ["a", "b"]
            .iter()
            .map(|name| {
                let path = dir.path().join(format!("{name}.{format}"));
                let status = cvvpro_bin()
                    .args([
                        "simulate", "--learner", "cvvpro", "--n", "100", "--m", "10", "--T", horizon,
                        "--alpha", "100", "--capacity", "1", "--instance-seed", "1", "--run-seed", "1",
                        "--format", format, "--out", path.to_str().unwrap(),
                    ])
                    .status()
                    .expect("binary runs");
                assert!(status.success());
                std::fs::read(&path).unwrap()
            })
            .collect();
        let same = files[0] == files[1];
        passed &= same;
        parts.push(format!("{format} T={horizon}: {} bytes, identical {same}", files[0].len()));
    }
    Outcome { passed, detail: parts.join("; ") }
}

fn main() {
    let mut results = Vec::new();
    results.push(report(1, &criterion_1()));
    let runs = game_runs();
    results.push(report(2, &criterion_2(&runs)));
    results.push(report(3, &criterion_3(&runs)));
    results.push(report(4, &criterion_4(&runs)));
    results.push(report(5, &criterion_5()));
    results.push(report(6, &criterion_6(&runs)));
    results.push(report(7, &criterion_7()));
    results.push(report(8, &criterion_8(&runs)));
    results.push(report(9, &criterion_9()));
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
