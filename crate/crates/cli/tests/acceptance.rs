//! Acceptance suite: runs every criterion and prints one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use threshfair::baselearner::{LabeledSample, UnlabeledSample};
use threshfair::data::{generate_synthetic, SyntheticConfig};
use threshfair::experiments::{
    DataSource, Method, PreparedRun, Prescription, ProtocolConfig, SweepPoint,
};
use threshfair::metrics::unfairness;
use threshfair::rng::{stream, Stream};
use threshfair::{
    solve_dual, CalibrationSet, DitherConfig, FairPredictor, FairnessSpec, Grid, GroupId,
    SolverOptions,
};

const SEEDS: std::ops::Range<u64> = 0..10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Every method the synthetic criteria need, for one seed.
struct SeedRuns {
    lz: SweepPoint,
    lz_seconds: f64,
    unconstrained: SweepPoint,
    zdp1: SweepPoint,
    zdp3: SweepPoint,
    strong: SweepPoint,
    lz_k21: SweepPoint,
    lz_k2001: SweepPoint,
}

fn run_seed(seed: u64) -> SeedRuns {
    let cfg = ProtocolConfig::default();
    let source = DataSource::Synthetic(SyntheticConfig::default());
    let lz = Method::Lz(Prescription::global());

    let start = Instant::now();
    let run = PreparedRun::from_source(&source, &cfg, seed).unwrap();
    let (lz_point, _) = run.run_method(&lz, &cfg.solver).unwrap();
    let lz_seconds = start.elapsed().as_secs_f64();

    let point = |m: &Method| run.run_method(m, &cfg.solver).unwrap().0;
    let at_k = |k: usize| {
        let cfg = ProtocolConfig {
            grid_size: k,
            ..ProtocolConfig::default()
        };
        let run = PreparedRun::from_source(&source, &cfg, seed).unwrap();
        run.run_method(&lz, &cfg.solver).unwrap().0
    };
    SeedRuns {
        lz: lz_point,
        lz_seconds,
        unconstrained: point(&Method::Unconstrained),
        zdp1: point(&Method::Zdp { m: 1 }),
        zdp3: point(&Method::Zdp { m: 3 }),
        strong: point(&Method::StrongDp),
        lz_k21: at_k(21),
        lz_k2001: at_k(2001),
    }
}

fn constraint_satisfaction(runs: &[SeedRuns]) -> Verdict {
    let worst_calib = runs
        .iter()
        .map(|r| r.lz.calib_violation.unwrap())
        .fold(0.0, f64::max);
    let test_u = mean(runs.iter().map(|r| r.lz.report.u()));
    let slowest = runs.iter().map(|r| r.lz_seconds).fold(0.0, f64::max);
    verdict(
        worst_calib <= 0.01 && test_u <= 0.05 && slowest <= 60.0,
        format!("max calibration U {worst_calib:.4} (<= 0.01), mean test U {test_u:.4} (<= 0.05), slowest seed {slowest:.2}s"),
    )
}

fn strong_dp_recovery(runs: &[SeedRuns]) -> Verdict {
    let ks = mean(runs.iter().map(|r| r.strong.report.ks));
    let base = mean(runs.iter().map(|r| r.unconstrained.report.ks));
    verdict(
        ks <= 0.08 && base >= 0.3,
        format!("mean KS {ks:.4} (<= 0.08), unconstrained mean KS {base:.4} (>= 0.3)"),
    )
}

/// Counts adjacent pairs that break the expected direction and the largest
/// break; `rising` asks for a non-decreasing sequence.
fn inversions(xs: &[f64], rising: bool) -> (usize, f64) {
    xs.windows(2).fold((0, 0.0), |(n, worst), w| {
        let drop = if rising { w[0] - w[1] } else { w[1] - w[0] };
        if drop > 0.0 {
            (n + 1, f64::max(worst, drop))
        } else {
            (n, worst)
        }
    })
}

fn tradeoff_ordering(runs: &[SeedRuns]) -> Verdict {
    let ks = [
        mean(runs.iter().map(|r| r.zdp1.report.ks)),
        mean(runs.iter().map(|r| r.zdp3.report.ks)),
        mean(runs.iter().map(|r| r.strong.report.ks)),
    ];
    let price = [
        mean(runs.iter().map(|r| r.zdp1.report.rmse_price)),
        mean(runs.iter().map(|r| r.zdp3.report.rmse_price)),
        mean(runs.iter().map(|r| r.strong.report.rmse_price)),
    ];
    let (n_ks, w_ks) = inversions(&ks, false);
    let (n_price, w_price) = inversions(&price, true);
    let total = n_ks + n_price;
    verdict(
        total == 0 || (total == 1 && w_ks.max(w_price) <= 0.01),
        format!(
            "M=1,3,full: KS {:.4} {:.4} {:.4}; rmse_price {:.3} {:.3} {:.3}; inversions {total}",
            ks[0], ks[1], ks[2], price[0], price[1], price[2]
        ),
    )
}

fn unconstrained_price(runs: &[SeedRuns]) -> Verdict {
    let worst = runs
        .iter()
        .map(|r| r.unconstrained.report.rmse_price)
        .fold(0.0, f64::max);
    verdict(
        worst == 0.0,
        format!("largest rmse_price over seeds {worst}"),
    )
}

/// `min_k [pi (y_k - f)^2]` split by which side of `z` the grid point lies on.
fn sided_costs(grid: &Grid, weight: f64, z: f64, f: f64) -> (f64, f64) {
    let mut below = f64::INFINITY;
    let mut above = f64::INFINITY;
    for &y in grid.points() {
        let c = weight * (y - f) * (y - f);
        if y <= z {
            below = below.min(c);
        } else {
            above = above.min(c);
        }
    }
    (below, above)
}

fn solver_oracle() -> Verdict {
    let grid = Grid::new(1.0, 21).unwrap();
    let mut rng = stream(5, Stream::Synthetic);
    let mut entries = Vec::new();
    for _ in 0..40 {
        entries.push((rng.random_range(-1.0..0.6), GroupId::new("a")));
    }
    for _ in 0..60 {
        entries.push((rng.random_range(-0.4..1.0), GroupId::new("b")));
    }
    let (level, z) = (0.5, 0.0);
    let calib = CalibrationSet::new(entries, None).unwrap();
    let spec = FairnessSpec::lz(vec![level], vec![z]).unwrap();
    let opts = SolverOptions {
        max_iters: 20_000,
        tol: 1e-9,
        ..SolverOptions::default()
    };
    let outcome = solve_dual(&calib, &grid, &spec, &opts).unwrap();

    // The objective separates over groups:
    // H = sum_s mean_i max(-below_i - lam_s (1 - l), -above_i + lam_s l).
    let start = Instant::now();
    let steps: Vec<f64> = (0..=1200).map(|i| -3.0 + 0.005 * i as f64).collect();
    let per_group: Vec<Vec<f64>> = (0..2)
        .map(|s| {
            let w = calib.weights()[s];
            let costs: Vec<(f64, f64)> = calib
                .group_scores(s)
                .iter()
                .map(|&f| sided_costs(&grid, w, z, f))
                .collect();
            steps
                .iter()
                .map(|&lam| {
                    costs
                        .iter()
                        .map(|&(b, a)| f64::max(-b - lam * (1.0 - level), -a + lam * level))
                        .sum::<f64>()
                        / costs.len() as f64
                })
                .collect()
        })
        .collect();
    let mut brute = f64::INFINITY;
    for h0 in &per_group[0] {
        for h1 in &per_group[1] {
            brute = brute.min(h0 + h1);
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let gap = (outcome.final_objective - brute).abs();
    verdict(
        gap <= 1e-2 && seconds <= 10.0,
        format!(
            "solver {:.6} after {} iterations (max |lambda| {:.3}), grid search {brute:.6}, |diff| {gap:.2e} (<= 1e-2), oracle {seconds:.2}s",
            outcome.final_objective,
            outcome.iterations,
            outcome.lambda.max_abs()
        ),
    )
}

/// Random instances for the convexity and subgradient checks.
fn random_instance(rng: &mut impl Rng) -> (CalibrationSet, Grid, FairnessSpec) {
    let grid = Grid::new(rng.random_range(0.5..5.0), rng.random_range(3..30)).unwrap();
    let a = grid.bound();
    let n = rng.random_range(5..60);
    let entries: Vec<(f64, GroupId)> = (0..n)
        .map(|i| {
            let g = if i < 2 { i } else { rng.random_range(0..3) };
            (rng.random_range(-a..a), GroupId::new(format!("g{g}")))
        })
        .collect();
    let calib = CalibrationSet::new(entries, None).unwrap();
    let z1 = rng.random_range(-a..0.0);
    let z2 = rng.random_range(0.0..a);
    let spec = match rng.random_range(0..4) {
        0 => FairnessSpec::lz(vec![0.3, 0.7], vec![z1, z2]).unwrap(),
        1 => FairnessSpec::zdp(vec![z1, z2]).unwrap(),
        2 => FairnessSpec::border([z1, z2], [0.2, 0.8], rng.random_range(1..4)).unwrap(),
        _ => FairnessSpec::strong_dp(&grid).unwrap(),
    };
    (calib, grid, spec)
}

fn random_lambda(
    rng: &mut impl Rng,
    calib: &CalibrationSet,
    spec: &FairnessSpec,
) -> threshfair::DualParams {
    let rows = (0..calib.groups().len())
        .map(|_| {
            (0..spec.num_constraints())
                .map(|_| rng.random_range(-3.0..3.0))
                .collect()
        })
        .collect();
    threshfair::DualParams::from_rows(rows).unwrap()
}

fn convexity_and_subgradient() -> Verdict {
    use threshfair::calibration::{dual_objective, dual_subgradient};
    let mut rng = stream(6, Stream::Synthetic);
    let mut convex_fail = 0;
    for _ in 0..200 {
        let (calib, grid, spec) = random_instance(&mut rng);
        let a = random_lambda(&mut rng, &calib, &spec);
        let b = random_lambda(&mut rng, &calib, &spec);
        let mid = a.axpy(0.5, &b.axpy(-1.0, &a));
        let h = |l| dual_objective(l, &calib, &grid, &spec).unwrap();
        if h(&mid) > 0.5 * (h(&a) + h(&b)) + 1e-9 {
            convex_fail += 1;
        }
    }
    let mut sub_fail = 0;
    for _ in 0..100 {
        let (calib, grid, spec) = random_instance(&mut rng);
        let l = random_lambda(&mut rng, &calib, &spec);
        let m = random_lambda(&mut rng, &calib, &spec);
        let h = |x| dual_objective(x, &calib, &grid, &spec).unwrap();
        let g = dual_subgradient(&l, &calib, &grid, &spec).unwrap();
        if h(&m) < h(&l) + g.dot(&m.axpy(-1.0, &l)) - 1e-9 {
            sub_fail += 1;
        }
    }
    verdict(
        convex_fail == 0 && sub_fail == 0,
        format!("midpoint convexity failures {convex_fail}/200, subgradient inequality failures {sub_fail}/100"),
    )
}

fn discretization_cost(runs: &[SeedRuns]) -> Verdict {
    let mut worst_ratio = 0.0f64;
    for (a, k) in [(100.0, 201), (1.0, 21), (3.0, 2)] {
        let grid = Grid::new(a, k).unwrap();
        let bound = a / (k - 1) as f64;
        let n = 1_000_000;
        for i in 0..n {
            let y = -a + 2.0 * a * i as f64 / (n - 1) as f64;
            let err = (grid.snap(y).unwrap() - y).abs();
            worst_ratio = worst_ratio.max(err / bound);
        }
    }
    let risk =
        |f: fn(&SeedRuns) -> &SweepPoint| mean(runs.iter().map(|r| f(r).report.risk_mse.unwrap()));
    let (r21, r201, r2001) = (risk(|r| &r.lz_k21), risk(|r| &r.lz), risk(|r| &r.lz_k2001));
    let (gap21, gap201) = (r21 - r2001, r201 - r2001);
    verdict(
        worst_ratio <= 1.0 + 1e-12 && gap201 > 0.0 && gap201 < gap21,
        format!(
            "snap error / (A/(K-1)) at most {worst_ratio:.12} on 10^6-point lattices; \
             mean risk K=21 {r21:.2}, K=201 {r201:.2}, K=2001 {r2001:.2}; gaps to K=2001 {gap21:.2} > {gap201:.2} > 0"
        ),
    )
}

fn rate_trend() -> Verdict {
    let (n_train, n_big, n_small, n_test) = (2400, 8000, 500, 10_000);
    let cfg = ProtocolConfig::default();
    let lz = Method::Lz(Prescription::global());
    let pairs: Vec<(f64, f64)> = SEEDS
        .into_par_iter()
        .map(|seed| {
            let data = generate_synthetic(&SyntheticConfig {
                n: n_train + n_big + n_test,
                seed,
                ..SyntheticConfig::default()
            })
            .unwrap();
            let train = &data[..n_train];
            let pool: Vec<UnlabeledSample> = data[n_train..n_train + n_big]
                .iter()
                .map(LabeledSample::without_label)
                .collect();
            let test = &data[n_train + n_big..];
            let u = |calib: &[UnlabeledSample]| {
                let run = PreparedRun::from_parts(train, calib, test, &cfg, seed).unwrap();
                run.run_method(&lz, &cfg.solver).unwrap().0.report.u()
            };
            (u(&pool[..n_small]), u(&pool))
        })
        .collect();
    let small = mean(pairs.iter().map(|p| p.0));
    let big = mean(pairs.iter().map(|p| p.1));
    verdict(
        big < small,
        format!("mean test U at N_calib=8000 {big:.4} < at N_calib=500 {small:.4}"),
    )
}

fn cli(dir: &Path, threads: &str, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_threshfair"))
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads)
        .env_remove("THRESHFAIR_SEED")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "threshfair {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs the whole pipeline in a fresh directory and returns every output file.
fn pipeline(threads: &str) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: &[&[&str]] = &[
        &[
            "synth", "--output", "data.csv", "--n", "3000", "--seed", "11",
        ],
        &[
            "split",
            "--input",
            "data.csv",
            "--out-dir",
            "parts",
            "--seed",
            "11",
        ],
        &[
            "train",
            "--input",
            "parts/train.csv",
            "--output",
            "model.json",
        ],
        &[
            "calibrate",
            "--input",
            "parts/calib.csv",
            "--model",
            "model.json",
            "--output",
            "pred.json",
            "--report",
            "report.json",
            "--seed",
            "11",
        ],
        &[
            "predict",
            "--input",
            "parts/test.csv",
            "--model",
            "model.json",
            "--predictor",
            "pred.json",
            "--output",
            "fair.csv",
            "--target-col",
            "y",
        ],
        &[
            "evaluate",
            "--input",
            "fair.csv",
            "--predictor",
            "pred.json",
            "--output",
            "eval.json",
            "--csv",
            "eval.csv",
            "--target-col",
            "y",
        ],
        &[
            "sweep",
            "--output",
            "sweep.csv",
            "--summary",
            "summary.json",
            "--seeds",
            "1..4",
            "--n",
            "1500",
            "--methods",
            "unconstrained,lz:global,zdp:3,strong-dp",
            "--grid-k",
            "51",
        ],
    ];
    for args in steps {
        cli(d, threads, args);
    }
    let mut files = Vec::new();
    for name in [
        "data.csv",
        "parts/train.csv",
        "parts/calib.csv",
        "parts/test.csv",
        "model.json",
        "pred.json",
        "report.json",
        "fair.csv",
        "eval.json",
        "eval.csv",
        "sweep.csv",
        "summary.json",
    ] {
        files.push((name.to_owned(), std::fs::read(d.join(name)).unwrap()));
    }
    files
}

fn determinism() -> Verdict {
    let runs = [pipeline("1"), pipeline("1"), pipeline("4")];
    let differing: Vec<&str> = runs[0]
        .iter()
        .enumerate()
        .filter(|(i, (_, bytes))| runs[1..].iter().any(|r| &r[*i].1 != bytes))
        .map(|(_, (name, _))| name.as_str())
        .collect();
    verdict(
        differing.is_empty(),
        format!(
            "{} output files compared over 3 runs (1, 1 and 4 threads); differing: {:?}",
            runs[0].len(),
            differing
        ),
    )
}

fn cross_module_consistency() -> Verdict {
    let mut rng = stream(10, Stream::Synthetic);
    let mut mismatches = Vec::new();
    for case in 0..20 {
        let (_, grid, spec) = random_instance(&mut rng);
        let a = grid.bound();
        let n_groups = rng.random_range(2..4);
        let raw: Vec<(f64, GroupId)> = (0..rng.random_range(20..300))
            .map(|i| {
                let g = if i < n_groups {
                    i
                } else {
                    rng.random_range(0..n_groups)
                };
                let shift = a * 0.3 * g as f64;
                (
                    rng.random_range(-a..a) * 0.7 + shift,
                    GroupId::new(format!("g{g}")),
                )
            })
            .collect();
        let dither = DitherConfig::new(a * 1e-4, case).unwrap();
        let mut drng = stream(case, Stream::Dither);
        let calib = CalibrationSet::prepare(&raw, &grid, &dither, None, &mut drng).unwrap();
        let opts = SolverOptions {
            max_iters: rng.random_range(1..400),
            tol: 1e-3,
            ..SolverOptions::default()
        };
        let outcome = solve_dual(&calib, &grid, &spec, &opts).unwrap();
        let predictor =
            FairPredictor::from_solution(grid.clone(), spec.clone(), &calib, &outcome, dither)
                .unwrap();
        let preds: Vec<(f64, GroupId)> = calib
            .scores()
            .iter()
            .zip(calib.group_indices())
            .map(|(&v, &g)| {
                (
                    predictor.predict_indexed(v, g).unwrap(),
                    calib.groups()[g].clone(),
                )
            })
            .collect();
        let audit = unfairness(&preds, &spec, Some(calib.groups())).unwrap();
        if audit.max != outcome.final_violation {
            mismatches.push((case, audit.max, outcome.final_violation));
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("20 random configurations, mismatches {mismatches:?}"),
    )
}

fn main() {
    let start = Instant::now();
    let runs: Vec<SeedRuns> = SEEDS.into_par_iter().map(run_seed).collect();
    let checks: Vec<(&str, Verdict)> = vec![
        ("constraint satisfaction", constraint_satisfaction(&runs)),
        ("strong DP recovery", strong_dp_recovery(&runs)),
        ("trade-off ordering", tradeoff_ordering(&runs)),
        ("unconstrained baseline", unconstrained_price(&runs)),
        ("dual solver oracle", solver_oracle()),
        ("convexity and subgradient", convexity_and_subgradient()),
        ("discretization cost", discretization_cost(&runs)),
        ("rate trend", rate_trend()),
        ("determinism", determinism()),
        ("cross-module consistency", cross_module_consistency()),
    ];
    let mut failed = 0;
    for (i, (name, v)) in checks.iter().enumerate() {
        println!(
            "{} criterion {:>2} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        checks.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
