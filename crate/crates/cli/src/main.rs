mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use threshfair::baselearner::{LabeledSample, RegressionTree, TreeParams};
use threshfair::data::{generate_synthetic, load_csv, split, SplitConfig, SyntheticConfig};
use threshfair::experiments::{
    aggregate, prescribe_thresholds, quantile_thresholds, run_protocol, write_sweep_csv,
    DataSource, Method, Prescription, PrescriptionMode, ProtocolConfig, QUARTILES,
};
use threshfair::metrics::evaluate;
use threshfair::rng::{stream, Stream};
use threshfair::{
    solve_dual, CalibrationSet, DitherConfig, FairPredictor, FairnessSpec, Grid, GroupId,
    SolverOptions,
};

use crate::io::{
    auto_grid_size, csv_bytes, json_bytes, parse_seeds, resolve_features, write_atomic, BaseModel,
    ScoreSource,
};

#[derive(Parser)]
#[command(
    name = "threshfair",
    version,
    about = "Post-process regression scores to meet threshold-level fairness constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-group synthetic dataset as CSV (x1, x2, s, y).
    Synth(SynthArgs),
    /// Split a labeled CSV into train, calibration (labels dropped) and test files.
    Split(SplitArgs),
    /// Fit the built-in regression tree.
    Train(TrainArgs),
    /// Estimate the dual multipliers on unlabeled data and write a predictor.
    Calibrate(CalibrateArgs),
    /// Apply a calibrated predictor.
    Predict(PredictArgs),
    /// Score fair predictions: price of fairness, unfairness, KS, risk.
    Evaluate(EvaluateArgs),
    /// Run several methods over several seeds and write per-seed and aggregated results.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Master seed; every random stage draws from its own sub-stream.
    #[arg(long, env = "THRESHFAIR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GridArgs {
    /// Output bound A; predictions live on a regular grid of [-A, A].
    #[arg(long, default_value_t = 100.0)]
    grid_a: f64,
    /// Number of grid points K (default 201).
    #[arg(long, conflicts_with = "grid_auto")]
    grid_k: Option<usize>,
    /// Pick K = ceil(N^(1/3)) from the calibration size, rounded up to odd.
    #[arg(long)]
    grid_auto: bool,
}

impl GridArgs {
    fn size(&self, n_calib: usize) -> usize {
        if self.grid_auto {
            auto_grid_size(n_calib)
        } else {
            self.grid_k.unwrap_or(201)
        }
    }

    fn build(&self, n_calib: usize) -> Result<Grid> {
        Ok(Grid::new(self.grid_a, self.size(n_calib))?)
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 20_000)]
    solver_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    solver_c0: f64,
    /// Target for the largest calibration-set constraint violation.
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
}

impl SolverArgs {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.solver_iters,
            c0: self.solver_c0,
            tol: self.tol,
            ..SolverOptions::default()
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// Model file from `train`.
    #[arg(
        long,
        conflicts_with = "pred_col",
        required_unless_present = "pred_col"
    )]
    model: Option<PathBuf>,
    /// Column holding precomputed base scores, instead of a model.
    #[arg(long)]
    pred_col: Option<String>,
    /// Feature columns (default: those recorded in the model).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, default_value = "s")]
    group_col: String,
}

impl ScoreArgs {
    fn source(&self) -> Result<ScoreSource> {
        ScoreSource::new(
            self.model.as_deref(),
            self.pred_col.as_deref(),
            self.features.as_deref(),
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    /// Prescribed CDF levels at thresholds.
    Lz,
    /// Group CDFs equal to the pooled CDF at thresholds.
    Zdp,
    /// Levels at two borders, pooled parity on an inner grid between them.
    Border,
    /// Pooled parity at every interior grid point.
    StrongDp,
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, value_enum, default_value_t = Variant::Lz)]
    spec_variant: Variant,
    /// CDF levels (default 0.25,0.5,0.75; 0.25,0.75 for border).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    levels: Option<Vec<f64>>,
    /// Explicit thresholds; otherwise they are quantiles of the calibration scores.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        conflicts_with = "prescription"
    )]
    thresholds: Option<Vec<f64>>,
    /// Where quantile thresholds come from: `global` or `target:<group>`.
    #[arg(long)]
    prescription: Option<String>,
    /// Inner grid size for the border variant.
    #[arg(long, default_value_t = 9)]
    inner: usize,
}

fn parse_prescription(text: Option<&str>) -> Result<PrescriptionMode> {
    match text {
        None | Some("global") => Ok(PrescriptionMode::Global),
        Some(t) => match t.strip_prefix("target:") {
            Some(g) if !g.is_empty() => Ok(PrescriptionMode::TargetGroup(GroupId::new(g))),
            _ => bail!("prescription must be `global` or `target:<group>`, got `{t}`"),
        },
    }
}

impl SpecArgs {
    fn build(&self, scores: &[(f64, GroupId)], grid: &Grid) -> Result<FairnessSpec> {
        let levels = || match (&self.levels, self.spec_variant) {
            (Some(l), _) => l.clone(),
            (None, Variant::Border) => vec![0.25, 0.75],
            (None, _) => QUARTILES.to_vec(),
        };
        let mode = parse_prescription(self.prescription.as_deref())?;
        // quantile thresholds from the prescribed score set
        let quantiles = |levels: &[f64]| -> Result<Vec<f64>> {
            let values: Vec<f64> = match &mode {
                PrescriptionMode::TargetGroup(g) => {
                    let own: Vec<f64> = scores
                        .iter()
                        .filter(|(_, s)| s == g)
                        .map(|(v, _)| *v)
                        .collect();
                    if own.is_empty() {
                        bail!("target group `{g}` has no calibration rows");
                    }
                    own
                }
                _ => scores.iter().map(|(v, _)| *v).collect(),
            };
            Ok(quantile_thresholds(&values, levels)?)
        };
        let spec = match self.spec_variant {
            Variant::Lz => match &self.thresholds {
                Some(z) => FairnessSpec::lz(levels(), z.clone())?,
                None => prescribe_thresholds(
                    scores,
                    &Prescription {
                        mode: mode.clone(),
                        levels: levels(),
                    },
                )?,
            },
            Variant::Zdp => match &self.thresholds {
                Some(z) => FairnessSpec::zdp(z.clone())?,
                None => FairnessSpec::zdp(quantiles(&levels())?)?,
            },
            Variant::Border => {
                let l = levels();
                if l.len() != 2 {
                    bail!("the border variant takes exactly two levels");
                }
                let z = match &self.thresholds {
                    Some(z) => z.clone(),
                    None => quantiles(&l)?,
                };
                if z.len() != 2 {
                    bail!("the border variant takes exactly two thresholds");
                }
                FairnessSpec::border([z[0], z[1]], [l[0], l[1]], self.inner)?
            }
            Variant::StrongDp => FairnessSpec::strong_dp(grid)?,
        };
        spec.validate_for(grid)?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    p_group_b: f64,
    /// Standard deviation of the Gaussian noise.
    #[arg(long, default_value_t = 5.0)]
    noise_sd: f64,
    /// Targets are clipped to [-bound, bound].
    #[arg(long, default_value_t = 100.0)]
    bound: f64,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving train.csv, calib.csv and test.csv.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, default_value = "s")]
    group_col: String,
    #[arg(long, default_value = "y")]
    target_col: String,
    #[arg(long, default_value_t = 0.6)]
    train: f64,
    #[arg(long, default_value_t = 0.2)]
    calibration: f64,
    #[arg(long, default_value_t = 0.2)]
    test: f64,
    /// Split each group separately.
    #[arg(long)]
    stratified: bool,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, default_value = "s")]
    group_col: String,
    #[arg(long, default_value = "y")]
    target_col: String,
    #[arg(long, default_value_t = 20)]
    min_leaf: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Do not give the group to the tree as a feature.
    #[arg(long)]
    ignore_group: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Unlabeled calibration CSV.
    #[arg(long)]
    input: PathBuf,
    /// Predictor file to write.
    #[arg(long)]
    output: PathBuf,
    /// Calibration report (JSON); printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    scores: ScoreArgs,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Dither width u (default 2e-6 * A).
    #[arg(long)]
    dither_u: Option<f64>,
    /// Dither scores at prediction time as well.
    #[arg(long)]
    dither_at_prediction: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    seed: SeedArg,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    predictor: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    scores: ScoreArgs,
    /// Copy this column to the output as `y`.
    #[arg(long)]
    target_col: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions CSV with s, base_score and fair_value columns.
    #[arg(long)]
    input: PathBuf,
    /// Report JSON.
    #[arg(long)]
    output: PathBuf,
    /// Also write the headline numbers as a one-row CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Take the constraint spec from this predictor.
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "s")]
    group_col: String,
    #[arg(long)]
    target_col: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// Per-seed results CSV.
    #[arg(long)]
    output: PathBuf,
    /// Aggregated JSON summary.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Labeled dataset; the synthetic generator is used when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long, default_value = "s")]
    group_col: String,
    #[arg(long, default_value = "y")]
    target_col: String,
    /// Synthetic sample size per seed.
    #[arg(long, default_value_t = 4000)]
    n: usize,
    /// Seeds, as ranges and lists: `1..10`, `1,4,9`.
    #[arg(long, default_value = "1..10")]
    seeds: String,
    /// Methods: unconstrained, lz:global, lz:target:<group>, zdp:<M>, range, strong-dp.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "unconstrained,lz:global,zdp:1,zdp:3,range,strong-dp"
    )]
    methods: Vec<String>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 1e-4)]
    dither_u: f64,
    /// Use undithered base scores at prediction time.
    #[arg(long)]
    no_prediction_dither: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_method(text: &str) -> Result<Method> {
    let t = text.trim();
    Ok(match t {
        "unconstrained" => Method::Unconstrained,
        "lz" | "lz:global" => Method::Lz(Prescription::global()),
        "range" => Method::default_range(),
        "strong-dp" => Method::StrongDp,
        _ => {
            if let Some(g) = t.strip_prefix("lz:target:") {
                Method::Lz(Prescription::target(g))
            } else if let Some(m) = t.strip_prefix("zdp:") {
                Method::Zdp {
                    m: m.parse()
                        .with_context(|| format!("bad threshold count in `{t}`"))?,
                }
            } else {
                bail!("unknown method `{t}`");
            }
        }
    })
}

/// Outcome of a command that ran to completion.
enum Status {
    Done,
    /// The solver stopped above tolerance; outputs were still written.
    ToleranceNotMet,
}

fn synth(args: &SynthArgs) -> Result<Status> {
    let cfg = SyntheticConfig {
        n: args.n,
        p_group_b: args.p_group_b,
        noise_sd: args.noise_sd,
        bound: args.bound,
        seed: args.seed.seed,
    };
    let data = generate_synthetic(&cfg)?;
    let mut buf = Vec::new();
    threshfair::data::write_csv(&data, &mut buf)?;
    write_atomic(&args.output, &buf)?;
    println!("wrote {} rows to {}", data.len(), args.output.display());
    Ok(Status::Done)
}

fn write_labeled(
    path: &Path,
    features: &[String],
    samples: &[LabeledSample],
    with_y: bool,
) -> Result<()> {
    let mut header: Vec<&str> = features.iter().map(String::as_str).collect();
    header.push("s");
    if with_y {
        header.push("y");
    }
    let bytes = csv_bytes(&header, |w| {
        for s in samples {
            let mut rec: Vec<String> = s.x.iter().map(f64::to_string).collect();
            rec.push(s.s.to_string());
            if with_y {
                rec.push(s.y.to_string());
            }
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_atomic(path, &bytes)
}

fn split_cmd(args: &SplitArgs) -> Result<Status> {
    let features = resolve_features(
        &args.input,
        args.features.as_deref(),
        &args.group_col,
        Some(&args.target_col),
    )?;
    let data = load_csv(
        &args.input,
        &features,
        &args.group_col,
        Some(&args.target_col),
    )?
    .labeled()?;
    let cfg = SplitConfig {
        train: args.train,
        calibration: args.calibration,
        test: args.test,
        seed: args.seed.seed,
        stratified: args.stratified,
    };
    let (train, calib, test) = split(&data, &cfg)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let calib: Vec<LabeledSample> = calib
        .into_iter()
        .map(|u| LabeledSample {
            x: u.x,
            s: u.s,
            y: 0.0,
        })
        .collect();
    write_labeled(&args.out_dir.join("train.csv"), &features, &train, true)?;
    write_labeled(&args.out_dir.join("calib.csv"), &features, &calib, false)?;
    write_labeled(&args.out_dir.join("test.csv"), &features, &test, true)?;
    println!(
        "train {} / calibration {} / test {} rows in {}",
        train.len(),
        calib.len(),
        test.len(),
        args.out_dir.display()
    );
    Ok(Status::Done)
}

fn train(args: &TrainArgs) -> Result<Status> {
    let features = resolve_features(
        &args.input,
        args.features.as_deref(),
        &args.group_col,
        Some(&args.target_col),
    )?;
    let data = load_csv(
        &args.input,
        &features,
        &args.group_col,
        Some(&args.target_col),
    )?
    .labeled()?;
    let params = TreeParams {
        min_samples_leaf: args.min_leaf,
        max_depth: args.max_depth,
    };
    let tree = if args.ignore_group {
        RegressionTree::fit(&data, params)?
    } else {
        RegressionTree::fit_with_groups(&data, params)?
    };
    let leaves = tree.n_leaves();
    let model = BaseModel { features, tree };
    write_atomic(&args.output, &model.to_bytes()?)?;
    println!("fitted tree with {leaves} leaves on {} rows", data.len());
    Ok(Status::Done)
}

#[derive(Serialize)]
struct TraceSummary {
    steps: usize,
    first_objective: f64,
    first_violation: f64,
    last_objective: f64,
    last_violation: f64,
    best_violation: f64,
}

#[derive(Serialize)]
struct CalibrationReport {
    converged: bool,
    iterations: usize,
    final_violation: f64,
    final_objective: f64,
    tol: f64,
    calibration_rows: usize,
    group_counts: Vec<(GroupId, usize)>,
    grid_a: f64,
    grid_k: usize,
    spec: FairnessSpec,
    trace: TraceSummary,
}

fn calibrate(args: &CalibrateArgs) -> Result<Status> {
    let source = args.scores.source()?;
    let rows = source.score(&args.input, &args.scores.group_col, None)?;
    let grid = args.grid.build(rows.len())?;
    let mut dither = match args.dither_u {
        Some(u) => DitherConfig::new(u, args.seed.seed)?,
        None => DitherConfig::for_atomic_scores(grid.bound(), args.seed.seed),
    };
    dither.at_prediction = args.dither_at_prediction;
    let raw: Vec<(f64, GroupId)> = rows.iter().map(|r| (r.score, r.s.clone())).collect();
    let mut rng = stream(args.seed.seed, Stream::Dither);
    let calib = CalibrationSet::prepare(&raw, &grid, &dither, None, &mut rng)?;
    let pairs: Vec<(f64, GroupId)> = calib.entries().map(|(v, g)| (v, g.clone())).collect();
    let spec = args.spec.build(&pairs, &grid)?;
    let opts = args.solver.options();
    let outcome = solve_dual(&calib, &grid, &spec, &opts)?;
    let predictor =
        FairPredictor::from_solution(grid.clone(), spec.clone(), &calib, &outcome, dither)?;
    write_atomic(&args.output, predictor.to_json()?.as_bytes())?;

    let trace = &outcome.trace;
    let report = CalibrationReport {
        converged: outcome.converged,
        iterations: outcome.iterations,
        final_violation: outcome.final_violation,
        final_objective: outcome.final_objective,
        tol: opts.tol,
        calibration_rows: calib.len(),
        group_counts: calib
            .groups()
            .iter()
            .cloned()
            .zip(calib.counts().iter().copied())
            .collect(),
        grid_a: grid.bound(),
        grid_k: grid.len(),
        spec,
        trace: TraceSummary {
            steps: trace.len(),
            first_objective: trace[0].objective,
            first_violation: trace[0].violation,
            last_objective: trace[trace.len() - 1].objective,
            last_violation: trace[trace.len() - 1].violation,
            best_violation: outcome.final_violation,
        },
    };
    let bytes = json_bytes(&report)?;
    match &args.report {
        Some(path) => write_atomic(path, &bytes)?,
        None => print!("{}", String::from_utf8(bytes)?),
    }
    if outcome.converged {
        Ok(Status::Done)
    } else {
        eprintln!(
            "warning: violation {} above tolerance {} after {} iterations; predictor written anyway",
            outcome.final_violation, opts.tol, outcome.iterations
        );
        Ok(Status::ToleranceNotMet)
    }
}

fn predict(args: &PredictArgs) -> Result<Status> {
    let predictor = FairPredictor::load(&args.predictor)
        .with_context(|| format!("cannot load predictor {}", args.predictor.display()))?;
    let source = args.scores.source()?;
    let rows = source.score(
        &args.input,
        &args.scores.group_col,
        args.target_col.as_deref(),
    )?;
    let raw: Vec<(f64, GroupId)> = rows.iter().map(|r| (r.score, r.s.clone())).collect();
    let fair = predictor.predict_batch(&raw)?;
    let grid = predictor.grid();
    let mut header = vec!["id", "s", "base_score", "fair_value"];
    if args.target_col.is_some() {
        header.push("y");
    }
    let bytes = csv_bytes(&header, |w| {
        for (r, f) in rows.iter().zip(&fair) {
            let mut rec = vec![
                r.row.to_string(),
                r.s.to_string(),
                grid.clip(r.score).to_string(),
                f.to_string(),
            ];
            if let Some(y) = r.y {
                rec.push(y.to_string());
            }
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    write_atomic(&args.output, &bytes)?;
    println!(
        "wrote {} predictions to {}",
        rows.len(),
        args.output.display()
    );
    Ok(Status::Done)
}

fn evaluate_cmd(args: &EvaluateArgs) -> Result<Status> {
    let columns = vec!["base_score".to_owned(), "fair_value".to_owned()];
    let rows = load_csv(
        &args.input,
        &columns,
        &args.group_col,
        args.target_col.as_deref(),
    )?
    .rows;
    let base: Vec<f64> = rows.iter().map(|r| r.x[0]).collect();
    let fair: Vec<f64> = rows.iter().map(|r| r.x[1]).collect();
    let groups: Vec<GroupId> = rows.iter().map(|r| r.s.clone()).collect();
    let targets: Option<Vec<f64>> = args.target_col.as_ref().map(|_| {
        rows.iter()
            .map(|r| r.y.expect("target column was loaded"))
            .collect()
    });
    let spec = match &args.predictor {
        Some(path) => FairPredictor::load(path)
            .with_context(|| format!("cannot load predictor {}", path.display()))?
            .spec()
            .clone(),
        None => {
            let grid = args.grid.build(rows.len())?;
            let pairs: Vec<(f64, GroupId)> =
                base.iter().copied().zip(groups.iter().cloned()).collect();
            args.spec.build(&pairs, &grid)?
        }
    };
    let report = evaluate(&fair, &base, &groups, targets.as_deref(), &spec)?;
    write_atomic(&args.output, &json_bytes(&report)?)?;
    if let Some(path) = &args.csv {
        let bytes = csv_bytes(&["rmse_price", "U", "ks", "risk_mse", "n"], |w| {
            w.write_record([
                report.rmse_price.to_string(),
                report.u().to_string(),
                report.ks.to_string(),
                report.risk_mse.map_or(String::new(), |r| r.to_string()),
                rows.len().to_string(),
            ])?;
            Ok(())
        })?;
        write_atomic(path, &bytes)?;
    }
    println!(
        "rmse_price {} U {} ks {}",
        report.rmse_price,
        report.u(),
        report.ks
    );
    Ok(Status::Done)
}

fn sweep(args: &SweepArgs) -> Result<Status> {
    let seeds = parse_seeds(&args.seeds)?;
    let methods = args
        .methods
        .iter()
        .map(|m| parse_method(m))
        .collect::<Result<Vec<_>>>()?;
    let split_cfg = SplitConfig::default();
    let (source, n) = match &args.input {
        Some(path) => {
            let features = resolve_features(
                path,
                args.features.as_deref(),
                &args.group_col,
                Some(&args.target_col),
            )?;
            let data =
                load_csv(path, &features, &args.group_col, Some(&args.target_col))?.labeled()?;
            let n = data.len();
            (DataSource::Dataset(data), n)
        }
        None => (
            DataSource::Synthetic(SyntheticConfig {
                n: args.n,
                ..SyntheticConfig::default()
            }),
            args.n,
        ),
    };
    let n_calib = (split_cfg.calibration * n as f64).floor() as usize;
    let cfg = ProtocolConfig {
        split: split_cfg,
        tree: TreeParams::default(),
        grid_bound: args.grid.grid_a,
        grid_size: args.grid.size(n_calib),
        dither_u: args.dither_u,
        dither_at_prediction: !args.no_prediction_dither,
        solver: args.solver.options(),
    };
    let points = run_protocol(&source, &methods, &cfg, &seeds)?;
    let mut buf = Vec::new();
    write_sweep_csv(&points, &mut buf)?;
    write_atomic(&args.output, &buf)?;
    let rows = aggregate(&points);
    if let Some(path) = &args.summary {
        write_atomic(path, &json_bytes(&rows)?)?;
    }
    for r in &rows {
        println!(
            "{:<14} {:<16} rmse_price {:.3} ± {:.3}  U {:.4} ± {:.4}  ks {:.4} ± {:.4}",
            r.variant,
            r.detail,
            r.rmse_price_mean,
            r.rmse_price_sd,
            r.u_mean,
            r.u_sd,
            r.ks_mean,
            r.ks_sd
        );
    }
    let unconverged = points.iter().filter(|p| p.converged == Some(false)).count();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} calibration(s) stopped above tolerance");
    }
    Ok(Status::Done)
}

fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split_cmd(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::ToleranceNotMet) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
