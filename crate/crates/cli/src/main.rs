use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc;
use std::thread;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sweetspot::analysis::{emit_plot_data, sha256_hex, write_intermediate};
use sweetspot::experiments::{
    run_power, run_prevalidation_ablation, run_type1, write_ablation_outputs, write_experiment_outputs, ExperimentGrid,
    ExperimentSummary, ProgressEvent,
};
use sweetspot::trial_data::{save_trial_csv, CovariateColumns, IdColumn};
use sweetspot::{
    analyze, simulate_null_trial, simulate_sweetspot_trial, AnalysisConfig, CsvSchema, Link, NullSimConfig,
    OutcomeDirection, OutcomeKind, PValueEstimator, PredilectionModel, ScanConstraints, SpotDefinition, SweetSpotSimConfig,
};

#[derive(Parser)]
#[command(name = "sweetspot", version, about = "Find the severity range where a trial's treatment helps most")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a trial CSV and write a report.
    Analyze(AnalyzeArgs),
    /// Write a synthetic trial as CSV plus a ground-truth JSON sidecar.
    Simulate {
        #[command(subcommand)]
        kind: SimulateKind,
    },
    /// Run a simulation study.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    HigherIsWorse,
    HigherIsBetter,
}

impl From<Direction> for OutcomeDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::HigherIsWorse => OutcomeDirection::HigherIsWorse,
            Direction::HigherIsBetter => OutcomeDirection::HigherIsBetter,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Estimator {
    Plugin,
    AddOne,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Logistic,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Binary,
    Continuous,
}

#[derive(Args)]
struct ScanArgs {
    /// Shortest interval, in matched sets.
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long)]
    max_len: Option<usize>,
    /// Shortest interval as a fraction of the matched sets (overrides --min-len).
    #[arg(long)]
    min_fraction: Option<f64>,
    #[arg(long)]
    max_fraction: Option<f64>,
    /// Only search intervals whose j - i is a multiple of this.
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

impl ScanArgs {
    fn constraints(&self) -> ScanConstraints {
        ScanConstraints {
            min_len: self.min_len,
            max_len: self.max_len,
            stride: self.stride,
            min_fraction: self.min_fraction,
            max_fraction: self.max_fraction,
            ..ScanConstraints::default()
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "treat")]
    treat_col: String,
    #[arg(long, default_value = "outcome")]
    outcome_col: String,
    /// Comma-separated covariate columns, or "rest" for every other column.
    #[arg(long, default_value = "rest")]
    covariate_cols: String,
    /// Patient id column; defaults to `id` when present, else row numbers.
    #[arg(long)]
    id_col: Option<String>,
    /// Inferred from the outcome values when omitted.
    #[arg(long, value_enum)]
    outcome_kind: Option<KindArg>,
    #[arg(long, value_enum, default_value = "higher-is-worse")]
    outcome_direction: Direction,
    /// Defaults to logistic for binary outcomes, linear otherwise.
    #[arg(long, value_enum)]
    link: Option<LinkArg>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Balance outcomes across prevalidation folds.
    #[arg(long)]
    stratify_folds: bool,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Controls per treated patient in each matched set.
    #[arg(long, default_value_t = 1)]
    ratio: usize,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 1000)]
    bootstraps: usize,
    #[arg(long, value_enum, default_value = "plugin")]
    estimator: Estimator,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scan: ScanArgs,
    /// Odd moving-average window for the plotted effect curve.
    #[arg(long, default_value_t = 51)]
    smoothing_window: usize,
    /// Directory for report.json and plot data.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also write scores, matched sets and the fitted model (needs --out-dir).
    #[arg(long)]
    emit_intermediate: bool,
    /// Score both arms with this model JSON instead of fitting one.
    #[arg(long)]
    model_in: Option<PathBuf>,
    /// Write the fitted model JSON here.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Print the report as one JSON document on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Clone)]
struct GeneratorArgs {
    /// Defaults to 400 (800 for the prevalidation ablation).
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long, default_value_t = 10)]
    covariates: usize,
    #[arg(long, default_value_t = 0.5)]
    treat_prob: f64,
    /// Risk reduction applied to every treated patient.
    #[arg(long, default_value_t = 0.05)]
    effect: f64,
    /// Standard deviation of the logit-scale noise.
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
}

impl GeneratorArgs {
    fn config(&self, seed: u64) -> NullSimConfig {
        NullSimConfig {
            n_patients: self.patients.unwrap_or(400),
            n_covariates: self.covariates,
            treat_prob: self.treat_prob,
            base_treatment_effect: self.effect,
            noise_sd: self.noise_sd,
            seed,
            coefficient_override: None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SpotArg {
    Severity,
    Region,
}

impl From<SpotArg> for SpotDefinition {
    fn from(s: SpotArg) -> Self {
        match s {
            SpotArg::Severity => SpotDefinition::SeverityQuantileBand,
            SpotArg::Region => SpotDefinition::CovariateRegion,
        }
    }
}

#[derive(Subcommand)]
enum SimulateKind {
    Null {
        #[command(flatten)]
        gen: GeneratorArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth sidecar; defaults to `<out>.truth.json`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    Sweetspot {
        #[command(flatten)]
        gen: GeneratorArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Additional risk reduction inside the spot.
        #[arg(long, default_value_t = 0.3)]
        extra_effect: f64,
        #[arg(long, default_value_t = 0.3)]
        spot_fraction: f64,
        #[arg(long, value_enum, default_value = "severity")]
        spot: SpotArg,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        region_covariates: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    effects: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    gen: GeneratorArgs,
    #[arg(long, default_value_t = 500)]
    permutations: usize,
    #[arg(long, default_value_t = 100)]
    bootstraps: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    /// Full-scale run: 1000 trials per cell, 1000 permutations and bootstraps.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Print the summary JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Report per-trial progress on stderr.
    #[arg(long)]
    progress: bool,
}

impl GridArgs {
    fn grid(&self) -> ExperimentGrid {
        let grid = ExperimentGrid {
            n_trials_per_cell: self.trials,
            extra_effect_grid: self.effects.clone(),
            spot_fraction_grid: self.fractions.clone(),
            alpha: self.alpha,
            base_cfg: self.gen.config(0),
            n_permutations: self.permutations,
            n_bootstraps: self.bootstraps,
            prevalidation: true,
            master_seed: self.seed,
            n_folds: self.folds,
            ..ExperimentGrid::default()
        };
        if self.full {
            grid.full()
        } else {
            grid
        }
    }
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Null trials: rejection rate and p-value calibration.
    Type1(GridArgs),
    /// Power over extra effect x spot fraction, severity-band spots.
    Power(GridArgs),
    /// Power over extra effect x spot fraction, covariate-region spots.
    PowerCovariate(GridArgs),
    /// Null trials with and without prevalidated control scores.
    PrevalAblation {
        #[command(flatten)]
        grid: GridArgs,
        /// Covariate counts to compare.
        #[arg(long, value_delimiter = ',', default_value = "10,100")]
        p_list: Vec<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already print their causes
            let mut parts = Vec::new();
            let mut validation = false;
            for cause in e.chain() {
                parts.push(cause.to_string());
                if let Some(err) = cause.downcast_ref::<sweetspot::Error>() {
                    validation = err.is_validation();
                    break;
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::Simulate { kind } => run_simulate(kind),
        Command::Experiment { kind } => run_experiment(kind),
    }
}

fn run_analyze(args: AnalyzeArgs) -> Result<()> {
    let covariates = if args.covariate_cols.trim() == "rest" {
        CovariateColumns::Rest
    } else {
        CovariateColumns::Named(args.covariate_cols.split(',').map(|s| s.trim().to_string()).collect())
    };
    let mut schema = CsvSchema::new(&args.treat_col, &args.outcome_col, covariates);
    schema.id_col = args.id_col.clone().map_or(IdColumn::Auto, IdColumn::Named);
    schema.outcome_kind = args.outcome_kind.map(|k| match k {
        KindArg::Binary => OutcomeKind::Binary,
        KindArg::Continuous => OutcomeKind::Continuous,
    });
    schema.outcome_direction = args.outcome_direction.into();

    let bytes = fs::read(&args.input).map_err(|e| sweetspot::Error::Io {
        path: args.input.clone(),
        source: e,
    })?;
    let dataset = sweetspot::trial_data::read_trial_csv(bytes.as_slice(), &schema)
        .with_context(|| format!("loading {}", args.input.display()))?;

    let cfg = AnalysisConfig {
        link: args.link.map(|l| match l {
            LinkArg::Logistic => Link::Logistic,
            LinkArg::Linear => Link::Linear,
        }),
        n_folds: args.folds,
        stratify_folds: args.stratify_folds,
        ridge: args.ridge,
        match_ratio: args.ratio,
        scan: args.scan.constraints(),
        n_permutations: args.permutations,
        n_bootstraps: args.bootstraps,
        estimator: match args.estimator {
            Estimator::Plugin => PValueEstimator::Plugin,
            Estimator::AddOne => PValueEstimator::AddOne,
        },
        alpha: args.alpha,
        outcome_direction: Some(args.outcome_direction.into()),
        seed: args.seed,
        smoothing_window: args.smoothing_window,
        ..AnalysisConfig::default()
    };

    let external = match &args.model_in {
        Some(path) => {
            let json = fs::read_to_string(path).map_err(|e| sweetspot::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            Some(PredilectionModel::from_json(&json, dataset.covariate_names()).with_context(|| format!("reading model {}", path.display()))?)
        }
        None => None,
    };

    let mut analysis = analyze(&dataset, &cfg, external.as_ref())?;
    analysis.report.provenance.input_sha256 = Some(sha256_hex(&bytes));
    let json = analysis.report.to_json()?;

    if let Some(path) = &args.model_out {
        write(path, &analysis.model.to_json(dataset.covariate_names())?)?;
    }
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write(&dir.join("report.json"), &json)?;
        emit_plot_data(&analysis, &dir.join("plot_data"), cfg.smoothing_window)?;
        if args.emit_intermediate {
            write_intermediate(&analysis, &dataset, &dir.join("intermediate"))?;
        }
    } else if args.emit_intermediate {
        anyhow::bail!(sweetspot::Error::Config("--emit-intermediate needs --out-dir".into()));
    }

    if args.json {
        println!("{json}");
    } else {
        print_report_summary(&analysis.report);
    }
    Ok(())
}

fn print_report_summary(r: &sweetspot::SweetSpotReport) {
    let loc = &r.location;
    println!("patients: {} ({} treated, {} controls)", r.n_patients, r.n_treated, r.n_controls);
    println!("matched sets: {} at {}:1", r.n_matched_sets, r.match_ratio);
    println!(
        "sweet spot: sets {}..={} (scores {:.3} to {:.3}), Z = {:.4}",
        loc.i_hat, loc.j_hat, loc.score_lo, loc.score_hi, loc.z_hat
    );
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!("effect inside: {:.4} (corrected {})", r.tau_hat, fmt(r.tau_corrected));
    println!("effect outside: {} (corrected {})", fmt(r.tau_outside), fmt(r.tau_outside_corrected));
    println!(
        "permutation p-value: {} ({} of {} permutations){}",
        r.permutation.p_value,
        r.permutation.exceedances,
        r.permutation.n_permutations,
        if r.significant { "" } else { ", not significant" }
    );
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn truth_path(out: &Path, truth: Option<PathBuf>) -> PathBuf {
    truth.unwrap_or_else(|| {
        let mut name = out.as_os_str().to_owned();
        name.push(".truth.json");
        PathBuf::from(name)
    })
}

fn run_simulate(kind: SimulateKind) -> Result<()> {
    let (trial, out, truth) = match kind {
        SimulateKind::Null { gen, seed, out, truth } => (simulate_null_trial(&gen.config(seed))?, out, truth),
        SimulateKind::Sweetspot {
            gen,
            seed,
            extra_effect,
            spot_fraction,
            spot,
            region_covariates,
            out,
            truth,
        } => {
            let cfg = SweetSpotSimConfig {
                base: gen.config(seed),
                extra_effect,
                spot_fraction,
                spot_definition: spot.into(),
                region_covariates,
            };
            (simulate_sweetspot_trial(&cfg)?, out, truth)
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    save_trial_csv(&trial.dataset, &out)?;
    let truth = truth_path(&out, truth);
    trial.save_truth(&truth)?;
    eprintln!(
        "wrote {} ({} patients, {} treated) and {}",
        out.display(),
        trial.dataset.len(),
        trial.dataset.n_treated(),
        truth.display()
    );
    Ok(())
}

/// Runs `f` with a progress channel whose events go to stderr when enabled.
fn with_progress<T>(enabled: bool, f: impl FnOnce(Option<&mpsc::Sender<ProgressEvent>>) -> T) -> T {
    if !enabled {
        return f(None);
    }
    let (tx, rx) = mpsc::channel();
    let printer = thread::spawn(move || {
        let mut stderr = std::io::stderr();
        for event in rx {
            let _ = match event {
                ProgressEvent::CellStarted { cell, n_trials } => writeln!(stderr, "cell {cell}: {n_trials} trials"),
                ProgressEvent::TrialFinished { cell, trial, p_value } => {
                    writeln!(stderr, "cell {cell} trial {trial}: p = {p_value}")
                }
                ProgressEvent::CellFinished { cell, rejection_rate } => {
                    writeln!(stderr, "cell {cell}: rejection rate {rejection_rate}")
                }
            };
        }
    });
    let out = f(Some(&tx));
    drop(tx);
    let _ = printer.join();
    out
}

fn print_experiment_summary(s: &ExperimentSummary) {
    println!("{}: {:.1}s", s.kind, s.runtime.as_secs_f64());
    for c in &s.cells {
        let fraction = c.spot_fraction.map_or(String::new(), |f| format!(" fraction {f}"));
        println!(
            "  cell {} effect {}{}: rejection rate {:.3} (se {:.3})",
            c.cell, c.extra_effect, fraction, c.rejection_rate, c.rejection_se
        );
    }
    if let (Some(d), Some(crit)) = (s.ks_distance, s.ks_critical_1pct) {
        println!("  KS distance from uniform {d:.4} (1% critical value {crit:.4})");
    }
    for w in &s.warnings {
        println!("  warning: {w}");
    }
}

fn finish(s: &ExperimentSummary, args: &GridArgs) -> Result<()> {
    if let Some(dir) = &args.out_dir {
        write_experiment_outputs(s, dir)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(s)?);
    } else {
        print_experiment_summary(s);
    }
    Ok(())
}

fn run_experiment(kind: ExperimentKind) -> Result<()> {
    match kind {
        ExperimentKind::Type1(args) => {
            let s = with_progress(args.progress, |p| run_type1(&args.grid(), p))?;
            finish(&s, &args)
        }
        ExperimentKind::Power(args) => {
            let s = with_progress(args.progress, |p| run_power(&args.grid(), SpotDefinition::SeverityQuantileBand, p))?;
            finish(&s, &args)
        }
        ExperimentKind::PowerCovariate(args) => {
            let s = with_progress(args.progress, |p| run_power(&args.grid(), SpotDefinition::CovariateRegion, p))?;
            finish(&s, &args)
        }
        ExperimentKind::PrevalAblation { grid: args, p_list } => {
            let mut grid = args.grid();
            grid.base_cfg.n_patients = args.gen.patients.unwrap_or(800);
            let s = with_progress(args.progress, |p| run_prevalidation_ablation(&grid, &p_list, p))?;
            if let Some(dir) = &args.out_dir {
                write_ablation_outputs(&s, dir)?;
            }
            if args.json {
                println!("{}", serde_json::to_string_pretty(&s)?);
            } else {
                for arm in &s.arms {
                    println!("p = {}", arm.n_covariates);
                    print_experiment_summary(&arm.prevalidated);
                    print_experiment_summary(&arm.not_prevalidated);
                }
            }
            Ok(())
        }
    }
}
