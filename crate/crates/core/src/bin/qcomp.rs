//! Command-line front end. Logs go to stderr, data artifacts to files or
//! stdout. Exit codes: 0 success, 1 user/input error, 2 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qcomp::completion::{complete_dataset, write_completions_csv};
use qcomp::diagnostics::{
    residual_report, write_correlation_csv, write_diagnostics_csv, write_histograms_csv,
};
use qcomp::error::{QcompError, Result};
use qcomp::evaluation::{
    column_mask_benchmark, generate_synthetic, group_mask_benchmark, write_oracle_csv,
    write_synthetic_csv, BenchmarkReport, SyntheticSpec,
};
use qcomp::model::{init_params_with_stats, load_model, save_model, InitMode, ModelParams};
use qcomp::planner::{format_plan, greedy_plan, write_plan_csv};
use qcomp::schema::{
    load_dataset, standardize, AssaySchema, Dataset, MaskPartition, SchemaConfig, Standardization,
};
use qcomp::train::{train, OptimizerKind, TrainConfig};

#[derive(Parser)]
#[command(name = "qcomp", version, about = "Gaussian completion of sparse assay data over base-model predictions")]
struct Cli {
    /// Worker thread cap (default: available cores; env fallback QCOMP_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a sparse activity table
    Train(TrainArgs),
    /// Fill missing assay values of a dataset
    Complete(CompleteArgs),
    /// Print the gain-of-certainty vector for an observation pattern
    Goc(GocArgs),
    /// Greedy experiment sequence for a target assay
    Plan(PlanArgs),
    /// Column-mask / group-mask benchmark against held-out truth
    Benchmark(BenchmarkArgs),
    /// Residual-Gaussianity diagnostics
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic dataset with a brute-force oracle sidecar
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Schema config (TOML): assay order, standardization, missing tokens
    #[arg(long)]
    schema: PathBuf,
    /// Model output path
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    initial_lr: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    decay_every_epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `adaptive-moment` or `plain-sgd`
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Covariance init: identity, residual, or random
    #[arg(long, default_value = "random")]
    init: InitMode,
    /// Verify the analytic gradient against finite differences before training
    #[arg(long)]
    grad_check: bool,
}

#[derive(Args)]
struct CompleteArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GocArgs {
    #[arg(long)]
    model: PathBuf,
    /// Observation pattern, e.g. `obs=assayA,assayB`
    #[arg(long)]
    pattern: String,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    model: PathBuf,
    /// Target assay name
    #[arg(long)]
    target: String,
    /// Candidate assay names, comma separated (default: all others)
    #[arg(long)]
    candidates: Option<String>,
    /// Already observed assay names, comma separated
    #[arg(long)]
    observed: Option<String>,
    #[arg(long, default_value_t = 0.001)]
    threshold: f64,
    /// Also write the plan as CSV
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Co-measured groups as names: "A,B;C,D"
    #[arg(long)]
    groups: Option<String>,
    /// Report std of r2 across N covariance-init seeds (needs --train-data)
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Training data for the multi-seed retraining loop
    #[arg(long)]
    train_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Prefix for summary/histogram/correlation CSVs
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator spec (TOML)
    #[arg(long)]
    spec: PathBuf,
    /// Dataset CSV output
    #[arg(long)]
    out: PathBuf,
    /// Oracle sidecar CSV output
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Emit a matching schema config (standardization off)
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli.threads.or_else(|| {
        std::env::var("QCOMP_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Complete(args) => cmd_complete(args),
        Command::Goc(args) => cmd_goc(args),
        Command::Plan(args) => cmd_plan(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn build_train_config(args: &TrainArgs, config: &SchemaConfig) -> Result<TrainConfig> {
    let mut tc = match &config.train {
        Some(file) => file.merge_into(TrainConfig::default()),
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(v) = args.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = args.initial_lr {
        tc.initial_lr = v;
    }
    if let Some(v) = args.lr_decay_factor {
        tc.lr_decay_factor = v;
    }
    if let Some(v) = args.decay_every_epochs {
        tc.decay_every_epochs = v;
    }
    if let Some(v) = args.seed {
        tc.seed = v;
    }
    if let Some(v) = args.optimizer {
        tc.optimizer = v;
    }
    if args.grad_check {
        tc.grad_check = true;
    }
    tc.validate()?;
    Ok(tc)
}

fn fit_model(
    data: &Dataset,
    config: &SchemaConfig,
    train_config: &TrainConfig,
    init_mode: InitMode,
) -> Result<(ModelParams, Vec<f64>)> {
    let (fit_data, stats) = if config.standardize {
        standardize(data)?
    } else {
        (
            data.clone(),
            Standardization::identity(data.schema.p()),
        )
    };
    let init = init_params_with_stats(&fit_data, train_config.seed, init_mode, stats)?;
    train(&fit_data, train_config, &init)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = SchemaConfig::from_path(&args.schema)?;
    let data = load_dataset(&args.data, &config)?;
    let train_config = build_train_config(&args, &config)?;
    eprintln!(
        "training on {} rows, {} assays ({} epochs, batch {})",
        data.len(),
        data.schema.p(),
        train_config.epochs,
        train_config.batch_size
    );
    let (params, history) = fit_model(&data, &config, &train_config, args.init)?;
    for (epoch, loss) in history.iter().enumerate() {
        eprintln!("epoch {epoch}: mean loss {loss:.6}");
    }
    save_model(&params, &args.out)?;
    eprintln!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_complete(args: CompleteArgs) -> Result<()> {
    let config = SchemaConfig::from_path(&args.schema)?;
    let params = load_model(&args.model)?;
    let data = load_dataset(&args.data, &config)?;
    params.verify_schema(&data.schema)?;
    let results = complete_dataset(&params, &data)?;
    if results.iter().any(|r| r.jittered) {
        eprintln!("warning: some observed blocks needed the jitter retry");
    }
    match &args.out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .map_err(|e| QcompError::io(path.display().to_string(), e))?;
            write_completions_csv(&data, &results, file)?;
        }
        None => write_completions_csv(&data, &results, std::io::stdout().lock())?,
    }
    Ok(())
}

fn parse_names(schema: &AssaySchema, list: &str) -> Result<Vec<usize>> {
    list.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|name| {
            schema
                .index_of(name)
                .ok_or_else(|| QcompError::InvalidInput(format!("unknown assay `{name}`")))
        })
        .collect()
}

fn cmd_goc(args: GocArgs) -> Result<()> {
    let params = load_model(&args.model)?;
    let schema = params.schema()?;
    let observed_list = args
        .pattern
        .strip_prefix("obs=")
        .ok_or_else(|| {
            QcompError::InvalidInput("pattern must look like `obs=assayA,assayB`".into())
        })?;
    let observed = parse_names(&schema, observed_list)?;
    let mut mask = vec![false; schema.p()];
    for j in observed {
        mask[j] = true;
    }
    let part = MaskPartition::from_mask(&mask);
    let goc = qcomp::completion::gain_of_certainty(&params, &part)?;
    println!("assay,goc");
    for (a, &j) in part.missing_idx().iter().enumerate() {
        println!("{},{}", schema.names()[j], goc[a]);
    }
    Ok(())
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let params = load_model(&args.model)?;
    let schema = params.schema()?;
    let target = schema
        .index_of(&args.target)
        .ok_or_else(|| QcompError::InvalidInput(format!("unknown assay `{}`", args.target)))?;
    let observed = match &args.observed {
        Some(list) => parse_names(&schema, list)?,
        None => Vec::new(),
    };
    let candidates = match &args.candidates {
        Some(list) => parse_names(&schema, list)?,
        None => (0..schema.p())
            .filter(|&j| j != target && !observed.contains(&j))
            .collect(),
    };
    let plan = greedy_plan(&params, target, &candidates, &observed, args.threshold)?;
    print!("{}", format_plan(&plan));
    if let Some(path) = &args.out {
        let file = std::fs::File::create(path)
            .map_err(|e| QcompError::io(path.display().to_string(), e))?;
        write_plan_csv(&plan, file)?;
    }
    Ok(())
}

fn parse_groups(schema: &AssaySchema, spec: &str) -> Result<Vec<Vec<usize>>> {
    spec.split(';')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|group| parse_names(schema, group))
        .collect()
}

fn emit_report(report: &BenchmarkReport, out: &Option<PathBuf>) -> Result<()> {
    print!("{}", report.format_table());
    if let Some(path) = out {
        let file = std::fs::File::create(path)
            .map_err(|e| QcompError::io(path.display().to_string(), e))?;
        report.write_csv(file)?;
    }
    Ok(())
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<()> {
    let config = SchemaConfig::from_path(&args.schema)?;
    let params = load_model(&args.model)?;
    let test = load_dataset(&args.test, &config)?;
    params.verify_schema(&test.schema)?;
    let groups = match &args.groups {
        Some(spec) => Some(parse_groups(&test.schema, spec)?),
        None => None,
    };
    // mean-imputer baseline: training means when the model standardized,
    // otherwise per-assay observed means of the test set
    let train_means = if params.standardization.is_identity() {
        None
    } else {
        Some(params.standardization.means.clone())
    };

    let bench = |params: &ModelParams| -> Result<BenchmarkReport> {
        match &groups {
            Some(g) => group_mask_benchmark(params, &test, g, train_means.as_deref()),
            None => column_mask_benchmark(params, &test, train_means.as_deref()),
        }
    };

    if args.seeds <= 1 {
        return emit_report(&bench(&params)?, &args.out);
    }

    let train_path = args.train_data.as_ref().ok_or_else(|| {
        QcompError::InvalidInput("--seeds > 1 needs --train-data for retraining".into())
    })?;
    let train_set = load_dataset(train_path, &config)?;
    let train_config = match &config.train {
        Some(file) => file.merge_into(TrainConfig::default()),
        None => TrainConfig::default(),
    };
    let mut means = Vec::new();
    for seed in 0..args.seeds {
        let mut tc = train_config.clone();
        tc.seed = seed;
        let (seeded, _) = fit_model(&train_set, &config, &tc, InitMode::Random)?;
        let report = bench(&seeded)?;
        let (mean, _) = report.mean_r2(|s| s.qcomp);
        eprintln!("seed {seed}: qcomp mean r2 {mean:.6}");
        means.push(mean);
        if seed == 0 {
            emit_report(&report, &args.out)?;
        }
    }
    let n = means.len() as f64;
    let avg = means.iter().sum::<f64>() / n;
    let std = (means.iter().map(|m| (m - avg).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    println!("qcomp mean r2 across {} seeds: {avg:.6} +/- {std:.6}", args.seeds);
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let config = SchemaConfig::from_path(&args.schema)?;
    let params = load_model(&args.model)?;
    let data = load_dataset(&args.data, &config)?;
    let report = residual_report(&params, &data)?;

    let prefix = args.out_prefix.display();
    let open = |suffix: &str| -> Result<std::fs::File> {
        let path = format!("{prefix}{suffix}");
        std::fs::File::create(&path).map_err(|e| QcompError::io(path, e))
    };
    write_diagnostics_csv(&report, open(".summary.csv")?)?;
    write_histograms_csv(&report, open(".hist.csv")?)?;
    write_correlation_csv(&report, data.schema.names(), open(".corr.csv")?)?;
    eprintln!("diagnostics written with prefix {prefix}");
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec::from_path(&args.spec)?;
    let (data, oracles) = generate_synthetic(&spec)?;
    let file = std::fs::File::create(&args.out)
        .map_err(|e| QcompError::io(args.out.display().to_string(), e))?;
    write_synthetic_csv(&data, file)?;
    if let Some(path) = &args.oracle {
        let file = std::fs::File::create(path)
            .map_err(|e| QcompError::io(path.display().to_string(), e))?;
        write_oracle_csv(&data, &oracles, file)?;
    }
    if let Some(path) = &args.schema_out {
        let config = SchemaConfig {
            assays: data.schema.names().to_vec(),
            standardize: false,
            missing_tokens: vec!["NA".into(), "NaN".into(), String::new()],
            date_column: None,
            train: None,
        };
        let text = toml::to_string_pretty(&config)
            .map_err(|e| QcompError::InvalidInput(format!("schema config: {e}")))?;
        std::fs::write(path, text).map_err(|e| QcompError::io(path.display().to_string(), e))?;
    }
    eprintln!("synthetic dataset with {} rows written", data.len());
    Ok(())
}
