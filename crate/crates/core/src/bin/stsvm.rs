use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use stsvm::dataset::{generate_clouds, load_csv, write_csv, Role, SynthSpec};
use stsvm::evaluation::{
    kernel_sweep, metrics, paired_trials, summary_table, ConfusionCounts, ExperimentSpec, Scenario,
};
use stsvm::trainer::{train, ModelArtifact, OuterRecord, TrainConfig, Variant};
use stsvm::{Error, Execution, Result};

#[derive(Parser)]
#[command(
    name = "stsvm",
    version,
    about = "Self-taught SVM training and evaluation"
)]
struct Cli {
    /// Run per-kernel and per-trial loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from labeled target and unlabeled source CSV files.
    Train(TrainArgs),
    /// Write per-row scores and labels for a CSV file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print accuracy, gmean, tpr and tnr on a labeled CSV file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Sample Gaussian clouds into a CSV file.
    Synth(SynthArgs),
    /// Paired repeated trials of several variants on a synthetic scenario.
    Trials {
        #[arg(long, default_value = "figure2")]
        scenario: String,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "stsvm,svm,stsvm-i")]
        variants: Vec<VariantArg>,
        /// Print a plain-text table instead of JSON records.
        #[arg(long)]
        table: bool,
    },
    /// Accuracy and gmean as the number of base kernels grows.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "4,8,12,16", value_parser = parse_kernel_count)]
        kernels_list: Vec<usize>,
        #[arg(long, default_value = "figure2")]
        scenario: String,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VariantArg::Stsvm)]
        variant: VariantArg,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = VariantArg::Stsvm)]
    variant: VariantArg,
    #[arg(long, default_value_t = 10.0, value_parser = parse_positive)]
    c: f64,
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    theta: f64,
    #[arg(long, default_value_t = 1.0, value_parser = parse_nonnegative)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-4, value_parser = parse_nonnegative)]
    epsilon: f64,
    #[arg(long, default_value_t = 16, value_parser = parse_kernel_count)]
    kernels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    max_outer: u64,
    /// Standardize features using target and source statistics.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Cloud means as `x,y;x,y`, one per class.
    #[arg(long, value_parser = parse_means)]
    means: Means,
    /// One standard deviation for all clouds, or one per cloud.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive)]
    sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
    counts: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = RoleArg::Target)]
    role: RoleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Stsvm,
    #[value(name = "stsvm-i")]
    StsvmI,
    Dtsvm,
    Svm,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Stsvm => Variant::Stsvm,
            VariantArg::StsvmI => Variant::StsvmI,
            VariantArg::Dtsvm => Variant::DtsvmLike,
            VariantArg::Svm => Variant::SvmBaseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Target,
    Source,
    Test,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Target => Role::Target,
            RoleArg::Source => Role::Source,
            RoleArg::Test => Role::Test,
        }
    }
}

#[derive(Clone, Debug)]
struct Means(Vec<Vec<f64>>);

fn parse_kernel_count(s: &str) -> std::result::Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(c @ (4 | 8 | 12 | 16)) => Ok(c),
        _ => Err(format!("{s:?} is not one of 4, 8, 12, 16")),
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("{s:?} is not a positive number")),
    }
}

fn parse_nonnegative(s: &str) -> std::result::Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("{s:?} is not a nonnegative number")),
    }
}

fn parse_means(s: &str) -> std::result::Result<Means, String> {
    let clouds = s
        .split(';')
        .map(|cloud| {
            cloud
                .split(',')
                .map(|v| v.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| format!("{s:?} is not a list of points like 0,0;2,0"))?;
    if clouds.is_empty() || clouds.len() > 2 || clouds.iter().any(|c| c.len() != clouds[0].len()) {
        return Err(format!(
            "{s:?} must give one or two points of equal dimension"
        ));
    }
    Ok(Means(clouds))
}

fn emit(record: serde_json::Value) {
    let stderr = std::io::stderr();
    let mut lock = stderr.lock();
    let _ = writeln!(lock, "{record}");
}

fn log_outer(variant: Variant, r: &OuterRecord) {
    emit(json!({
        "event": "outer",
        "variant": variant.name(),
        "iteration": r.iteration,
        "h": r.h_value,
        "l_before": r.l_before,
        "l": r.l_value,
        "delta_d": r.delta_d,
        "flipped": r.flipped,
        "inner_steps": r.inner.len(),
        "inner_converged": r.inner_converged,
    }));
}

fn cmd_train(args: TrainArgs, exec: Execution) -> Result<()> {
    let variant = Variant::from(args.variant);
    let cfg = TrainConfig {
        c: args.c,
        theta: args.theta,
        lambda: args.lambda,
        epsilon: args.epsilon,
        kernel_count: args.kernels,
        seed: args.seed,
        max_outer: args.max_outer as usize,
        standardize: args.standardize,
        execution: exec,
        ..TrainConfig::with_variant(variant)
    };
    cfg.validate()?;
    let target = load_csv(&args.target, Role::Target)?;
    let source = match (&args.source, variant.uses_source()) {
        (Some(path), true) => Some(load_csv(path, Role::Source)?),
        (Some(_), false) => {
            log::warn!("--source is ignored by the svm variant");
            None
        }
        (None, _) => None,
    };
    let model = train(&target, source.as_ref(), &cfg)?;
    for r in &model.log {
        log_outer(variant, r);
    }
    emit(json!({
        "event": "done",
        "variant": variant.name(),
        "converged": model.converged,
        "outer_iterations": model.log.len(),
        "weights": model.weights.as_slice(),
        "bias": model.bias,
    }));
    model.save(&args.out)
}

fn load_model_and_data(
    model: &PathBuf,
    data: &PathBuf,
    role: Role,
) -> Result<(ModelArtifact, stsvm::dataset::Dataset)> {
    let model = ModelArtifact::load(model)?;
    let data = load_csv(data, role)?;
    Ok((model, data))
}

fn cmd_predict(model: PathBuf, data: PathBuf, out: PathBuf) -> Result<()> {
    let (model, data) = load_model_and_data(&model, &data, Role::Test)?;
    let pred = model.predict(&data)?;
    let mut writer = csv::Writer::from_path(&out).map_err(|e| Error::Csv(e.to_string()))?;
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    writer.write_record(["score", "label"]).map_err(csv_err)?;
    for (score, label) in pred.scores.iter().zip(&pred.labels) {
        writer
            .write_record([score.to_string(), label.to_string()])
            .map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::Csv(e.to_string()))
}

fn cmd_eval(model: PathBuf, data: PathBuf) -> Result<()> {
    let (model, data) = load_model_and_data(&model, &data, Role::Target)?;
    let pred = model.predict(&data)?;
    let truth = data.labels().ok_or(Error::MissingLabelColumn)?;
    let counts = ConfusionCounts::from_labels(truth, &pred.labels)?;
    let m = metrics(&counts)?;
    println!(
        "{}",
        json!({
            "accuracy": m.accuracy,
            "gmean": m.gmean,
            "tpr": m.tpr,
            "tnr": m.tnr,
            "tpr_undefined": m.tpr_undefined,
            "tnr_undefined": m.tnr_undefined,
            "tp": counts.tp,
            "fp": counts.fp,
            "tn": counts.tn,
            "fn": counts.fn_,
        })
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let k = args.means.0.len();
    let sigmas = match args.sigma.len() {
        1 => vec![args.sigma[0]; k],
        _ => args.sigma,
    };
    let spec = SynthSpec {
        means: args.means.0,
        sigmas,
        counts: args.counts.iter().map(|&c| c as usize).collect(),
        seed: args.seed,
    };
    let data = generate_clouds(&spec, args.role.into())?;
    write_csv(&data, &args.out)
}

fn cmd_trials(
    scenario: &str,
    n: usize,
    seed: u64,
    variants: &[VariantArg],
    table: bool,
    exec: Execution,
) -> Result<()> {
    let scenario = Scenario::by_name(scenario)?;
    let variants: Vec<Variant> = variants.iter().map(|&v| v.into()).collect();
    let base = TrainConfig {
        execution: exec,
        ..TrainConfig::default()
    };
    let outcomes = paired_trials(&scenario, &base, &variants, n, seed, exec)?;
    let mut reports = Vec::new();
    for outcome in &outcomes {
        for metric in ["accuracy", "gmean"] {
            reports.push(outcome.report(metric)?);
        }
    }
    if table {
        print!("{}", summary_table(&reports));
        return Ok(());
    }
    for r in &reports {
        println!(
            "{}",
            serde_json::to_string(r).map_err(|e| Error::Serialization(e.to_string()))?
        );
    }
    Ok(())
}

fn cmd_sweep(
    counts: &[usize],
    scenario: &str,
    n: usize,
    seed: u64,
    variant: Variant,
    exec: Execution,
) -> Result<()> {
    let spec = ExperimentSpec::new(
        Scenario::by_name(scenario)?,
        TrainConfig {
            execution: exec,
            ..TrainConfig::with_variant(variant)
        },
    );
    for point in kernel_sweep(&spec, counts, n, seed, exec)? {
        println!(
            "{}",
            serde_json::to_string(&point).map_err(|e| Error::Serialization(e.to_string()))?
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Train(args) => cmd_train(args, exec),
        Command::Predict { model, data, out } => cmd_predict(model, data, out),
        Command::Eval { model, data } => cmd_eval(model, data),
        Command::Synth(args) => cmd_synth(args),
        Command::Trials {
            scenario,
            n,
            seed,
            variants,
            table,
        } => cmd_trials(&scenario, n as usize, seed, &variants, table, exec),
        Command::Sweep {
            kernels_list,
            scenario,
            n,
            seed,
            variant,
        } => cmd_sweep(
            &kernels_list,
            &scenario,
            n as usize,
            seed,
            variant.into(),
            exec,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format(|buf, record| {
            writeln!(
                buf,
                "{}",
                json!({"level": record.level().as_str().to_lowercase(), "message": record.args().to_string()})
            )
        })
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit(json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(1)
        }
    }
}
