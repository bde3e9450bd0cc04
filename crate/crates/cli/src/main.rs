//! `medagent`: train, predict, evaluate and serve from the command line.
//!
//! Exit status is 0 on success, 1 for bad input and 2 for internal errors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use medagent_core::dataset::{parse_csv, RawTable};
use medagent_core::demo::{build_demo_assets, DEMO_SEED};
use medagent_core::grid::{run_grid_search, GridOptions, GridReport, GridSpec, DEFAULT_GRID_CAP};
use medagent_core::hyper::HyperparameterSetting;
use medagent_core::metrics::{plot_series, roc_curve};
use medagent_core::vault::{self, fnv1a64, ModelArtifact};
use medagent_core::PredictorCatalog;
use medagent_service::ServiceConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "medagent", version, about = "Categorical-data risk models: train, predict, evaluate, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search a model on a CSV dataset.
    Train(TrainArgs),
    /// Score one answer set with a saved model.
    Predict(PredictArgs),
    /// Measure a saved model's AUC on a CSV dataset.
    Evaluate(EvaluateArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Regenerate the bundled synthetic datasets and demo models.
    BuildDemo(BuildDemoArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Name of the binary label column.
    #[arg(long)]
    label: String,
    /// JSON grid specification; lists omitted from it take the default setting.
    #[arg(long, conflicts_with = "defaults", required_unless_present = "defaults")]
    grid: Option<PathBuf>,
    /// Use the built-in 12-setting grid.
    #[arg(long)]
    defaults: bool,
    #[arg(long, default_value_t = DEMO_SEED)]
    seed: u64,
    /// Where to write the `.imbm` model.
    #[arg(long)]
    output: PathBuf,
    /// JSON report path [default: report.json beside the model].
    #[arg(long)]
    report: Option<PathBuf>,
    /// ROC plot path [default: roc.svg beside the model].
    #[arg(long)]
    roc: Option<PathBuf>,
    /// Grid settings evaluated at once; 0 uses every core.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_CAP)]
    grid_cap: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// One `predictor=value` pair per catalog predictor.
    #[arg(value_name = "PREDICTOR=VALUE")]
    answers: Vec<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "roc.svg")]
    roc: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct BuildDemoArgs {
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "models")]
    model_dir: PathBuf,
    #[arg(long, default_value_t = DEMO_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

struct Failure {
    code: String,
    message: String,
    exit: u8,
}

impl Failure {
    fn user(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            exit: 1,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: "Internal".into(),
            message: message.into(),
            exit: 2,
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::user("Io", format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::user("Io", format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::user("Io", format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelArtifact, Failure> {
    vault::load(path).map_err(|e| Failure::user(e.code(), format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SettingEntry<'a> {
    index: usize,
    setting: &'a HyperparameterSetting,
    mean_cv_auc: f64,
    fold_aucs: &'a [f64],
}

/// The `report.json` written by `train`.
#[derive(Serialize)]
struct TrainReport<'a> {
    dataset: String,
    label: &'a str,
    seed: u64,
    settings: usize,
    train_rows: usize,
    validation_rows: usize,
    best_index: usize,
    best_cv_auc: f64,
    best_setting: &'a HyperparameterSetting,
    validation_auc: f64,
    model_checksum: String,
    per_setting: Vec<SettingEntry<'a>>,
}

fn train_report<'a>(args: &'a TrainArgs, r: &'a GridReport, checksum: u64) -> TrainReport<'a> {
    TrainReport {
        dataset: args.dataset.display().to_string(),
        label: &args.label,
        seed: r.master_seed,
        settings: r.settings.len(),
        train_rows: r.train_rows,
        validation_rows: r.validation_rows,
        best_index: r.best_index,
        best_cv_auc: r.best_cv_auc,
        best_setting: &r.best_setting,
        validation_auc: r.validation_auc,
        model_checksum: format!("{checksum:016x}"),
        per_setting: r
            .per_setting_results
            .iter()
            .map(|s| SettingEntry {
                index: s.index,
                setting: &r.settings[s.index],
                mean_cv_auc: s.mean_cv_auc,
                fold_aucs: &s.fold_aucs,
            })
            .collect(),
    }
}

fn train(args: TrainArgs) -> Outcome {
    let bytes = read(&args.dataset)?;
    let d = parse_csv(&bytes, &args.label)
        .map_err(|e| Failure::user(e.code(), format!("{}: {e}", args.dataset.display())))?;
    let grid = match &args.grid {
        Some(path) => serde_json::from_slice::<GridSpec>(&read(path)?)
            .map_err(|e| Failure::user("InvalidGrid", format!("{}: {e}", path.display())))?,
        None => GridSpec::defaults(),
    };
    let opts = GridOptions {
        workers: args.workers,
        cap: args.grid_cap,
        progress: None,
    };
    let report = run_grid_search(&d, &grid, args.seed, &opts).map_err(|e| Failure::user(e.code(), e.to_string()))?;

    let artifact = ModelArtifact::new(
        None,
        report.best_setting.clone(),
        report.encoder.clone(),
        PredictorCatalog::from_encoder(&report.encoder),
        report.weights.clone(),
        format!(
            "Trained from {} (label {:?}) by grid search over {} settings with seed {}; validation AUC {:.4}.",
            args.dataset.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
            args.label,
            report.settings.len(),
            args.seed,
            report.validation_auc
        ),
    );
    let model_bytes = artifact.to_bytes().map_err(|e| Failure::internal(e.to_string()))?;
    let checksum = fnv1a64(&model_bytes[4..model_bytes.len() - 8]);
    write(&args.output, &model_bytes)?;

    let beside = |name: &str| args.output.parent().unwrap_or(Path::new("")).join(name);
    let report_path = args.report.clone().unwrap_or_else(|| beside("report.json"));
    let roc_path = args.roc.clone().unwrap_or_else(|| beside("roc.svg"));
    let json = serde_json::to_string_pretty(&train_report(&args, &report, checksum))
        .map_err(|e| Failure::internal(e.to_string()))?;
    write(&report_path, format!("{json}\n").as_bytes())?;
    write(&roc_path, plot_series(&report.validation_roc).as_bytes())?;

    println!("validation AUC = {:.6}", report.validation_auc);
    eprintln!(
        "best setting #{} of {} (mean CV AUC {:.6}); wrote {}, {}, {}",
        report.best_index,
        report.settings.len(),
        report.best_cv_auc,
        args.output.display(),
        report_path.display(),
        roc_path.display()
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Outcome {
    let model = load_model(&args.model)?;
    let mut answers = HashMap::new();
    for pair in &args.answers {
        let Some((k, v)) = pair.split_once('=') else {
            return Err(Failure::user(
                "InvalidArgument",
                format!("expected PREDICTOR=VALUE, got {pair:?}"),
            ));
        };
        if answers.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Failure::user("InvalidArgument", format!("predictor {k:?} given twice")));
        }
    }
    let p = model.predict(&answers).map_err(|e| Failure::user(e.code(), e.to_string()))?;
    println!("{p:.6}");
    eprintln!("{}", model.provenance);
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Outcome {
    let model = load_model(&args.model)?;
    let bytes = read(&args.dataset)?;
    let table =
        RawTable::parse(&bytes).map_err(|e| Failure::user(e.code(), format!("{}: {e}", args.dataset.display())))?;
    let m = model
        .encoder
        .encode_table(&table)
        .map_err(|e| Failure::user(e.code(), format!("{}: {e}", args.dataset.display())))?;
    let scores = model
        .weights
        .predict_rows(&m.features, model.setting.hidden_activation)
        .map_err(|e| Failure::internal(e.to_string()))?;
    let roc = roc_curve(&scores, &m.labels).map_err(|e| Failure::user(e.code(), e.to_string()))?;
    write(&args.roc, plot_series(&roc).as_bytes())?;
    println!("AUC = {:.6}", roc.auc);
    eprintln!("{} rows ({} positive); wrote {}", m.n_rows(), roc.n_pos, args.roc.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Outcome {
    let config = ServiceConfig::load(&args.config).map_err(|e| Failure::user("InvalidConfig", e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::internal(e.to_string()))?;
    runtime.block_on(async {
        let server = medagent_service::start(config)
            .await
            .map_err(|e| Failure::user("ServeFailed", e.to_string()))?;
        println!("listening on http://{}", server.addr);
        server
            .run_until_ctrl_c()
            .await
            .map_err(|e| Failure::internal(e.to_string()))
    })
}

fn build_demo(args: BuildDemoArgs) -> Outcome {
    let manifest = build_demo_assets(&args.data_dir, &args.model_dir, args.seed, args.workers)
        .map_err(|e| Failure::internal(e.to_string()))?;
    for m in &manifest.models {
        println!(
            "{}-year model: {} validation AUC {:.4}, golden probability {:.6}",
            m.horizon, m.file, m.validation_auc, m.probability
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("MEDAGENT_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();

    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Serve(a) => serve(a),
        Command::BuildDemo(a) => build_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.code, f.message);
            ExitCode::from(f.exit)
        }
    }
}
