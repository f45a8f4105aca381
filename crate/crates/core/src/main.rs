use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kcm::cm_tests::{run_test, BootstrapOptions, TestKind};
use kcm::error::{KcmError, Result};
use kcm::estimation::{mmmr_fit, mmr_iv_solve, IvProblem};
use kcm::harness::{power_csv, run_power, run_type1, Dgp, ExperimentConfig};
use kcm::io::{parse_table, table_csv, treatment_columns, IvData, ModelConfig};
use kcm::kernels::{median_heuristic, KernelSpec};
use kcm::rng::stream;

#[derive(Parser)]
#[command(
    name = "kcm",
    version,
    about = "Kernel conditional moment tests and MMR estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a conditional moment test and print the outcome as JSON.
    Test(TestArgs),
    /// Minimum-MMR parameter estimate.
    Estimate(EstimateArgs),
    /// MMR instrumental-variable kernel regression.
    Iv(IvArgs),
    /// Monte-Carlo power experiment, long-form CSV.
    Power(ExperimentArgs),
    /// Monte-Carlo Type-I error experiment (δ = 0), long-form CSV.
    Type1(ExperimentArgs),
    /// Write a simulated dataset as CSV.
    Gen(GenArgs),
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "kcm")]
    test: TestKind,
    #[arg(long = "B", alias = "b", default_value_t = 1000)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct IvArgs {
    /// CSV with columns y, x* (treatments) and z* (instruments).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lambda: f64,
    /// CSV of query points with columns x*.
    #[arg(long)]
    query: Option<PathBuf>,
    /// Where to write predictions at the query points.
    #[arg(long, requires = "query")]
    pred_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the sample-size grid, e.g. `100,400`.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Override the deviation grid.
    #[arg(long, value_delimiter = ',')]
    delta_grid: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long = "B", alias = "b")]
    b: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    dgp: Dgp,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| KcmError::Input(format!("cannot read {}: {e}", path.display())))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json<T: Serialize>(value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit(&s, None)
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let table = parse_table(&read(&args.data)?)?;
    let cfg = ModelConfig::from_json(&read(&args.model)?)?;
    let data = cfg.dataset(&table)?;
    let model = cfg.model()?;
    if args.test == TestKind::Kcm {
        let spec = cfg.kernel.resolve(&data.x())?;
        if !spec.is_ispd() {
            eprintln!(
                "warning: the {} kernel is not integrally strictly positive definite; \
                 the KCM test is not consistent against all alternatives with it",
                spec.family_name()
            );
        }
    }
    let opts = BootstrapOptions::new(args.b, args.alpha, args.seed)?;
    emit_json(&run_test(args.test, &model, &data, &cfg.kernel, &opts)?)
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let table = parse_table(&read(&args.data)?)?;
    let cfg = ModelConfig::from_json(&read(&args.model)?)?;
    let data = cfg.dataset(&table)?;
    let template = cfg.template(&data)?;
    let spec = cfg.kernel.resolve(&data.x())?;
    emit_json(&mmmr_fit(&template, &data, &spec, cfg.search().as_ref())?)
}

#[derive(Serialize)]
struct IvReport {
    alpha: Vec<f64>,
    train_mse: f64,
}

fn cmd_iv(args: IvArgs) -> Result<()> {
    let iv = IvData::from_table(&parse_table(&read(&args.data)?)?)?;
    let problem = IvProblem {
        k_spec: KernelSpec::rbf(median_heuristic(&iv.z)?)?,
        l_spec: KernelSpec::rbf(median_heuristic(&iv.x)?)?,
        lambda: args.lambda,
        x: iv.x,
        y: iv.y,
        z: iv.z,
    };
    let fit = mmr_iv_solve(&problem)?;
    let fitted = fit.predict(&problem.x)?;
    let train_mse = (&problem.y - fitted).norm_squared() / problem.y.len() as f64;
    if let Some(query) = &args.query {
        let q = parse_table(&read(query)?)?;
        let preds = fit.predict(&treatment_columns(&q)?)?;
        let mut names = q.names.clone();
        names.push("prediction".into());
        let mut values = q.values.clone().insert_column(q.values.ncols(), 0.0);
        values.column_mut(q.values.ncols()).copy_from(&preds);
        let csv = table_csv(&names, &values);
        match &args.pred_out {
            Some(path) => fs::write(path, csv)?,
            None => eprint!("{csv}"),
        }
    }
    emit_json(&IvReport {
        alpha: fit.alpha.iter().copied().collect(),
        train_mse,
    })
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(&read(&args.config)?)?;
    if let Some(g) = &args.n_grid {
        cfg.n_grid = g.clone();
    }
    if let Some(g) = &args.delta_grid {
        cfg.delta_grid = g.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(b) = args.b {
        cfg.b = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| KcmError::Input(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs, null_only: bool) -> Result<()> {
    set_threads(args.threads)?;
    let cfg = experiment_config(&args)?;
    let rows = if null_only {
        run_type1(&cfg)?
    } else {
        run_power(&cfg)?
    };
    emit(&power_csv(&rows), args.out.as_deref())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg = ExperimentConfig {
        d: args.d,
        ..ExperimentConfig::new(args.dgp)
    };
    cfg.validate()?;
    let data = cfg.generate(args.n, &mut stream(args.seed, 0))?;
    emit(&table_csv(data.names(), data.z()), args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Iv(a) => cmd_iv(a),
        Command::Power(a) => cmd_experiment(a, false),
        Command::Type1(a) => cmd_experiment(a, true),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
