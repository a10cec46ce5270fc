//! `mlrvar` command-line driver.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use mlrvar::harness::config::{parse_dgp, parse_value, KeyValues};
use mlrvar::harness::{
    fit_estimator, load_model, model_report, read_csv, run_experiment, save_model, write_csv, write_series, ExperimentSpec, FitConfig, Table,
};
use mlrvar::mlr::replication_seed;
use mlrvar::selection::{select_ranks, select_ranks_nn, RankChoice, RidgeParam};
use mlrvar::var_process::{seeded_rng, simulate, Dgp, TimeSeries, DEFAULT_BURN_IN};
use mlrvar::regression::build_design;
use mlrvar::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mlrvar", version, about = "Multilinear low-rank vector autoregression")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or output directory for `benchmark`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replications and penalty grids.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a series from a data-generating process.
    Simulate(SimulateArgs),
    /// Fit an estimator to a CSV series and save the model.
    Fit(FitArgs),
    /// Select Tucker ranks by the ridge-type ratio rule.
    SelectRank(SelectRankArgs),
    /// One-step forecast from a saved model.
    Forecast(ForecastArgs),
    /// Run a Monte Carlo experiment described by a spec file.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// superdiagonal, scaled_random, sparse_factor, dfm1, dfm2 or sfm_equivalent.
    #[arg(long)]
    dgp: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    ranks: Option<String>,
    #[arg(long)]
    diagonal: Option<String>,
    #[arg(long)]
    sparsity: Option<String>,
    /// Series length.
    #[arg(short, long)]
    t: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Also save the true VAR model as a model file.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Series CSV.
    data: PathBuf,
    #[arg(long)]
    p: Option<String>,
    /// `auto` or a triple such as `3,3,2`.
    #[arg(long)]
    ranks: Option<String>,
    #[arg(long)]
    estimator: Option<String>,
    /// A number, `bic`, `bic:<len>` or `bic:<l1>,<l2>,…`.
    #[arg(long)]
    lambda: Option<String>,
    /// Any other configuration key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Also write the full report as plain JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectRankArgs {
    /// Series CSV; the initial estimate is a nuclear-norm fit.
    data: Option<PathBuf>,
    /// Use the coefficients of a saved model instead of data.
    #[arg(long, conflicts_with = "data")]
    model: Option<PathBuf>,
    #[arg(long)]
    p: Option<usize>,
    /// Ridge constant of the ratio rule; required with `--model`.
    #[arg(long)]
    c: Option<f64>,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Series CSV whose last `P` rows are the forecast origin.
    data: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Experiment spec; `--config` is used when omitted.
    spec: Option<PathBuf>,
    /// Override the replication count.
    #[arg(long)]
    reps: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Argument(format!("cannot start {n} threads: {e}")))?;
    }
    let kv = match &cli.config {
        Some(path) => KeyValues::parse(&read_text(path)?)?,
        None => KeyValues::default(),
    };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, kv, cli.seed, cli.out.as_deref()),
        Command::Fit(a) => cmd_fit(a, kv, cli.seed, cli.out.as_deref()),
        Command::SelectRank(a) => cmd_select_rank(a, kv, cli.out.as_deref()),
        Command::Forecast(a) => cmd_forecast(a, cli.out.as_deref()),
        Command::Benchmark(a) => cmd_benchmark(a, cli.config.as_deref(), cli.seed, cli.out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn cmd_simulate(a: SimulateArgs, mut kv: KeyValues, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let flags = [("dgp", &a.dgp), ("n", &a.n), ("p", &a.p), ("ranks", &a.ranks), ("diagonal", &a.diagonal), ("sparsity", &a.sparsity)];
    for (key, value) in flags {
        if let Some(v) = value {
            kv.set(key, v);
        }
    }
    let spec = parse_dgp(&kv)?;
    let t = match a.t {
        Some(t) => t,
        None => parse_value("t", kv.get("t").ok_or_else(|| Error::Argument("missing series length `t`".into()))?)?,
    };
    let burn_in = match a.burn_in {
        Some(b) => b,
        None => kv.get("burn_in").map(|v| parse_value("burn_in", v)).transpose()?.unwrap_or(DEFAULT_BURN_IN),
    };
    let seed = match seed {
        Some(s) => s,
        None => kv.get("seed").map(|v| parse_value("seed", v)).transpose()?.unwrap_or(0),
    };
    // The process is drawn from `seed`, the series from a derived seed.
    let dgp = mlrvar::var_process::make_dgp(&spec, seed)?;
    let series_seed = replication_seed(seed, 1);
    let ts = match &dgp {
        Dgp::Var(model) => simulate(model, t, burn_in, series_seed)?,
        Dgp::Dfm(dfm) => dfm.simulate(t, burn_in, &mut seeded_rng(series_seed))?.0,
    };
    if let Some(path) = &a.model_out {
        let model = dgp.var_model().ok_or_else(|| Error::Argument("factor-model processes have no VAR model to save".into()))?;
        save_model(&model_report(model, seed), path)?;
    }
    match out {
        Some(path) => write_series(&ts, path),
        None => print_series(&ts),
    }
}

fn print_series(ts: &TimeSeries) -> Result<()> {
    let names = ts.names.clone().unwrap_or_else(|| (1..=ts.n_vars()).map(|j| format!("y{j}")).collect());
    let mut table = Table { header: names, rows: Vec::new() };
    for row in ts.values.row_iter() {
        table.rows.push(row.iter().map(|v| v.to_string()).collect());
    }
    print_table(&table)
}

fn print_table(table: &Table) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(table.to_csv_string()?.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cmd_fit(a: FitArgs, kv: KeyValues, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut cfg = FitConfig::from_key_values(&kv)?;
    let flags = [("p", &a.p), ("ranks", &a.ranks), ("estimator", &a.estimator), ("lambda", &a.lambda)];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for item in &a.set {
        let (key, value) = item.split_once('=').ok_or_else(|| Error::Argument(format!("`--set {item}` is not key=value")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ts = read_csv(&a.data)?;
    let report = fit_estimator(&ts, &cfg)?;
    let model_path = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("model.json"));
    save_model(&report, &model_path)?;
    info!("saved {} model to {}", report.estimator, model_path.display());
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::ModelFile(e.to_string()))?;
        std::fs::write(path, text)?;
    }
    let summary = serde_json::json!({
        "estimator": report.estimator.name(),
        "p": report.p,
        "ranks": report.ranks,
        "lambda": report.lambda,
        "converged": report.converged,
        "iterations": report.iterations,
        "seconds": report.seconds,
        "config_hash": report.provenance.config_hash,
        "model": model_path,
    });
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Error::ModelFile(e.to_string()))?);
    Ok(())
}

fn ratio_table(choice: &RankChoice) -> Table {
    let mut t = Table::new(&["mode", "j", "ratio"]);
    for (mode, ratios) in choice.ratios.iter().enumerate() {
        for (j, r) in ratios.iter().enumerate() {
            t.rows.push(vec![(mode + 1).to_string(), (j + 1).to_string(), r.to_string()]);
        }
    }
    t
}

fn cmd_select_rank(a: SelectRankArgs, kv: KeyValues, out: Option<&Path>) -> Result<()> {
    let c = match a.c {
        Some(c) => Some(c),
        None => kv.get("c").map(|v| parse_value("c", v)).transpose()?,
    };
    let choice = match (&a.data, &a.model) {
        (_, Some(model)) => {
            let c = c.ok_or_else(|| Error::Argument("`--model` needs an explicit `--c`".into()))?;
            select_ranks(&load_model(model)?.coeff, RidgeParam::Fixed(c))?
        }
        (Some(data), None) => {
            let p = match a.p {
                Some(p) => p,
                None => kv.get("p").map(|v| parse_value("p", v)).transpose()?.unwrap_or(1),
            };
            select_ranks_nn(&build_design(&read_csv(data)?, p)?, c)?
        }
        (None, None) => return Err(Error::Argument("give a series CSV or `--model`".into())),
    };
    let [r1, r2, r3] = choice.ranks;
    println!("ranks = {r1},{r2},{r3}");
    println!("c = {}", choice.c);
    let table = ratio_table(&choice);
    match out {
        Some(path) => write_csv(&table, path),
        None => print_table(&table),
    }
}

fn cmd_forecast(a: ForecastArgs, out: Option<&Path>) -> Result<()> {
    let model = load_model(&a.model)?;
    let ts = read_csv(&a.data)?;
    let f = model.forecast(&ts)?;
    let header = ts.names.clone().unwrap_or_else(|| (1..=ts.n_vars()).map(|j| format!("y{j}")).collect());
    let mut table = Table { header, rows: Vec::new() };
    table.push(f.iter().map(|v| v.to_string()).collect())?;
    match out {
        Some(path) => write_csv(&table, path),
        None => print_table(&table),
    }
}

fn cmd_benchmark(a: BenchmarkArgs, config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let path = a.spec.as_deref().or(config).ok_or_else(|| Error::Argument("benchmark needs a spec file".into()))?;
    let mut spec = ExperimentSpec::parse(&read_text(path)?)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(r) = a.reps {
        spec.reps = r;
    }
    if out.is_some() {
        spec.output = out;
    }
    spec.validate()?;
    let result = run_experiment(&spec)?;
    if !result.failures.is_empty() {
        eprintln!("{} replication(s) failed; see the records for their seeds", result.failures.len());
    }
    print_table(&result.summary_table())
}
