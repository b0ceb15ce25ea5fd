use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use subsetlab::config::{Command, ExperimentConfig};
use subsetlab::error::{Error, Result};
use subsetlab::fredmd::{build_dataset, checksum, dataset_to_csv, parse_fredmd, DatasetManifest, DatasetSpec, FredmdTable};
use subsetlab::harness::{roll_forecast, DatasetSource, HarnessMethod, TableSource};
use subsetlab::oracle::{oracle_check, oracle_csv};
use subsetlab::rng::derive_seed;
use subsetlab::sim::run_study;

#[derive(Parser)]
#[command(name = "subsetlab", version, about = "Best-subset selection studies, FRED-MD ingestion and rolling backtests")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replicated simulation study.
    Simulate(Flags),
    /// Parse a FRED-MD vintage and write the forecasting datasets.
    Ingest(Flags),
    /// Rolling-window forecast comparison on a FRED-MD vintage.
    Backtest(Flags),
    /// Compare solvers with exhaustive search on small problems.
    OracleCheck(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// Config file (`key = value` lines, optional `[section]` headers).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<String>,
    /// Simulation design: 1, 2, 3, fa-predictors or fa-factors.
    #[arg(long)]
    setting: Option<String>,
    /// Comma-separated method names.
    #[arg(long)]
    solvers: Option<String>,
    /// Comma-separated targets from emp, ip, cpi.
    #[arg(long)]
    target: Option<String>,
    /// Comma-separated forecast horizons.
    #[arg(long)]
    horizon: Option<String>,
    /// Outlier strategy: drop or impute.
    #[arg(long)]
    strategy: Option<String>,
    /// FRED-MD CSV file.
    #[arg(long)]
    fredmd: Option<String>,
    /// Sample size.
    #[arg(long = "T")]
    t: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

fn error_record(e: &Error) -> String {
    let field = match e {
        Error::ConfigInvalid { field, .. } => Some(field.as_str()),
        _ => None,
    };
    serde_json::to_string(&ErrorRecord { error: e.kind(), message: e.to_string(), field }).expect("plain record")
}

#[derive(Serialize)]
struct Stage {
    name: String,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    threads: usize,
    status: &'static str,
    config: String,
    stages: Vec<Stage>,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<serde_json::Value>,
}

/// Output directory plus the record of what was written there.
struct Run {
    out: PathBuf,
    stages: Vec<Stage>,
    artifacts: Vec<String>,
    log: String,
}

impl Run {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        log::info!("{name}: started");
        let out = f(self);
        let seconds = start.elapsed().as_secs_f64();
        let status = match &out {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        };
        log::info!("{name}: {status} in {seconds:.1}s");
        self.log.push_str(&format!("{name}\t{seconds:.3}s\t{status}\n"));
        self.stages.push(Stage { name: name.to_string(), seconds });
        out
    }
}

fn flag_overrides(cmd: Command, f: &Flags) -> Vec<(String, String)> {
    let t_key = if cmd == Command::OracleCheck { "oracle.t" } else { "simulate.t" };
    let pairs: [(&str, &Option<String>); 14] = [
        ("seed", &f.seed),
        ("out", &f.out),
        ("threads", &f.threads),
        ("simulate.setting", &f.setting),
        ("solvers", &f.solvers),
        ("backtest.targets", &f.target),
        ("backtest.horizons", &f.horizon),
        ("backtest.strategy", &f.strategy),
        ("backtest.fredmd", &f.fredmd),
        (t_key, &f.t),
        ("simulate.reps", &f.reps),
        ("oracle.p", &f.p),
        ("oracle.k", &f.k),
        ("oracle.seeds", &f.seeds),
    ];
    let mut out: Vec<(String, String)> =
        pairs.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect();
    for kv in &f.set {
        let (k, v) = kv.split_once('=').unwrap_or((kv.as_str(), ""));
        out.push((k.trim().to_string(), v.to_string()));
    }
    out
}

fn load_config(cmd: Command, flags: &Flags) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|_| Error::InputMissing(path.display().to_string()))?;
        config.merge_text(&text)?;
    }
    config.command = cmd;
    for (k, v) in flag_overrides(cmd, flags) {
        config.set(&k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

fn read_table(path: &str) -> Result<(FredmdTable, String)> {
    if !Path::new(path).is_file() {
        return Err(Error::InputMissing(path.to_string()));
    }
    let bytes = fs::read(path).map_err(|e| Error::Io(format!("{path}: {e}")))?;
    Ok((parse_fredmd(&bytes)?, checksum(&bytes)))
}

fn simulate(run: &mut Run, config: &ExperimentConfig) -> Result<()> {
    let study = config.study_config()?;
    let report = run.stage("simulate", |_| run_study(&study))?;
    let name = report.name.clone();
    run.write(&format!("{name}.csv"), &report.to_csv())?;
    run.write(&format!("{name}_timing.csv"), &report.timing_csv())?;
    let md = report.to_markdown();
    run.write(&format!("{name}.md"), &md)?;
    println!("{md}");
    Ok(())
}

fn ingest(run: &mut Run, config: &ExperimentConfig) -> Result<()> {
    let path = config.fredmd.as_deref().expect("validated");
    let (table, sum) = run.stage("parse", |_| read_table(path))?;
    println!("{path}: {} series, {} months, sha256 {sum}", table.n_series(), table.dates.len());
    for &target in &config.targets {
        for &h in &config.horizons {
            let mut spec = DatasetSpec::new(target, h, config.strategy);
            spec.imputer = config.imputer;
            let ds = run.stage(&format!("dataset {} h={h}", target.name()), |_| build_dataset(&table, &spec))?;
            let stem = format!("{}_h{h}", target.name().to_ascii_lowercase());
            let manifest = DatasetManifest::new(&ds, &table, sum.clone());
            run.write(&format!("{stem}.csv"), &dataset_to_csv(&ds))?;
            run.write(&format!("{stem}.json"), &serde_json::to_string_pretty(&manifest).expect("plain record"))?;
            println!(
                "{} h={h}: {} predictors, {} dropped, {} outliers",
                target.name(),
                ds.n_predictors(),
                ds.dropped.len(),
                manifest.n_outliers
            );
        }
    }
    Ok(())
}

fn backtest(run: &mut Run, config: &ExperimentConfig) -> Result<()> {
    let path = config.fredmd.as_deref().expect("validated");
    let (table, _) = run.stage("parse", |_| read_table(path))?;
    let rolling = config.rolling_config()?;
    let mut md = String::new();
    for &target in &config.targets {
        let sources = rolling
            .horizons
            .iter()
            .map(|&h| {
                let mut spec = DatasetSpec::new(target, h, config.strategy);
                spec.imputer = config.imputer;
                TableSource::new(&table, spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&dyn DatasetSource> = sources.iter().map(|s| s as &dyn DatasetSource).collect();
        let report = run.stage(&format!("backtest {}", target.name()), |_| roll_forecast(target.name(), &refs, &rolling))?;
        let stem = target.name().to_ascii_lowercase();
        run.write(&format!("{stem}_forecasts.csv"), &report.forecasts_csv())?;
        run.write(&format!("{stem}_summary.csv"), &report.summary_csv())?;
        md.push_str(&report.ratio_table());
        md.push('\n');
        for m in rolling.methods.iter().filter(|m| matches!(m, HarnessMethod::Solver(_))) {
            md.push_str(&report.frequency_table(*m));
            md.push('\n');
        }
    }
    run.write("backtest.md", &md)?;
    println!("{md}");
    Ok(())
}

fn oracle(run: &mut Run, config: &ExperimentConfig) -> Result<()> {
    let solvers = config.oracle_solvers()?;
    let settings = config.solver_settings(config.oracle.k);
    let rows = run.stage("oracle-check", |_| {
        let mut rows = Vec::new();
        for i in 0..config.seeds {
            let seed = derive_seed(config.seed, "oracle-check", i as u64);
            rows.extend(oracle_check(&config.oracle, seed, &solvers, &settings)?);
        }
        Ok(rows)
    })?;
    run.write("oracle_check.csv", &oracle_csv(&rows))?;
    for s in &solvers {
        let hits = rows.iter().filter(|r| r.solver == *s && r.matched).count();
        println!("{}: matched the exhaustive optimum in {hits}/{} instances", s.name(), config.seeds);
    }
    Ok(())
}

fn execute(config: &ExperimentConfig) -> (Run, Result<()>) {
    let out = PathBuf::from(&config.out);
    let mut run = Run { out: out.clone(), stages: Vec::new(), artifacts: Vec::new(), log: String::new() };
    if let Err(e) = fs::create_dir_all(&out) {
        return (run, Err(Error::Io(format!("{}: {e}", out.display()))));
    }
    let result = match config.command {
        Command::Simulate => simulate(&mut run, config),
        Command::Ingest => ingest(&mut run, config),
        Command::Backtest => backtest(&mut run, config),
        Command::OracleCheck => oracle(&mut run, config),
    };
    (run, result)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (cmd, flags) = match &cli.command {
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Ingest(f) => (Command::Ingest, f),
        Cmd::Backtest(f) => (Command::Backtest, f),
        Cmd::OracleCheck(f) => (Command::OracleCheck, f),
    };
    let config = match load_config(cmd, flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            return ExitCode::from(2);
        }
    };
    if config.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(config.threads).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let (mut run, result) = execute(&config);
    let error = result.as_ref().err().map(|e| serde_json::from_str(&error_record(e)).expect("valid json"));
    let manifest = Manifest {
        tool: "subsetlab",
        version: env!("CARGO_PKG_VERSION"),
        command: config.command.name(),
        seed: config.seed,
        threads: rayon::current_num_threads(),
        status: if result.is_ok() { "ok" } else { "error" },
        config: config.to_text(),
        stages: std::mem::take(&mut run.stages),
        artifacts: std::mem::take(&mut run.artifacts),
        error,
    };
    let log = std::mem::take(&mut run.log);
    let _ = fs::write(run.out.join("run.log"), log);
    if let Err(e) = fs::write(run.out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("plain record")) {
        eprintln!("{}", error_record(&Error::Io(format!("manifest: {e}"))));
        return ExitCode::from(1);
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(1)
        }
    }
}
