//! Batch interface: configuration loading with command-line overrides, the
//! `solve`, `experiment`, `rates`, `norm-check` and `exact` subcommands, and
//! the files they write.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::experiments::{
    evaluation_grid, exact_reference, fit_rate, run_experiment, solve_once, ExperimentConfig, ExperimentResult,
    ExperimentSettings, MethodConfig, MethodKind, RateFit,
};
use crate::model::ModelSpec;
use crate::sieve::{DesignNodes, Family, SieveSpace};
use crate::solver::{IterRecord, SelfApproxRecord, SelfApproxSolution, SieveSolution, SolverConfig, ValueApprox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    /// Record wall-clock times; off makes repeated runs byte-identical.
    pub timings: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), timings: true }
    }
}

/// The complete run configuration, one JSON object with these sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub method: MethodConfig,
    pub solver: SolverConfig,
    pub experiment: ExperimentSettings,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            method: self.method.clone(),
            solver: self.solver.clone(),
            experiment: self.experiment.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.method.validate(&self.model)?;
        self.solver.validate()
    }
}

/// Sets the leaf at dotted `path` inside `root`, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(path, "empty path component"));
    }
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| Error::config(path, "path does not lead through an object"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses `path=value`; the value is read as JSON and falls back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (path, raw) = s.split_once('=').ok_or_else(|| Error::config(s, "overrides take the form path=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.trim().to_string(), value))
}

/// Reads the config file (or starts from defaults) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut root = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::config(p.display().to_string(), e.to_string()))?;
            serde_json::from_str(&text).map_err(|e| Error::config(p.display().to_string(), e.to_string()))?
        }
        None => Value::Object(Default::default()),
    };
    for (p, v) in overrides {
        set_path(&mut root, p, v.clone())?;
    }
    serde_json::from_value(root).map_err(|e| Error::config("config", e.to_string()))
}

#[derive(Debug, Parser)]
#[command(name = "ddp", version, about = "Solve discrete decision processes by sieve and self-approximating methods")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// sieve or self-approx.
    #[arg(long, global = true)]
    pub method: Option<MethodKind>,
    /// Number of state draws.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override any config leaf, e.g. `--set model.beta=0.99`.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Write zero wall-clock times so repeated runs are byte-identical.
    #[arg(long, global = true)]
    pub no_timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve once and write the solution and its iteration log.
    Solve,
    /// Run Monte Carlo replications over the N schedule.
    Experiment,
    /// Fit power-law rates to a records CSV.
    Rates {
        csv: PathBuf,
        /// Columns to fit; all of sup_bias, sup_sd, sup_mse present by default.
        #[arg(long)]
        statistic: Vec<String>,
    },
    /// Sup-norm operator norm of the least-squares projector.
    NormCheck {
        #[arg(long, default_value = "chebyshev", value_parser = ["chebyshev", "bspline"])]
        basis: String,
        /// B-spline order.
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(short, long)]
        k: usize,
        #[arg(short, long)]
        m: usize,
        #[arg(long, default_value = "gauss", value_parser = ["gauss", "extrema"])]
        nodes: String,
    },
    /// Solve the exact reference and tabulate it on the evaluation grid.
    Exact,
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut out: Vec<(String, Value)> = self.overrides.iter().map(|s| parse_override(s)).collect::<Result<_>>()?;
        if let Some(seed) = self.seed {
            out.push(("experiment.seed".into(), Value::from(seed)));
        }
        if let Some(method) = self.method {
            out.push(("method.kind".into(), Value::from(method.to_string())));
        }
        if let Some(n) = self.n {
            out.push(("method.n".into(), Value::from(n)));
        }
        if let Some(dir) = &self.out_dir {
            out.push(("output.out_dir".into(), Value::from(dir.display().to_string())));
        }
        if self.no_timings {
            out.push(("output.timings".into(), Value::Bool(false)));
        }
        Ok(out)
    }

    pub fn config(&self) -> Result<RunConfig> {
        load_config(self.config.as_deref(), &self.overrides()?)
    }
}

/// Process exit code for an error: 2 configuration, 3 numerical failure,
/// 4 data or I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        Error::InsufficientData(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 4,
        _ => 3,
    }
}

/// A solution as written to `solution.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum SolutionFile {
    Sieve { solution: SieveSolution },
    SelfApprox { record: SelfApproxRecord },
}

impl SolutionFile {
    pub fn into_value_approx(self) -> Result<ValueApprox> {
        Ok(match self {
            SolutionFile::Sieve { solution } => ValueApprox::Sieve(solution),
            SolutionFile::SelfApprox { record } => ValueApprox::SelfApprox(SelfApproxSolution::from_record(record)?),
        })
    }
}

pub fn load_solution(path: &Path) -> Result<ValueApprox> {
    let file: SolutionFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    file.into_value_approx()
}

fn create_out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output.out_dir)?;
    Ok(&cfg.output.out_dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_iterations(path: &Path, log: &[IterRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in log {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let approx = solve_once(&cfg.model, &cfg.method, &cfg.solver, cfg.experiment.seed, 0)?;
    let dir = create_out_dir(cfg)?;
    let strip = |log: &[IterRecord]| -> Vec<IterRecord> {
        log.iter()
            .map(|r| IterRecord { wall_time_ms: if cfg.output.timings { r.wall_time_ms } else { 0.0 }, ..r.clone() })
            .collect()
    };
    let (file, log, residual) = match approx {
        ValueApprox::Sieve(mut s) => {
            s.log = strip(&s.log);
            let (log, residual) = (s.log.clone(), s.residual);
            (SolutionFile::Sieve { solution: s }, log, residual)
        }
        ValueApprox::SelfApprox(s) => {
            let record = s.record(&cfg.model, &cfg.method.shocks(&cfg.model, cfg.experiment.seed, 0)?);
            (SolutionFile::SelfApprox { record }, strip(&s.log), s.residual)
        }
    };
    let path = dir.join("solution.json");
    write_json(&path, &file)?;
    write_iterations(&dir.join("iterations.csv"), &log)?;
    println!("converged: residual {residual:e} after {} iterations; wrote {}", log.len(), path.display());
    Ok(path)
}

fn fmt_lambda(x: f64) -> String {
    format!("{x}")
}

pub fn write_experiment(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
    for r in &result.records {
        w.serialize(r)?;
    }
    w.flush()?;
    let multi_lambda = result.pointwise.iter().any(|p| p.lambda != result.pointwise[0].lambda);
    for p in &result.pointwise {
        let name = if multi_lambda {
            format!("pointwise_n{}_lambda{}.csv", p.n, fmt_lambda(p.lambda))
        } else {
            format!("pointwise_n{}.csv", p.n)
        };
        let mut w = csv::Writer::from_path(dir.join(name))?;
        let d_z = result.grid.first().map_or(1, |z| z.len());
        let mut header: Vec<String> = if d_z == 1 { vec!["z".into()] } else { (1..=d_z).map(|i| format!("z{i}")).collect() };
        header.extend(["bias", "var", "mse"].map(String::from));
        w.write_record(&header)?;
        for (i, z) in result.grid.iter().enumerate() {
            let mut row: Vec<String> = z.iter().map(|x| x.to_string()).collect();
            row.extend([p.summary.bias[i], p.summary.var[i], p.summary.mse[i]].map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join("rates.csv"))?;
    w.write_record(["statistic", "alpha", "rho", "r_squared"])?;
    for r in &result.rates {
        w.serialize(r)?;
    }
    w.flush()?;
    if !result.normality.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("normality.csv"))?;
        w.write_record(["z", "N", "lambda", "mean", "sd", "skewness", "excess_kurtosis", "ks"])?;
        for r in &result.normality {
            let s = &r.stats;
            w.write_record(
                [r.z, r.n as f64, r.lambda, s.mean, s.sd, s.skewness, s.excess_kurtosis, s.ks].map(|x| x.to_string()),
            )?;
        }
        w.flush()?;
    }
    write_json(&dir.join("result.json"), result)
}

pub fn cmd_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    let mut result = run_experiment(&cfg.experiment_config())?;
    if !cfg.output.timings {
        result.wall_time_s = 0.0;
        result.records.iter_mut().for_each(|r| r.wall_time_s = 0.0);
    }
    write_experiment(&result, &cfg.output.out_dir)?;
    for r in &result.records {
        println!(
            "{} N={} lambda={}: sup bias {:.4e}, sup sd {:.4e}, sup mse {:.4e}",
            r.method, r.n, r.lambda, r.sup_bias, r.sup_sd, r.sup_mse
        );
    }
    Ok(result)
}

/// Fits `statistic = exp(alpha + rho ln N)` to columns of a records CSV.
pub fn cmd_rates(path: &Path, statistics: &[String]) -> Result<Vec<RateFit>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let n_col = col("N").ok_or_else(|| Error::InsufficientData(format!("{}: no `N` column", path.display())))?;
    let wanted: Vec<String> = if statistics.is_empty() {
        ["sup_bias", "sup_sd", "sup_mse"].iter().filter(|s| col(s).is_some()).map(|s| s.to_string()).collect()
    } else {
        statistics.to_vec()
    };
    if wanted.is_empty() {
        return Err(Error::InsufficientData(format!("{}: no statistic columns", path.display())));
    }
    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let parse = |s: &str| -> Result<f64> {
        s.trim().parse().map_err(|_| Error::InsufficientData(format!("non-numeric value `{s}` in {}", path.display())))
    };
    let mut fits = Vec::new();
    for stat in &wanted {
        let c = col(stat).ok_or_else(|| Error::InsufficientData(format!("{}: no `{stat}` column", path.display())))?;
        let data = rows.iter().map(|r| Ok((parse(&r[n_col])?, parse(&r[c])?))).collect::<Result<Vec<_>>>()?;
        fits.push(fit_rate(stat, &data)?);
    }
    println!("{}", serde_json::to_string_pretty(&fits)?);
    Ok(fits)
}

pub fn cmd_norm_check(basis: &str, order: usize, k: usize, m: usize, nodes: &str) -> Result<f64> {
    let family = match basis {
        "bspline" => Family::Bspline { order },
        _ => Family::Chebyshev,
    };
    let nodes = if nodes == "extrema" { DesignNodes::Extrema } else { DesignNodes::Gauss };
    if k == 0 {
        return Err(Error::config("k", "need at least one basis function"));
    }
    if m < k {
        return Err(Error::config("m", format!("{m} design nodes cannot identify {k} coefficients")));
    }
    let space = SieveSpace::with_design_size(family, k, 1, 0.0, 1.0, m, nodes)?;
    let norm = space.projector()?.sup_norm();
    let verdict = if norm <= 1.0 + 1e-12 { "non-expansive" } else { "possibly expansive" };
    println!("{norm}\n{verdict}");
    Ok(norm)
}

pub fn cmd_exact(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.model.validate()?;
    let reference = exact_reference(&cfg.model, &cfg.experiment.reference)?;
    let dir = create_out_dir(cfg)?;
    let path = dir.join("exact.json");
    write_json(&path, &reference)?;
    let mut w = csv::Writer::from_path(dir.join("exact_grid.csv"))?;
    let d_z = cfg.model.d_z;
    let mut header: Vec<String> = if d_z == 1 { vec!["z".into()] } else { (1..=d_z).map(|i| format!("z{i}")).collect() };
    header.push("v".into());
    w.write_record(&header)?;
    for z in evaluation_grid(&cfg.model, cfg.experiment.grid_size) {
        let mut row: Vec<String> = z.iter().map(|x| x.to_string()).collect();
        row.push(reference.value(&z).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("exact reference residual {:e}; wrote {}", reference.residual(), path.display());
    Ok(path)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_err() {
            info!("thread pool already initialised");
        }
    }
    match &cli.command {
        Command::Solve => cmd_solve(&cli.config()?).map(|_| ()),
        Command::Experiment => cmd_experiment(&cli.config()?).map(|_| ()),
        Command::Rates { csv, statistic } => cmd_rates(csv, statistic).map(|_| ()),
        Command::NormCheck { basis, order, k, m, nodes } => cmd_norm_check(basis, *order, *k, *m, nodes).map(|_| ()),
        Command::Exact => cmd_exact(&cli.config()?).map(|_| ()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
