use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use tsolve_core::expsum::{self, best_bound, clip_degradation, t_r};
use tsolve_core::oracle::{error_norms, NormKind};
use tsolve_core::scheme::run_scheme_exp;
use tsolve_core::spectral::solve_spectral;
use tsolve_core::suites::{self, Suite};
use tsolve_core::{BuildOptions, Error, ExperimentConfig, GrowthClass, SchemeParameters};

const SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "tsolve", version, about = "Low-rank solver for separable elliptic problems in many dimensions")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// CSV summary path.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Worker threads for the parallel solves.
    #[arg(long, global = true, env = "TSOLVE_THREADS")]
    threads: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build exponential sums approximating 1/x.
    Expsum {
        /// Term counts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<usize>,
        /// Replace the sinc sums by best approximations on [1, T_r].
        #[arg(long)]
        polish: bool,
        /// Left end of the approximation interval.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Drop terms whose node lies below 1/(β T_r).
        #[arg(long)]
        clip: bool,
    },
    /// Exact-eigenbasis solve with an exponential-sum inverse.
    SpectralSolve {
        /// Clip small nodes of the exponential sum.
        #[arg(long)]
        clipped: bool,
    },
    /// Full discretised scheme: contour quadrature and 1D resolvent solves.
    SchemeExp,
    /// Run acceptance suites and report pass/fail.
    Validate {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Scheme-Exp on x(1-x) data across dimensions.
    BenchDims {
        #[arg(long, value_delimiter = ',', default_values_t = vec![2, 4, 8])]
        d: Vec<usize>,
        #[arg(long, default_value_t = 1e-2)]
        eps: f64,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    body: Value,
}

impl Failure {
    fn from_core(e: Error) -> Self {
        match e {
            Error::Config { field, message } => Failure {
                code: 2,
                body: json!({ "kind": "config", "field": field, "message": message }),
            },
            other => {
                let kind = match other {
                    Error::Domain(_) => "domain",
                    Error::Capacity { .. } => "capacity",
                    Error::Construction(_) => "construction",
                    Error::Singular { .. } => "singular",
                    Error::Config { .. } => unreachable!(),
                };
                Failure {
                    code: 1,
                    body: json!({ "kind": kind, "message": other.to_string() }),
                }
            }
        }
    }

    fn usage(field: &str, message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            body: json!({ "kind": "usage", "field": field, "message": message.into() }),
        }
    }

    fn io(e: anyhow::Error) -> Self {
        Failure {
            code: 1,
            body: json!({ "kind": "io", "message": format!("{e:#}") }),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from_core(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            return emit_failure(Failure::usage("argv", message.trim()));
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => emit_failure(f),
    }
}

fn emit_failure(f: Failure) -> ExitCode {
    let body = json!({ "schema": SCHEMA, "error": f.body });
    eprintln!("{}", serde_json::to_string_pretty(&body).expect("error JSON"));
    ExitCode::from(f.code)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let common = cli.common;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::usage("threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage("threads", e.to_string()))?;
    }
    let config = common
        .config
        .as_deref()
        .map(ExperimentConfig::from_file)
        .transpose()?;
    let seed = common
        .seed
        .or(config.as_ref().map(|c| c.seed))
        .unwrap_or(suites::DEFAULT_SEED);
    let out = common
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.outputs.report.clone()));
    let csv = common
        .csv
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.outputs.csv.clone()));

    let (name, results, rows, code) = match cli.command {
        Command::Expsum { r, polish, beta, clip } => {
            ("expsum", expsum_command(&r, polish, beta, clip)?, None, 0)
        }
        Command::SpectralSolve { clipped } => {
            let cfg = need_config(config.as_ref(), "spectral-solve")?;
            let (results, rows) = spectral_command(cfg, clipped)?;
            ("spectral-solve", results, Some(rows), 0)
        }
        Command::SchemeExp => {
            let cfg = need_config(config.as_ref(), "scheme-exp")?;
            let (results, rows) = scheme_command(cfg)?;
            ("scheme-exp", results, Some(rows), 0)
        }
        Command::Validate { suite } => {
            let suite: Suite = suite.parse()?;
            let outcomes = suites::run_suite(suite, seed)?;
            for o in &outcomes {
                eprintln!("{}", o.line());
            }
            let passed = outcomes.iter().all(|o| o.passed);
            let results = json!({ "suite": suite, "passed": passed, "criteria": outcomes });
            ("validate", results, None, if passed { 0 } else { 1 })
        }
        Command::BenchDims { d, eps } => {
            if d.is_empty() || d.contains(&0) {
                return Err(Failure::usage("d", "dimensions must be positive"));
            }
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Failure::usage("eps", "must lie in (0, 1)"));
            }
            let (params, growth) = parameters(config.as_ref());
            let runs = suites::bench_dims(&d, eps, &params, &growth)?;
            let rows: Vec<Value> = runs.iter().map(|(row, _)| json!(row)).collect();
            let reports: Vec<Value> = runs.iter().map(|(_, rep)| json!(rep)).collect();
            let results = json!({ "eps": eps, "rows": rows, "reports": reports });
            let table: Vec<_> = runs.into_iter().map(|(row, _)| row).collect();
            // Without --csv the table itself is the primary output.
            if csv.is_none() && out.is_none() {
                write_csv_to(std::io::stdout(), &table).map_err(Failure::io)?;
                return Ok(0);
            }
            if let Some(path) = &csv {
                write_csv(path, &table).map_err(Failure::io)?;
            }
            ("bench-dims", results, None, 0)
        }
    };

    if let (Some(path), Some(rows)) = (&csv, &rows) {
        write_csv(path, rows).map_err(Failure::io)?;
    }
    let report = json!({
        "schema": SCHEMA,
        "command": name,
        "seed": seed,
        "timestamp": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "config": config,
        "results": results,
    });
    let text = serde_json::to_string_pretty(&report).expect("report JSON") + "\n";
    match &out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::io)?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing stdout")
            .map_err(Failure::io)?,
    }
    Ok(code)
}

fn need_config<'a>(config: Option<&'a ExperimentConfig>, command: &str) -> Result<&'a ExperimentConfig, Failure> {
    config.ok_or_else(|| Failure::usage("config", format!("{command} needs --config")))
}

fn parameters(config: Option<&ExperimentConfig>) -> (SchemeParameters, GrowthClass) {
    config
        .map(|c| (c.params.clone(), c.growth.clone()))
        .unwrap_or_default()
}

fn expsum_command(ranks: &[usize], polish: bool, beta: f64, clip: bool) -> Result<Value, Failure> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Failure::usage("beta", "must be positive"));
    }
    let sums = ranks
        .iter()
        .map(|&r| {
            let s = expsum::cached(r, BuildOptions { polish })?.rescale(beta)?;
            let s = if clip { s.clip() } else { s };
            Ok(json!({
                "r": r,
                "polish": polish,
                "T_r": t_r(r),
                "best_bound": best_bound(r, beta),
                "clip_degradation": clip_degradation(r) / beta,
                "tail_dominated": s.tail_dominated(),
                "sum": s,
            }))
        })
        .collect::<Result<Vec<Value>, Error>>()?;
    Ok(json!({ "beta": beta, "sums": sums }))
}

/// One line of the `--csv` summary of a solve.
#[derive(Serialize)]
struct SolveRow {
    d: usize,
    eps: f64,
    r: usize,
    #[serde(rename = "R")]
    big_r: usize,
    #[serde(rename = "N")]
    n_quad: Option<usize>,
    rank: usize,
    params: usize,
    h1_error: Option<f64>,
    l2_error: Option<f64>,
}

fn spectral_command(cfg: &ExperimentConfig, clipped: bool) -> Result<(Value, Vec<SolveRow>), Failure> {
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &d in &cfg.d {
        let op = cfg.operator(d)?;
        let exact = cfg.exact_solution(&op)?;
        let f = exact.data_tensor();
        for &eps in &cfg.eps {
            let (u, report) =
                solve_spectral(&op, &f, &|_| Ok(f.clone()), eps, &cfg.params, &cfg.growth, clipped)?;
            rows.push(SolveRow {
                d,
                eps,
                r: report.r,
                big_r: report.big_r,
                n_quad: report.n_quad,
                rank: u.rank(),
                params: report.parameter_count,
                h1_error: report.errors.get("h1").copied(),
                l2_error: report.errors.get("l2").copied(),
            });
            runs.push(json!({ "d": d, "eps": eps, "report": report }));
        }
    }
    Ok((json!({ "runs": runs }), rows))
}

fn scheme_command(cfg: &ExperimentConfig) -> Result<(Value, Vec<SolveRow>), Failure> {
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for &d in &cfg.d {
        let op = cfg.operator(d)?;
        let data = cfg.nodal_data(d)?;
        let exact = cfg.exact_solution(&op)?;
        for &eps in &cfg.eps {
            let (u, mut report) = run_scheme_exp(&op, &data, eps, &cfg.params, &cfg.growth)?;
            let h1 = error_norms(&u, &exact, NormKind::H1)?;
            let l2 = error_norms(&u, &exact, NormKind::L2)?;
            report.errors.insert("h1".into(), h1);
            report.errors.insert("l2".into(), l2);
            report.errors.insert("data_norm".into(), exact.energy_norm());
            rows.push(SolveRow {
                d,
                eps,
                r: report.r,
                big_r: report.big_r,
                n_quad: report.n_quad,
                rank: report.rank_out,
                params: report.parameter_count,
                h1_error: Some(h1),
                l2_error: Some(l2),
            });
            runs.push(json!({ "d": d, "eps": eps, "report": report }));
        }
    }
    Ok((json!({ "runs": runs }), rows))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv_to(file, rows).with_context(|| format!("writing {}", path.display()))
}

fn write_csv_to<T: Serialize>(sink: impl Write, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
