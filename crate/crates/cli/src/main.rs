//! Command-line front end for weak-instrument-robust IV inference.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use ivrobust::dataset::{load_csv, Role};
use ivrobust::inference::{self, TestKind};
use ivrobust::montecarlo::{self, DgpSpec, Family};
use ivrobust::optimize::MinimizeOptions;
use ivrobust::quadric::{self, classify, project_to_interval, SetTest};
use ivrobust::{CrossProducts, Error, Estimator, IvDataset};

#[derive(Parser, Debug, Serialize)]
#[command(name = "ivrobust", version, about = "Weak-instrument-robust inference for linear IV models")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,

    /// Worker threads for simulations and grid inversion (0 = all cores).
    #[arg(long, env = "IVROBUST_THREADS", default_value_t = 0, global = true)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// k-class point estimates with standard errors.
    Fit(FitArgs),
    /// Test H0: beta = beta0 (jointly with delta = delta0 when given).
    Test(TestArgs),
    /// Confidence set by test inversion.
    Confset(ConfsetArgs),
    /// Anderson's rank test of the first stage.
    Rank(RankArgs),
    /// Empirical size of several tests under a simulation design.
    SimulateSize(SimSizeArgs),
    /// Power curves over a grid of hypothesized values.
    SimulatePower(SimPowerArgs),
    /// P-values of several tests over a grid of beta values.
    PvalueGrid(PgridArgs),
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Outcome column.
    #[arg(long)]
    y: String,
    /// Endogenous covariates of interest.
    #[arg(long, value_delimiter = ',')]
    x: Vec<String>,
    /// Endogenous nuisance covariates.
    #[arg(long, value_delimiter = ',')]
    w: Vec<String>,
    /// Instruments.
    #[arg(long, value_delimiter = ',', required = true)]
    z: Vec<String>,
    /// Exogenous nuisance covariates (partialled out).
    #[arg(long, value_delimiter = ',')]
    exog: Vec<String>,
    /// Exogenous covariates of interest.
    #[arg(long, value_delimiter = ',')]
    exog_interest: Vec<String>,
    /// Partial out a constant.
    #[arg(long)]
    intercept: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EstimatorArg {
    Ols,
    Tsls,
    Liml,
    Fuller,
    Kappa,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Tsls)]
    estimator: EstimatorArg,
    /// Fuller constant.
    #[arg(long, default_value_t = 1.0)]
    fuller_a: f64,
    /// Explicit kappa for `--estimator kappa`.
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    /// ar, lm, lm-plugin, lr, clr, wald, wald-liml, j, j-liml.
    #[arg(long)]
    test: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    delta0: Vec<f64>,
}

#[derive(Args, Debug, Serialize)]
struct ConfsetArgs {
    #[command(flatten)]
    data: DataArgs,
    /// wald, wald-liml, ar, lr (closed form); lm, clr, lm-plugin (grid).
    #[arg(long)]
    test: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    grid_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    grid_hi: Option<f64>,
    #[arg(long, default_value_t = quadric::DEFAULT_GRID_POINTS)]
    grid_points: usize,
}

#[derive(Args, Debug, Serialize)]
struct RankArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    r: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Guggenberger,
    Kleibergen,
}

#[derive(Args, Debug, Serialize)]
struct DgpArgs {
    #[arg(long, value_enum, default_value_t = FamilyArg::Guggenberger)]
    family: FamilyArg,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 100.0)]
    pi_x_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    pi_w_norm: f64,
    #[arg(long, default_value_t = 95.0, allow_hyphen_values = true)]
    pi_inner: f64,
    /// Kleibergen family: values of lambda1 (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    lambda1: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    lambda2: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    tau: Vec<f64>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    beta_true: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    gamma_true: f64,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tests to simulate.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ar,clr,lm,lm-plugin,lr,wald-liml,wald-tsls"
    )]
    tests: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct SimSizeArgs {
    #[command(flatten)]
    dgp: DgpArgs,
}

#[derive(Args, Debug, Serialize)]
struct SimPowerArgs {
    #[command(flatten)]
    dgp: DgpArgs,
    /// Comma-separated values or `lo:hi:points`.
    #[arg(long, allow_hyphen_values = true)]
    beta_grid: String,
}

#[derive(Args, Debug, Serialize)]
struct PgridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "ar,lm,lr,clr")]
    tests: Vec<String>,
    /// Comma-separated values or `lo:hi:points`.
    #[arg(long, allow_hyphen_values = true)]
    beta_grid: String,
}

/// Failure mapped to an exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config() { 2 } else { 3 },
            message: e.to_string(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load(args: &DataArgs) -> CliResult<(IvDataset, usize)> {
    if args.x.is_empty() && args.w.is_empty() {
        return Err(config_err("at least one of --x or --w is required"));
    }
    let mut roles = vec![(args.y.clone(), Role::Outcome)];
    let push = |roles: &mut Vec<(String, Role)>, cols: &[String], r: Role| {
        roles.extend(cols.iter().map(|c| (c.clone(), r)));
    };
    push(&mut roles, &args.x, Role::Endogenous);
    push(&mut roles, &args.w, Role::EndogenousNuisance);
    push(&mut roles, &args.z, Role::Instrument);
    push(&mut roles, &args.exog, Role::Exogenous);
    push(&mut roles, &args.exog_interest, Role::ExogenousOfInterest);
    let l = load_csv(&args.input, &roles, args.intercept)?;
    Ok((l.data, l.dropped_rows))
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|_| config_err(format!("`{t}` is not a number in the grid")))
    };
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| config_err("grid point count must be an integer"))?;
        if n < 2 || !(lo < hi) {
            return Err(config_err("grid `lo:hi:points` needs lo < hi and points >= 2"));
        }
        return Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect());
    }
    s.split(',').map(num).collect()
}

fn parse_tests(names: &[String]) -> CliResult<Vec<TestKind>> {
    names
        .iter()
        .map(|n| n.parse::<TestKind>().map_err(Failure::from))
        .collect()
}

fn estimator(args: &FitArgs) -> CliResult<Estimator> {
    Ok(match args.estimator {
        EstimatorArg::Ols => Estimator::Ols,
        EstimatorArg::Tsls => Estimator::Tsls,
        EstimatorArg::Liml => Estimator::Liml,
        EstimatorArg::Fuller => Estimator::Fuller(args.fuller_a),
        EstimatorArg::Kappa => Estimator::Kappa(
            args.kappa
                .ok_or_else(|| config_err("--estimator kappa requires --kappa"))?,
        ),
    })
}

/// A report: a JSON payload plus an optional CSV table.
struct Report {
    result: Value,
    table: Option<(Vec<String>, Vec<Vec<String>>)>,
    text: String,
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn run_fit(a: &FitArgs) -> CliResult<Report> {
    let (data, dropped) = load(&a.data)?;
    let est = estimator(a)?;
    let cp = CrossProducts::new(&data)?;
    let fit = cp.fit(est)?;
    let se = fit.std_errors();
    let names: Vec<String> = data.x_names.iter().chain(data.w_names.iter()).cloned().collect();
    let rows: Vec<Vec<String>> = names
        .iter()
        .zip(fit.coef.iter().zip(&se))
        .map(|(n, (c, s))| vec![n.clone(), fmt_num(*c), fmt_num(*s)])
        .collect();
    let mut text = format!("{est} (kappa = {:.6})\n{:<16} {:>12} {:>12}\n", fit.kappa, "", "estimate", "std.err");
    for (n, (c, s)) in names.iter().zip(fit.coef.iter().zip(&se)) {
        text.push_str(&format!("{n:<16} {c:>12.6} {s:>12.6}\n"));
    }
    Ok(Report {
        result: json!({
            "estimator": est.to_string(),
            "kappa": fit.kappa,
            "names": names,
            "coef": fit.coef,
            "std_errors": se,
            "sigma2_wald": fit.sigma2_wald,
            "sigma2_mz": fit.sigma2_mz,
            "attained": fit.attained,
            "n": data.n(),
            "dropped_rows": dropped,
        }),
        table: Some((vec!["name".into(), "estimate".into(), "std_error".into()], rows)),
        text,
    })
}

fn test_report(r: &inference::TestResult, dropped: usize) -> Report {
    let mut v = serde_json::to_value(r).expect("serializable");
    v["dropped_rows"] = json!(dropped);
    Report {
        text: format!(
            "statistic {:.6}  dist {}  p-value {:.6}\n",
            r.statistic, r.dist, r.p_value
        ),
        table: Some((
            vec!["statistic".into(), "dist".into(), "p_value".into()],
            vec![vec![fmt_num(r.statistic), r.dist.to_string(), fmt_num(r.p_value)]],
        )),
        result: v,
    }
}

fn run_test(a: &TestArgs) -> CliResult<Report> {
    let (data, dropped) = load(&a.data)?;
    let name = a.test.trim().to_ascii_lowercase().replace('-', "_");
    let r = match name.as_str() {
        "j" | "j_tsls" => inference::j_statistic(&data)?,
        "j_liml" => inference::j_liml(&data)?,
        _ => {
            let kind: TestKind = name.parse()?;
            if a.beta0.len() != data.mx() {
                return Err(config_err(format!(
                    "--beta0 needs {} value(s), got {}",
                    data.mx(),
                    a.beta0.len()
                )));
            }
            inference::test_with_exogenous_of_interest(&data, &a.beta0, &a.delta0, kind)?
        }
    };
    Ok(test_report(&r, dropped))
}

fn run_confset(a: &ConfsetArgs) -> CliResult<Report> {
    let (data, dropped) = load(&a.data)?;
    let kind: TestKind = a.test.parse()?;
    if let Ok(st) = SetTest::try_from(kind) {
        let cp = CrossProducts::new(&data)?;
        let q = cp.invert_closed_form(st, a.alpha)?;
        let class = classify(&q);
        let mut result = json!({
            "test": kind.to_string(),
            "alpha": a.alpha,
            "method": "closed_form",
            "quadric": q,
            "classification": class,
            "dropped_rows": dropped,
        });
        let mut text = format!("{kind} set at level {}: {:?}\n", 1.0 - a.alpha, class);
        let mut table = None;
        if data.mx() + data.md() == 1 && data.md() == 0 {
            let set = project_to_interval(&q)?;
            text.push_str(&format!("{set}\n"));
            table = Some(set_table(&set));
            result["set"] = serde_json::to_value(&set).expect("serializable");
        }
        return Ok(Report { result, table, text });
    }
    let (lo, hi) = match (a.grid_lo, a.grid_hi) {
        (Some(l), Some(h)) => (l, h),
        (None, None) => quadric::default_window(&data)?,
        _ => return Err(config_err("give both --grid-lo and --grid-hi or neither")),
    };
    let g = quadric::grid_invert(&data, kind, a.alpha, lo, hi, a.grid_points)?;
    Ok(Report {
        text: format!(
            "{kind} set at level {}: {}{}\n",
            1.0 - a.alpha,
            g.set,
            if g.unbounded_at_window_edge {
                " (unbounded at window edge)"
            } else {
                ""
            }
        ),
        table: Some(set_table(&g.set)),
        result: json!({
            "test": kind.to_string(),
            "alpha": a.alpha,
            "method": "grid",
            "window": [lo, hi],
            "grid_points": a.grid_points,
            "set": g.set,
            "unbounded_at_window_edge": g.unbounded_at_window_edge,
            "failed_points": g.failed_points,
            "dropped_rows": dropped,
        }),
    })
}

fn set_table(set: &quadric::ConfidenceSet1D) -> (Vec<String>, Vec<Vec<String>>) {
    (
        vec!["lo".into(), "hi".into()],
        set.pieces
            .iter()
            .map(|&(l, h)| vec![fmt_num(l), fmt_num(h)])
            .collect(),
    )
}

fn run_rank(a: &RankArgs) -> CliResult<Report> {
    let (data, dropped) = load(&a.data)?;
    Ok(test_report(&inference::rank_test(&data, a.r)?, dropped))
}

fn base_spec(d: &DgpArgs) -> DgpSpec {
    let mut spec = match d.family {
        FamilyArg::Guggenberger => DgpSpec::guggenberger(d.n, d.k),
        FamilyArg::Kleibergen => DgpSpec::kleibergen(d.n, d.k, d.lambda1[0], d.lambda2[0], d.tau[0]),
    };
    spec.pi_x_norm = d.pi_x_norm;
    spec.pi_w_norm = d.pi_w_norm;
    spec.pi_inner = d.pi_inner;
    spec.beta_true = d.beta_true;
    spec.gamma_true = d.gamma_true;
    spec
}

fn run_sim_size(a: &SimSizeArgs) -> CliResult<Report> {
    let d = &a.dgp;
    let tests = parse_tests(&d.tests)?;
    let spec = base_spec(d);
    if spec.family == Family::Kleibergen {
        let cells = montecarlo::size_heatmap(
            &tests, &spec, &d.lambda1, &d.lambda2, &d.tau, d.reps, d.alpha, d.seed,
        )?;
        let header = ["lambda1", "lambda2", "tau", "test", "rate", "stderr", "failed"];
        let rows: Vec<Vec<String>> = cells
            .iter()
            .map(|c| {
                vec![
                    fmt_num(c.lambda1),
                    fmt_num(c.lambda2),
                    fmt_num(c.tau),
                    c.test.clone(),
                    fmt_num(c.rate),
                    fmt_num(c.stderr),
                    c.failed.to_string(),
                ]
            })
            .collect();
        let text = rows.iter().map(|r| r.join("  ")).collect::<Vec<_>>().join("\n") + "\n";
        return Ok(Report {
            result: json!({ "spec": spec, "cells": cells }),
            table: Some((header.iter().map(|s| s.to_string()).collect(), rows)),
            text,
        });
    }
    let rates = montecarlo::empirical_size_many(&tests, &spec, d.reps, d.alpha, d.seed)?;
    let rows: Vec<Vec<String>> = rates
        .iter()
        .map(|r| {
            vec![
                r.test.clone(),
                d.k.to_string(),
                fmt_num(d.alpha),
                fmt_num(r.rate),
                fmt_num(r.mc_stderr),
                r.failed.to_string(),
            ]
        })
        .collect();
    let mut text = format!("{:<14} {:>8} {:>8}\n", "test", "size", "se");
    for r in &rates {
        text.push_str(&format!("{:<14} {:>7.2}% {:>7.2}%\n", r.test, 100.0 * r.rate, 100.0 * r.mc_stderr));
    }
    Ok(Report {
        result: json!({ "spec": spec, "rates": rates }),
        table: Some((
            ["test", "k", "alpha", "rate", "stderr", "failed"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            rows,
        )),
        text,
    })
}

fn run_sim_power(a: &SimPowerArgs) -> CliResult<Report> {
    let d = &a.dgp;
    let tests = parse_tests(&d.tests)?;
    let grid = parse_grid(&a.beta_grid)?;
    let spec = base_spec(d);
    let pts = montecarlo::power_curves(&tests, &spec, &grid, d.reps, d.alpha, d.seed)?;
    let rows: Vec<Vec<String>> = pts
        .iter()
        .map(|p| vec![p.test.clone(), fmt_num(p.beta), fmt_num(p.rate), fmt_num(p.stderr)])
        .collect();
    let text = rows.iter().map(|r| r.join("  ")).collect::<Vec<_>>().join("\n") + "\n";
    Ok(Report {
        result: json!({ "spec": spec, "points": pts }),
        table: Some((
            ["test", "beta", "rate", "stderr"].iter().map(|s| s.to_string()).collect(),
            rows,
        )),
        text,
    })
}

fn run_pgrid(a: &PgridArgs) -> CliResult<Report> {
    let (data, dropped) = load(&a.data)?;
    let tests = parse_tests(&a.tests)?;
    let grid = parse_grid(&a.beta_grid)?;
    let cells = quadric::pvalue_grid(&data, &tests, &grid)?;
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|(t, b, p)| vec![t.to_string(), fmt_num(*b), p.map(fmt_num).unwrap_or_default()])
        .collect();
    let json_rows: Vec<Value> = cells
        .iter()
        .map(|(t, b, p)| json!({ "test": t.to_string(), "beta": b, "p_value": p }))
        .collect();
    let text = rows.iter().map(|r| r.join("  ")).collect::<Vec<_>>().join("\n") + "\n";
    Ok(Report {
        result: json!({ "rows": json_rows, "dropped_rows": dropped }),
        table: Some((
            ["test", "beta", "p_value"].iter().map(|s| s.to_string()).collect(),
            rows,
        )),
        text,
    })
}

fn resolved_config(cli: &Cli) -> Value {
    let mut v = serde_json::to_value(cli).expect("serializable");
    let opts = MinimizeOptions::default();
    v["optimizer"] = json!(opts);
    v["quadrature_tol"] = json!(ivrobust::clr_cdf::QUAD_TOL);
    v["version"] = json!(env!("CARGO_PKG_VERSION"));
    v
}

fn emit(cli: &Cli, report: Report) -> std::io::Result<()> {
    let config = resolved_config(cli);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.format {
        Format::Json => {
            let v = json!({ "config": config, "result": report.result });
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("serializable"))
        }
        Format::Csv => {
            writeln!(out, "# config: {}", config)?;
            let (header, rows) = report
                .table
                .unwrap_or_else(|| (vec!["result".into()], vec![vec![report.result.to_string()]]));
            writeln!(out, "{}", header.join(","))?;
            for r in rows {
                writeln!(out, "{}", r.join(","))?;
            }
            Ok(())
        }
        Format::Text => {
            writeln!(out, "config: {}", config)?;
            write!(out, "{}", report.text)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Test(a) => run_test(a),
        Command::Confset(a) => run_confset(a),
        Command::Rank(a) => run_rank(a),
        Command::SimulateSize(a) => run_sim_size(a),
        Command::SimulatePower(a) => run_sim_power(a),
        Command::PvalueGrid(a) => run_pgrid(a),
    };
    match result {
        Ok(report) => match emit(&cli, report) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        },
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
