//! `mselect`: batch estimation, simulation, benchmarking, and bootstrap
//! inference for matrix-variate Heckman selection models.
//!
//! Exit codes: 0 success, 1 input/validation error, 2 non-convergence,
//! 3 bootstrap instability.

mod dataset;
mod out;
mod scenario_file;
mod schema;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mselect_core::bootstrap::bootstrap;
use mselect_core::ecm::{fit, FitConfig};
use mselect_core::sim::{generate, run_mc, scenario1, scenario2, Arm, CellResult, Scenario};
use mselect_core::Error as CoreError;

use dataset::read_dataset;
use out::{csv_table, g17, OutDir, ResolvedConfig};
use schema::{parse_schema, Col, OutcomeSchema, Schema};

#[derive(Parser)]
#[command(
    name = "mselect",
    version,
    about = "Matrix-variate Heckman selection models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FitOpts {
    /// Relative log-likelihood stopping tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Maximum ECM iterations.
    #[arg(long = "max-iter", default_value_t = 500)]
    max_iter: usize,
    /// Accuracy target for rectangle probabilities.
    #[arg(long = "rect-tol", default_value_t = 1e-6)]
    rect_tol: f64,
}

impl FitOpts {
    fn config(&self, seed: u64) -> FitConfig {
        FitConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            rect_tol: self.rect_tol,
            seed,
            ..FitConfig::default()
        }
    }

    fn record(&self, rc: &mut ResolvedConfig) {
        rc.set_f64("tol", self.tol);
        rc.set("max_iter", self.max_iter);
        rc.set_f64("rect_tol", self.rect_tol);
        rc.set_f64("monotonicity_slack", 1e-6);
        rc.set("constraint_reset", "rescale");
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[command(flatten)]
        fit: FitOpts,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a dataset from a scenario and write it with a truth sidecar.
    Simulate {
        /// 1, 2, or `custom:<file>`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long = "missing-rate")]
        missing_rate: Option<f64>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo study over an (n, missing-rate) grid.
    Benchmark {
        #[arg(long)]
        scenario: String,
        /// Comma-separated sample sizes.
        #[arg(long = "n-list", value_delimiter = ',')]
        n_list: Vec<usize>,
        /// Comma-separated missing rates.
        #[arg(long = "rate-list", value_delimiter = ',')]
        rate_list: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long = "compare-univariate", default_value_t = false)]
        compare_univariate: bool,
        #[command(flatten)]
        fit: FitOpts,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Nonparametric bootstrap standard errors and percentile intervals.
    Bootstrap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[command(flatten)]
        fit: FitOpts,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Input(String),
    NonConvergence(String),
    BootstrapUnstable(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::BootstrapUnstable(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::NonConvergence(m) | CliError::BootstrapUnstable(m) => m,
        }
    }
}

impl From<String> for CliError {
    fn from(m: String) -> Self {
        CliError::Input(m)
    }
}

fn core_err(e: CoreError) -> CliError {
    match e {
        CoreError::BootstrapUnstable { .. } => CliError::BootstrapUnstable(e.to_string()),
        _ => CliError::Input(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit {
            data,
            schema,
            fit,
            seed,
            out,
        } => cmd_fit(&data, &schema, &fit, seed, &out),
        Command::Simulate {
            scenario,
            n,
            missing_rate,
            seed,
            out,
        } => cmd_simulate(&scenario, n, missing_rate, seed, &out),
        Command::Benchmark {
            scenario,
            n_list,
            rate_list,
            reps,
            compare_univariate,
            fit,
            seed,
            out,
        } => cmd_benchmark(
            &scenario,
            &n_list,
            &rate_list,
            reps,
            compare_univariate,
            &fit,
            seed,
            &out,
        ),
        Command::Bootstrap {
            data,
            schema,
            reps,
            fit,
            seed,
            out,
        } => cmd_bootstrap(&data, &schema, reps, &fit, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mselect: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_scenario(spec: &str) -> Result<Scenario, CliError> {
    match spec {
        "1" | "scenario1" => Ok(scenario1()),
        "2" | "scenario2" => Ok(scenario2()),
        other => {
            let path = other.strip_prefix("custom:").ok_or_else(|| {
                CliError::Input(format!(
                    "scenario must be 1, 2, or custom:<file>, got '{other}'"
                ))
            })?;
            let text =
                fs::read_to_string(path).map_err(|e| CliError::Input(format!("{path}: {e}")))?;
            scenario_file::parse_scenario(&text, Path::new(path)).map_err(CliError::Input)
        }
    }
}

fn cmd_fit(
    data_path: &Path,
    schema_path: &Path,
    fit_opts: &FitOpts,
    seed: u64,
    out_path: &Path,
) -> Result<(), CliError> {
    let schema_text = fs::read_to_string(schema_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", schema_path.display())))?;
    let schema = parse_schema(&schema_text, schema_path).map_err(CliError::Input)?;
    let ds = read_dataset(data_path, &schema).map_err(CliError::Input)?;
    let out = OutDir::create(out_path)?;

    let cfg = fit_opts.config(seed);
    let res = fit(&ds.records, &ds.design, &cfg).map_err(core_err)?;

    let (names, values) = res.params.flatten();
    let rows: Vec<Vec<String>> = names
        .iter()
        .zip(&values)
        .map(|(n, v)| vec![n.clone(), g17(*v)])
        .collect();
    out.write(
        "estimates.csv",
        &csv_table(&["parameter", "estimate"], &rows),
    )?;

    let trace_rows: Vec<Vec<String>> = res
        .loglik_trace
        .iter()
        .enumerate()
        .map(|(i, ll)| vec![(i + 1).to_string(), g17(*ll)])
        .collect();
    out.write(
        "trace.csv",
        &csv_table(&["iteration", "loglik"], &trace_rows),
    )?;

    let mut rc = ResolvedConfig::new("fit");
    rc.set("data", data_path.display());
    rc.set("schema", schema_path.display());
    fit_opts.record(&mut rc);
    rc.set("seed", seed);
    rc.set("records", ds.records.len());
    rc.set("outcomes", ds.design.n_outcomes());
    rc.set("converged", res.converged);
    rc.set("iterations", res.iterations);
    rc.set_f64(
        "final_loglik",
        res.loglik_trace.last().copied().unwrap_or(f64::NAN),
    );
    for w in &res.warnings {
        rc.set("warning", w);
    }
    out.write("resolved_config", &rc.render())?;

    if res.converged {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "fit did not converge within {} iterations (see {})",
            res.iterations,
            out.path("resolved_config").display()
        )))
    }
}

/// Schema matching the simulator's generated column names.
fn generated_schema(rr: usize) -> Schema {
    let outcomes = (0..rr)
        .map(|r| OutcomeSchema {
            value: format!("y{}", r + 1),
            indicator: format!("c{}", r + 1),
            x: vec![Col::Intercept, Col::Named(format!("w{}_1", r + 1))],
            w: vec![
                Col::Intercept,
                Col::Named(format!("w{}_1", r + 1)),
                Col::Named(format!("w{}_2", r + 1)),
            ],
        })
        .collect();
    Schema { outcomes }
}

fn cmd_simulate(
    scenario_spec: &str,
    n: usize,
    missing_rate: Option<f64>,
    seed: u64,
    out_path: &Path,
) -> Result<(), CliError> {
    let mut sc = load_scenario(scenario_spec)?;
    sc = sc.with_n(n);
    sc.target_missing_rate = missing_rate;
    let gen = generate(&sc, seed).map_err(core_err)?;
    let out = OutDir::create(out_path)?;
    let rr = sc.true_params.n_outcomes();

    // Data file: per outcome, the raw covariates, indicator, and value.
    let mut header: Vec<String> = Vec::new();
    for r in 0..rr {
        header.push(format!("w{}_1", r + 1));
        header.push(format!("w{}_2", r + 1));
        header.push(format!("c{}", r + 1));
        header.push(format!("y{}", r + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let rows: Vec<Vec<String>> = gen
        .records
        .iter()
        .map(|rec| {
            let mut row = Vec::with_capacity(4 * rr);
            for r in 0..rr {
                row.push(g17(rec.w[r][1]));
                row.push(g17(rec.w[r][2]));
                row.push(if rec.c[r] { "1".into() } else { "0".into() });
                row.push(rec.y_obs[r].map(g17).unwrap_or_default());
            }
            row
        })
        .collect();
    out.write("data.csv", &csv_table(&header_refs, &rows))?;
    out.write("schema.txt", &generated_schema(rr).to_text())?;

    // Truth sidecar: effective parameters, seed, achieved rates.
    let mut truth = ResolvedConfig::new("truth");
    truth.set("scenario", sc.name);
    truth.set("n", n);
    truth.set("seed", seed);
    match missing_rate {
        Some(t) => truth.set_f64("target_missing_rate", t),
        None => truth.set("target_missing_rate", "none"),
    };
    truth.set_f64("intercept_offset", gen.intercept_offset);
    if let Some(cal) = gen.calibrated_rate {
        truth.set_f64("calibrated_missing_rate", cal);
    }
    truth.set_f64("empirical_missing_rate", gen.achieved_missing_rate);
    let (names, values) = gen.params_effective.flatten();
    for (nm, v) in names.iter().zip(&values) {
        truth.set_f64(&format!("true_{nm}"), *v);
    }
    out.write("truth.txt", &truth.render())?;

    let mut rc = ResolvedConfig::new("simulate");
    rc.set("scenario", scenario_spec);
    rc.set("n", n);
    match missing_rate {
        Some(t) => rc.set_f64("missing_rate", t),
        None => rc.set("missing_rate", "none"),
    };
    rc.set("seed", seed);
    out.write("resolved_config", &rc.render())?;
    Ok(())
}

fn summarize_cell(cell: &CellResult, arm: Arm) -> Option<Vec<String>> {
    let s = cell.summary(arm)?;
    Some(vec![
        cell.scenario.to_string(),
        cell.n.to_string(),
        cell.rate.map(g17).unwrap_or_else(|| "none".into()),
        arm.to_string(),
        s.replications.to_string(),
        g17(mselect_core::sim::median(&s.frob_b)),
        g17(mselect_core::sim::median(&s.frob_gamma)),
        g17(s.mse_sigma),
        g17(s.mse_rho),
        g17(s.mse_phi),
    ])
}

#[allow(clippy::too_many_arguments)]
fn cmd_benchmark(
    scenario_spec: &str,
    n_list: &[usize],
    rate_list: &[f64],
    reps: usize,
    compare_univariate: bool,
    fit_opts: &FitOpts,
    seed: u64,
    out_path: &Path,
) -> Result<(), CliError> {
    if n_list.is_empty() || rate_list.is_empty() {
        return Err(CliError::Input(
            "n-list and rate-list must be non-empty".into(),
        ));
    }
    let sc = load_scenario(scenario_spec)?;
    let out = OutDir::create(out_path)?;
    let rates: Vec<Option<f64>> = rate_list.iter().map(|&r| Some(r)).collect();
    let cfg = fit_opts.config(seed);
    let cells =
        run_mc(&sc, n_list, &rates, reps, &cfg, seed, compare_univariate).map_err(core_err)?;

    let mut metric_rows: Vec<Vec<String>> = Vec::new();
    for cell in &cells {
        for o in &cell.outcomes {
            metric_rows.push(vec![
                cell.scenario.to_string(),
                cell.n.to_string(),
                cell.rate.map(g17).unwrap_or_else(|| "none".into()),
                o.rep.to_string(),
                o.arm.to_string(),
                g17(o.frob_b),
                g17(o.frob_gamma),
                g17(o.err_sigma),
                g17(o.err_rho),
                g17(o.err_phi),
                o.converged.to_string(),
                o.iterations.to_string(),
            ]);
        }
    }
    out.write(
        "metrics.csv",
        &csv_table(
            &[
                "scenario",
                "n",
                "rate",
                "replication",
                "arm",
                "frob_B",
                "frob_Gamma",
                "err_sigma",
                "err_rho",
                "err_phi",
                "converged",
                "iterations",
            ],
            &metric_rows,
        ),
    )?;

    let mut summary_rows: Vec<Vec<String>> = Vec::new();
    for cell in &cells {
        for arm in [Arm::Multivariate, Arm::Univariate] {
            if let Some(row) = summarize_cell(cell, arm) {
                summary_rows.push(row);
            }
        }
    }
    out.write(
        "summary.csv",
        &csv_table(
            &[
                "scenario",
                "n",
                "rate",
                "arm",
                "replications",
                "median_frob_B",
                "median_frob_Gamma",
                "mse_sigma",
                "mse_rho",
                "mse_phi",
            ],
            &summary_rows,
        ),
    )?;

    let mut rc = ResolvedConfig::new("benchmark");
    rc.set("scenario", scenario_spec);
    rc.set(
        "n_list",
        n_list
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    rc.set(
        "rate_list",
        rate_list
            .iter()
            .map(|r| g17(*r))
            .collect::<Vec<_>>()
            .join(","),
    );
    rc.set("reps", reps);
    rc.set("compare_univariate", compare_univariate);
    fit_opts.record(&mut rc);
    rc.set("seed", seed);
    let failures: usize = cells.iter().map(|c| c.failures).sum();
    rc.set("fit_failures", failures);
    out.write("resolved_config", &rc.render())?;
    Ok(())
}

fn cmd_bootstrap(
    data_path: &Path,
    schema_path: &Path,
    reps: usize,
    fit_opts: &FitOpts,
    seed: u64,
    out_path: &Path,
) -> Result<(), CliError> {
    let schema_text = fs::read_to_string(schema_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", schema_path.display())))?;
    let schema = parse_schema(&schema_text, schema_path).map_err(CliError::Input)?;
    let ds = read_dataset(data_path, &schema).map_err(CliError::Input)?;
    let out = OutDir::create(out_path)?;

    let cfg = fit_opts.config(seed);
    let report = bootstrap(&ds.records, &ds.design, &cfg, reps, seed).map_err(core_err)?;

    let rows: Vec<Vec<String>> = report
        .names
        .iter()
        .enumerate()
        .map(|(j, nm)| {
            vec![
                nm.clone(),
                g17(report.point_values[j]),
                g17(report.se[j]),
                g17(report.ci_lower[j]),
                g17(report.ci_upper[j]),
            ]
        })
        .collect();
    out.write(
        "bootstrap.csv",
        &csv_table(
            &["parameter", "estimate", "se", "ci_lower", "ci_upper"],
            &rows,
        ),
    )?;

    let mut rep_header: Vec<String> = vec!["replication".into()];
    rep_header.extend(report.names.iter().cloned());
    let rep_header_refs: Vec<&str> = rep_header.iter().map(|s| s.as_str()).collect();
    let rep_rows: Vec<Vec<String>> = report
        .replicates
        .iter()
        .map(|(rep, vals)| {
            let mut row = vec![rep.to_string()];
            row.extend(vals.iter().map(|v| g17(*v)));
            row
        })
        .collect();
    out.write("replicates.csv", &csv_table(&rep_header_refs, &rep_rows))?;

    let mut rc = ResolvedConfig::new("bootstrap");
    rc.set("data", data_path.display());
    rc.set("schema", schema_path.display());
    rc.set("reps", reps);
    fit_opts.record(&mut rc);
    rc.set("seed", seed);
    rc.set("replications_used", report.replications_used);
    rc.set("failures", report.failures);
    out.write("resolved_config", &rc.render())?;
    Ok(())
}
