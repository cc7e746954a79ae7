use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use rayon::prelude::*;

use mvdc_nmpc::metrics::{comparison_table, ReportSettings};
use mvdc_nmpc::ocp::PREVIEW;
use mvdc_nmpc::scenario::SweepVariant;
use mvdc_nmpc::{
    build_controller, compare_cost, default_scenario, evaluate, run_closed_loop, sweep_grid, CaseConfig,
    ControllerKind, Error, RunOptions, RunReport, Trajectory,
};

mod artifacts;
mod plots;

use artifacts::Artifacts;

#[derive(Debug, Parser)]
#[command(name = "mvdc-nmpc", version, about = "MVDC shipboard microgrid simulator with NMPC voltage restoration")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "MVDC_OUT_DIR", default_value = "out")]
    out: PathBuf,

    /// Re-run and compare every output against the manifest already in the
    /// output directory instead of writing.
    #[arg(long, global = true)]
    check: bool,

    /// More log output (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct CaseArgs {
    /// Scenario TOML; the built-in default scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Give the controller perfect knowledge of the future load schedule.
    #[arg(long)]
    preview: bool,

    /// Gradient method for the NMPC solver (central_difference, forward_sensitivity).
    #[arg(long)]
    gradient: Option<String>,

    /// Record wall-clock solve times (outputs are then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one controller on a scenario.
    Simulate {
        #[command(flatten)]
        case: CaseArgs,
        /// Controller name; overrides the scenario file.
        #[arg(long)]
        controller: Option<String>,
        /// Also write the plant state at every integration substep.
        #[arg(long)]
        debug_substeps: bool,
    },
    /// Run several controllers on the same scenario side by side.
    Compare {
        #[command(flatten)]
        case: CaseArgs,
        /// Controllers to compare, comma separated. Savings are relative to the first.
        #[arg(long = "controllers", value_delimiter = ',', default_values_t = ControllerKind::ALL.map(|k| k.name().to_string()))]
        controllers: Vec<String>,
    },
    /// Sweep pulse magnitude and duration over a grid.
    Sweep {
        #[command(flatten)]
        case: CaseArgs,
        /// Controller used at every grid point; overrides the scenario file.
        #[arg(long)]
        controller: Option<String>,
        /// Pulse magnitudes in watts, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        magnitudes: Vec<f64>,
        /// Pulse durations in seconds, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        durations: Vec<f64>,
        /// Parallel runs; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Evaluate a trajectory CSV written by `simulate`.
    Report {
        /// Trajectory CSV.
        #[arg(long)]
        trajectory: PathBuf,
        /// Scenario the trajectory was produced from; the default scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Controller that produced the trajectory; overrides the scenario file.
        #[arg(long)]
        controller: Option<String>,
    },
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
struct CheckFailed(Vec<String>);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "output check failed:\n  {}", self.0.join("\n  "))
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Debug)]
struct RunsFailed(usize);

impl std::fmt::Display for RunsFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} run(s) failed", self.0)
    }
}

impl std::error::Error for RunsFailed {}

/// 1 for failed runs and failed checks, 2 for bad input.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_divergence() { 1 } else { 2 };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
        if cause.is::<CheckFailed>() || cause.is::<RunsFailed>() {
            return 1;
        }
        if cause.is::<std::io::Error>() || cause.is::<toml::de::Error>() {
            return 2;
        }
    }
    1
}

/// Write to stdout, quietly giving up if the reader has gone away.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

fn load_case(args: &CaseArgs, controller: Option<&str>) -> Result<CaseConfig> {
    let mut case = match &args.scenario {
        Some(p) => CaseConfig::load(p).with_context(|| format!("loading scenario {}", p.display()))?,
        None => default_scenario(),
    };
    if let Some(c) = controller {
        case.controller = c.to_string();
    }
    if args.preview {
        case.ocp.forecast = PREVIEW.to_string();
    }
    if let Some(g) = &args.gradient {
        case.ocp.gradient = g.clone();
    }
    case.validate()?;
    Ok(case)
}

struct RunOutput {
    traj: Trajectory,
    report: RunReport,
    wall_s: f64,
}

fn run_case(case: &CaseConfig, record_substeps: bool) -> Result<RunOutput> {
    let mut controller = build_controller(case)?;
    let start = Instant::now();
    let traj = run_closed_loop(case, controller.as_mut(), RunOptions { record_substeps })
        .with_context(|| format!("running {}", case.controller))?;
    let wall_s = start.elapsed().as_secs_f64();
    let report = evaluate(&traj, case)?;
    Ok(RunOutput { traj, report, wall_s })
}

fn run_artifacts(case: &CaseConfig, run: &RunOutput, timing: bool) -> Result<Artifacts> {
    let mut out = Artifacts::default();
    out.add("scenario.toml", case.to_toml()?);
    let mut csv = Vec::new();
    run.traj.write_csv(&mut csv, timing)?;
    out.add("trajectory.csv", csv);
    out.add("report.toml", run.report.to_toml()?);
    out.add("report.txt", run.report.to_table());
    plots::add_plot_files(&mut out, &run.traj, case.ocp.v_sp_v);
    if let Some(subs) = run.traj.substeps() {
        let mut s = String::from("t_s,v_o_v,i_sga_a,i_sgb_a,i_ba_a,i_bb_a,i_sca_a,i_scb_a,v_ca_v,v_cb_v\n");
        for (t, x) in subs {
            let cols: Vec<String> = x.to_array().iter().map(f64::to_string).collect();
            s.push_str(&format!("{t},{}\n", cols.join(",")));
        }
        out.add("substeps.csv", s);
    }
    if timing {
        let solves: Vec<f64> = run.traj.diagnostics().iter().flatten().map(|d| d.solve_time_s).collect();
        let mean = if solves.is_empty() { 0.0 } else { solves.iter().sum::<f64>() / solves.len() as f64 };
        let max = solves.iter().copied().fold(0.0, f64::max);
        out.add(
            "timing.txt",
            format!("wall_s {:.6}\nsolves {}\nsolve_mean_s {mean:.6}\nsolve_max_s {max:.6}\n", run.wall_s, solves.len()),
        );
    }
    Ok(out)
}

fn finish(out: &Artifacts, root: &Path, check: bool) -> Result<()> {
    if check {
        let problems = out.check(root)?;
        if !problems.is_empty() {
            return Err(CheckFailed(problems).into());
        }
        emit(&format!(
            "check passed: {} files match {}\n",
            out.manifest().files.len(),
            root.join(artifacts::MANIFEST).display()
        ));
    } else {
        let written = out.write(root)?;
        emit(&format!("wrote {} files to {}\n", written.len(), root.display()));
    }
    Ok(())
}

fn simulate(cli: &Cli, args: &CaseArgs, controller: Option<&str>, debug_substeps: bool) -> Result<()> {
    let case = load_case(args, controller)?;
    let run = run_case(&case, debug_substeps)?;
    info!("{} finished in {:.2} s", case.controller, run.wall_s);
    let out = run_artifacts(&case, &run, args.timing)?;
    emit(&run.report.to_table());
    finish(&out, &cli.out, cli.check)
}

fn compare(cli: &Cli, args: &CaseArgs, controllers: &[String]) -> Result<()> {
    if controllers.len() < 2 {
        return Err(UsageError(format!("compare needs at least two controllers, got {}", controllers.len())).into());
    }
    let base = load_case(args, None)?;
    let cases: Vec<CaseConfig> = controllers.iter().map(|c| base.clone().with_controller(c.as_str())).collect();
    for c in &cases {
        build_controller(c)?;
    }
    let results: Vec<Result<RunOutput>> = cases.par_iter().map(|c| run_case(c, false)).collect();

    let mut out = Artifacts::default();
    let mut reports = Vec::new();
    let mut failed = 0;
    for (case, res) in cases.iter().zip(results) {
        match res {
            Ok(run) => {
                out.extend_under(&case.controller, run_artifacts(case, &run, args.timing)?);
                reports.push(run.report);
            }
            Err(e) => {
                error!("{}: {e:#}", case.controller);
                failed += 1;
            }
        }
    }
    let mut table = comparison_table(&reports);
    if let Some(first) = reports.first() {
        table.push_str(&format!("\nsavings relative to {}\n", first.controller));
    }
    for pair in reports.windows(2) {
        let s = compare_cost(&pair[1], &pair[0])?;
        table.push_str(&format!("{} vs {}: {s:.2} % generation-cost savings\n", pair[1].controller, pair[0].controller));
    }
    emit(&table);
    out.add("comparison.txt", table);
    #[derive(serde::Serialize)]
    struct Comparison<'a> {
        runs: &'a [RunReport],
    }
    out.add("comparison.toml", toml::to_string(&Comparison { runs: &reports })?);
    finish(&out, &cli.out, cli.check)?;
    if failed > 0 {
        return Err(RunsFailed(failed).into());
    }
    Ok(())
}

#[derive(Debug, Clone, serde::Serialize)]
struct SweepPoint {
    magnitude_w: f64,
    duration_s: f64,
    status: String,
    max_pulse_deviation_v: Option<f64>,
    worst_droop_settle_s: Option<f64>,
    worst_sc_settle_s: Option<f64>,
    report: Option<RunReport>,
}

/// Largest value, or `None` if any entry never settled.
fn worst(mut values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.try_fold(0.0, |acc: f64, v| Some(acc.max(v?)))
}

fn sweep_point(v: &SweepVariant) -> SweepPoint {
    let mut point = SweepPoint {
        magnitude_w: v.magnitude_w,
        duration_s: v.duration_s,
        status: String::new(),
        max_pulse_deviation_v: None,
        worst_droop_settle_s: None,
        worst_sc_settle_s: None,
        report: None,
    };
    let case = match &v.config {
        Ok(c) => c,
        Err(e) => {
            point.status = format!("skipped: {e}");
            return point;
        }
    };
    match run_case(case, false) {
        Ok(run) => {
            let r = run.report;
            point.max_pulse_deviation_v = Some(r.pulses.iter().map(|p| p.max_voltage_deviation_v).fold(0.0, f64::max));
            point.worst_droop_settle_s =
                worst(r.pulses.iter().flat_map(|p| [p.droop_settle_rise_s, p.droop_settle_fall_s]));
            point.worst_sc_settle_s = worst(r.pulses.iter().map(|p| p.sc_settle_s));
            point.status = "ok".into();
            point.report = Some(r);
        }
        Err(e) => point.status = format!("failed: {e:#}"),
    }
    point
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "never".into(), |x| format!("{x:.3}"))
}

fn sweep(cli: &Cli, args: &CaseArgs, controller: Option<&str>, mags: &[f64], durs: &[f64], workers: usize) -> Result<()> {
    let base = load_case(args, controller)?;
    build_controller(&base)?;
    let grid = sweep_grid(&base, mags, durs)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let points: Vec<SweepPoint> = pool.install(|| grid.par_iter().map(sweep_point).collect());

    let mut csv = String::from("magnitude_w,duration_s,status,max_pulse_deviation_v,worst_droop_settle_s,worst_sc_settle_s,voltage_mape_pct\n");
    let mut txt = format!(
        "{:>12} {:>10} {:>14} {:>14} {:>12} {:>10}\n",
        "magnitude_W", "duration_s", "dV_pulse_max_V", "droop_settle_s", "sc_settle_s", "MAPE_%"
    );
    let mut failed = 0;
    for p in &points {
        let mape = p.report.as_ref().map(|r| r.voltage_mape_pct);
        let num = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.magnitude_w,
            p.duration_s,
            if p.status == "ok" { "ok" } else if p.status.starts_with("skipped") { "skipped" } else { "failed" },
            num(p.max_pulse_deviation_v),
            num(p.worst_droop_settle_s),
            num(p.worst_sc_settle_s),
            num(mape),
        ));
        if p.status == "ok" {
            txt.push_str(&format!(
                "{:>12.0} {:>10.3} {:>14.3} {:>14} {:>12} {:>10.4}\n",
                p.magnitude_w,
                p.duration_s,
                p.max_pulse_deviation_v.unwrap_or(0.0),
                fmt_opt(p.worst_droop_settle_s),
                fmt_opt(p.worst_sc_settle_s),
                mape.unwrap_or(0.0)
            ));
        } else {
            if !p.status.starts_with("skipped") {
                failed += 1;
            }
            warn!("magnitude {} W, duration {} s: {}", p.magnitude_w, p.duration_s, p.status);
            txt.push_str(&format!("{:>12.0} {:>10.3}   {}\n", p.magnitude_w, p.duration_s, p.status));
        }
    }
    emit(&txt);
    let mut out = Artifacts::default();
    out.add("sweep.csv", csv);
    out.add("sweep.txt", txt);
    #[derive(serde::Serialize)]
    struct Sweep<'a> {
        controller: &'a str,
        points: &'a [SweepPoint],
    }
    out.add("sweep.toml", toml::to_string(&Sweep { controller: &base.controller, points: &points })?);
    finish(&out, &cli.out, cli.check)?;
    if failed > 0 {
        bail!(RunsFailed(failed));
    }
    Ok(())
}

fn report(cli: &Cli, trajectory: &Path, scenario: Option<&Path>, controller: Option<&str>) -> Result<()> {
    let args = CaseArgs { scenario: scenario.map(Path::to_path_buf), preview: false, gradient: None, timing: false };
    let case = load_case(&args, controller)?;
    let file = std::fs::File::open(trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
    let traj = Trajectory::read_csv(file, &case.controller, &case.scenario_hash())?;
    let report = mvdc_nmpc::metrics::evaluate_with(&traj, &case, &ReportSettings::default())?;
    emit(&report.to_table());
    let mut out = Artifacts::default();
    out.add("report.toml", report.to_toml()?);
    out.add("report.txt", report.to_table());
    finish(&out, &cli.out, cli.check)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { case, controller, debug_substeps } => {
            simulate(cli, case, controller.as_deref(), *debug_substeps)
        }
        Command::Compare { case, controllers } => compare(cli, case, controllers),
        Command::Sweep { case, controller, magnitudes, durations, workers } => {
            sweep(cli, case, controller.as_deref(), magnitudes, durations, *workers)
        }
        Command::Report { trajectory, scenario, controller } => {
            report(cli, trajectory, scenario.as_deref(), controller.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
