//! Command-line driver: run a docking scenario, Monte-Carlo batches, replay
//! recorded logs, and run the self-verification suite.
//!
//! Exit codes: 0 success (simulate: docked; montecarlo: all runs docked;
//! verify: all checks pass), 2 docking failure, 1 error.

use clap::{Args, Parser, Subcommand};
use relnav::config::ScenarioConfig;
use relnav::io;
use relnav::scenario::{self, RunOptions};
use relnav::stats::chi2_quantile;
use relnav::verify::{self, FaultInjection};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "relnav",
    version,
    about = "Relative-state estimation and docking simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Scenario config file (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $RELNAV_OUT or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one docking scenario; writes run.log, trace.csv and metrics.csv.
    Simulate(CommonRunArgs),
    /// Run a Monte-Carlo batch; writes runs.csv and summary.csv.
    Montecarlo {
        #[command(flatten)]
        common: CommonRunArgs,
        /// Number of runs.
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Execute runs serially instead of across threads (same results).
        #[arg(long)]
        serial: bool,
    },
    /// Replay a recorded sensor log through a fresh estimator.
    Replay {
        /// Log file produced by `simulate`.
        #[arg(long)]
        log: PathBuf,
        /// Scenario config used for extrinsics, noise and initial covariance.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: $RELNAV_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-verification suite and print per-check margins.
    Verify {
        /// Deliberately corrupt a check to exercise failure reporting.
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
}

fn out_dir(arg: &Option<PathBuf>) -> PathBuf {
    arg.clone()
        .or_else(|| std::env::var_os("RELNAV_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p).map_err(|e| e.to_string())?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn simulate(args: &CommonRunArgs) -> Result<u8, String> {
    let cfg = load_config(&args.config, args.seed)?;
    let dir = out_dir(&args.out);
    std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;

    let out = scenario::run_docking(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    io::write_log_file(&dir.join("run.log"), &out.log).map_err(|e| e.to_string())?;
    io::write_trace_csv_file(&dir.join("trace.csv"), &out.trace).map_err(|e| e.to_string())?;
    let row = out.metrics.to_csv_row(0);
    io::write_metrics_csv_file(&dir.join("metrics.csv"), &[row]).map_err(|e| e.to_string())?;

    let m = &out.metrics;
    println!(
        "seed {}: {}  switchover={:.3}s trigger={} dock={} updates={} (skipped {})",
        m.seed,
        if m.success { "DOCKED" } else { "FAILED" },
        m.switchover_t.unwrap_or(f64::NAN),
        m.trigger_t.map_or("-".into(), |t| format!("{t:.3}s")),
        m.time_to_dock.map_or("-".into(), |t| format!("{t:.3}s")),
        m.updates_applied,
        m.updates_skipped,
    );
    println!("wrote {}", dir.join("run.log").display());
    Ok(if m.success { 0 } else { 2 })
}

fn montecarlo(common: &CommonRunArgs, runs: usize, serial: bool) -> Result<u8, String> {
    if runs < 1 {
        return Err("--runs must be at least 1".into());
    }
    let cfg = load_config(&common.config, common.seed)?;
    let dir = out_dir(&common.out);
    std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;

    let out = scenario::run_monte_carlo(&cfg, runs, !serial).map_err(|e| e.to_string())?;
    let rows: Vec<io::MetricsCsvRow> = out
        .per_run
        .iter()
        .enumerate()
        .map(|(i, m)| m.to_csv_row(i as u64))
        .collect();
    io::write_metrics_csv_file(&dir.join("runs.csv"), &rows).map_err(|e| e.to_string())?;

    let s = &out.summary;
    let dof = 9 * runs as u32;
    let (nees_lo, nees_hi) = (
        chi2_quantile(dof, 0.025) / runs as f64,
        chi2_quantile(dof, 0.975) / runs as f64,
    );
    let summary_path = dir.join("summary.csv");
    let summary_text = format!(
        "# schema: relnav-summary 1\nruns,successes,success_rate,pos_err_med_m,pos_err_p95_m,\
frac_pos_err_lt_10cm,inrange_pos_err_med_m,inrange_pos_err_p95_m,yaw_err_med_deg,\
roll_err_med_deg,pitch_err_med_deg,frac_yaw_err_lt_5deg,mean_nees,nees_lo,nees_hi\n\
{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        s.runs,
        s.successes,
        s.successes as f64 / s.runs as f64,
        s.pos_err_med_m,
        s.pos_err_p95_m,
        s.frac_pos_err_lt_10cm,
        s.inrange_pos_err_med_m,
        s.inrange_pos_err_p95_m,
        s.yaw_err_med_deg,
        s.roll_err_med_deg,
        s.pitch_err_med_deg,
        s.frac_yaw_err_lt_5deg,
        s.mean_nees,
        nees_lo,
        nees_hi,
    );
    std::fs::write(&summary_path, summary_text).map_err(|e| e.to_string())?;

    println!("runs                    {}", s.runs);
    println!("successes               {}/{}", s.successes, s.runs);
    println!("pos err median          {:.4} m", s.pos_err_med_m);
    println!("pos err p95             {:.4} m", s.pos_err_p95_m);
    println!(
        "pos err < 10 cm         {:.2}%",
        100.0 * s.frac_pos_err_lt_10cm
    );
    println!("in-range p50 error      {:.4} m", s.inrange_pos_err_med_m);
    println!("in-range p95 error      {:.4} m", s.inrange_pos_err_p95_m);
    println!("yaw err median          {:.3} deg", s.yaw_err_med_deg);
    println!(
        "roll/pitch err median   {:.3}/{:.3} deg",
        s.roll_err_med_deg, s.pitch_err_med_deg
    );
    println!(
        "yaw err < 5 deg         {:.2}%",
        100.0 * s.frac_yaw_err_lt_5deg
    );
    println!(
        "mean NEES               {:.3} (95% interval [{nees_lo:.3}, {nees_hi:.3}])",
        s.mean_nees
    );
    println!(
        "wrote {} and {}",
        dir.join("runs.csv").display(),
        summary_path.display()
    );
    Ok(if s.successes == s.runs { 0 } else { 2 })
}

fn replay_cmd(log: &Path, config: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<u8, String> {
    let cfg = load_config(config, None)?;
    let dir = out_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;

    let records = io::read_log_file(log).map_err(|e| e.to_string())?;
    let first_estimate = records
        .iter()
        .find_map(|r| match r {
            io::LogRecord::Estimate(e) => Some(*e),
            _ => None,
        })
        .ok_or("log contains no ESTIMATE record to initialize from")?;
    let initial = io::InitialEstimate {
        position: first_estimate.position,
        velocity: first_estimate.velocity,
        attitude: first_estimate.rotation,
        cov_diag: cfg.initial_covariance_diag(),
        t: first_estimate.t,
    };
    let result = io::replay(
        &records,
        &cfg.extrinsics().map_err(|e| e.to_string())?,
        &cfg.process_noise(),
        &cfg.measurement_noise(),
        &relnav::estimator::WorldParams::default(),
        &initial,
        cfg.estimator.innovation_gate,
    )
    .map_err(|e| e.to_string())?;

    println!(
        "replayed {} records: {} predictions, {} updates ({} skipped)",
        records.len(),
        result.predicts,
        result.updates_applied,
        result.updates_skipped
    );
    let metrics_path = dir.join("replay_metrics.csv");
    let mut text = String::from(
        "# schema: relnav-replay 1\nsamples,pos_err_median_m,pos_err_p95_m,pos_err_max_m,\
att_err_median_deg,att_err_max_deg\n",
    );
    if let Some(m) = &result.metrics {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.samples,
            m.pos_err_median,
            m.pos_err_p95,
            m.pos_err_max,
            m.att_err_median_deg,
            m.att_err_max_deg
        ));
        println!(
            "pos err median {:.4} m, p95 {:.4} m, max {:.4} m",
            m.pos_err_median, m.pos_err_p95, m.pos_err_max
        );
    } else {
        println!("no truth records in log; error metrics unavailable");
    }
    std::fs::write(&metrics_path, text).map_err(|e| e.to_string())?;
    println!("wrote {}", metrics_path.display());
    Ok(0)
}

fn verify_cmd(fault: &Option<String>) -> Result<u8, String> {
    let fault = match fault.as_deref() {
        None => FaultInjection::None,
        Some("jacobian") => FaultInjection::Jacobian,
        Some(other) => return Err(format!("unknown fault '{other}'")),
    };
    let reports = verify::run_all(fault);
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{:<22} {}  {}",
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        all_pass &= r.pass;
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Montecarlo {
            common,
            runs,
            serial,
        } => montecarlo(common, *runs, *serial),
        Command::Replay { log, config, out } => replay_cmd(log, config, out),
        Command::Verify { fault } => verify_cmd(fault),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
