//! Command-line front end. Exit codes: 0 success, 1 internal failure,
//! 2 bad usage/config/input, 3 no feasible attack cell.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aftergate::calibration::{CumulativeCurve, FitConfig};
use aftergate::config::{self, presets};
use aftergate::error::Error;
use aftergate::harness::{self, CellOutcome, SweepCell};
use aftergate::optics::ThresholdTable;
use aftergate::protocol::{
    run_baseline_frame, sift_and_count, ChannelConfig, DoubleClickPolicy, FrameConfig, Receiver,
};
use aftergate::rng::SeedKey;
use aftergate::{calibration, trace};

#[derive(Parser)]
#[command(
    name = "aftergate",
    version,
    about = "Faked-state attack simulator for a gated dual-APD QKD receiver"
)]
struct Cli {
    /// Base seed override (default: 1, or the config/manifest value)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (default: all cores); results never depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for result files
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a (frequency x transmittance) sweep from a config or manifest
    Sweep {
        /// Sweep config (TOML) or a manifest.toml from a previous run
        #[arg(long)]
        config: PathBuf,
        /// Cap the per-cell frame counts for a quick pass
        #[arg(long)]
        fast: bool,
    },
    /// Fit dark counts and trap parameters to a measured cumulative curve
    Fit {
        /// Curve file: gate index + either-detector cumulative probability,
        /// optionally followed by the two labeled per-detector columns
        #[arg(long)]
        data: PathBuf,
        /// Monte Carlo trials per objective evaluation
        #[arg(long)]
        trials: Option<u64>,
        /// Objective evaluation budget
        #[arg(long)]
        budget: Option<u32>,
        /// Starting detector files (default: bundled presets)
        #[arg(long)]
        init_d0: Option<PathBuf>,
        #[arg(long)]
        init_d1: Option<PathBuf>,
        /// Threshold table file (default: bundled)
        #[arg(long)]
        thresholds: Option<PathBuf>,
    },
    /// Report where the linear-mode thresholds permit the attack (theta > 0.5)
    Theta {
        /// Threshold table file (default: bundled)
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Scan resolution in ns
        #[arg(long, default_value_t = 0.01)]
        step_ns: f64,
    },
    /// Simulate the honest system at one operating point
    Baseline {
        #[arg(long, default_value_t = 5.0)]
        frequency_mhz: f64,
        #[arg(long, default_value_t = 1.0)]
        transmittance: f64,
        #[arg(long, default_value_t = 1000)]
        frames: u32,
        /// Also write a click trace to <out>/trace.tsv
        #[arg(long)]
        trace: bool,
    },
    /// Scan a click trace for dead-time spacing violations
    Monitor {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        dead_time_us: f64,
    },
}

/// Global options, split off the parsed CLI so subcommand payloads can move.
struct Ctx {
    seed: Option<u64>,
    threads: Option<usize>,
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // usage errors exit 2 via clap
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_)
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::DelayOutOfRange { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> aftergate::Result<ExitCode> {
    let Cli {
        seed,
        threads,
        out,
        cmd,
    } = cli;
    let ctx = Ctx { seed, threads, out };
    match cmd {
        Cmd::Sweep { config, fast } => cmd_sweep(&ctx, config, fast),
        Cmd::Fit {
            data,
            trials,
            budget,
            init_d0,
            init_d1,
            thresholds,
        } => cmd_fit(&ctx, data, trials, budget, init_d0, init_d1, thresholds),
        Cmd::Theta {
            thresholds,
            step_ns,
        } => cmd_theta(thresholds, step_ns),
        Cmd::Baseline {
            frequency_mhz,
            transmittance,
            frames,
            trace,
        } => cmd_baseline(&ctx, frequency_mhz, transmittance, frames, trace),
        Cmd::Monitor {
            trace,
            dead_time_us,
        } => cmd_monitor(trace, dead_time_us),
    }
}

fn load_thresholds(path: &Option<PathBuf>) -> aftergate::Result<ThresholdTable> {
    match path {
        Some(p) => ThresholdTable::load(p),
        None => Ok(presets::thresholds()),
    }
}

fn cell_summary(c: &SweepCell) -> String {
    let f_mhz = c.frequency_hz / 1e6;
    match &c.outcome {
        CellOutcome::Computed(st) => format!(
            "f={:>5} MHz  T={:<5} chi={:<5} burst={:.2}  rate={:.3}/{:.3}  qber={:.4} [{:.4}, {:.4}]  anomalies/frame={:.2}  {}",
            f_mhz,
            c.transmittance,
            st.chi,
            st.mean_burst_length,
            st.qber.raw_rate_per_frame,
            st.target_rate,
            st.qber.qber,
            st.qber.wilson_low,
            st.qber.wilson_high,
            st.anomalies_per_frame,
            st.verdict,
        ),
        CellOutcome::Infeasible {
            target_rate,
            max_rate,
        } => format!(
            "f={:>5} MHz  T={:<5} INFEASIBLE (best rate {max_rate:.3} < 95% of target {target_rate:.3})",
            f_mhz, c.transmittance,
        ),
    }
}

fn cmd_sweep(cli: &Ctx, config: PathBuf, fast: bool) -> aftergate::Result<ExitCode> {
    let mut run = config::load_run_config(&config)?;
    if let Some(seed) = cli.seed {
        run.sweep.base_seed = seed;
    }
    if fast {
        run.sweep.frames_per_cell = run.sweep.frames_per_cell.min(1_000);
        run.sweep.calibration_frames = run.sweep.calibration_frames.min(400);
    }
    let cells = harness::run_sweep_with_threads(&run, cli.threads)?;
    for c in &cells {
        println!("{}", cell_summary(c));
    }
    let (results, manifest) = harness::export_results(&run, &cells, &cli.out)?;
    println!("results:  {}", results.display());
    println!("manifest: {}", manifest.display());
    let feasible = cells
        .iter()
        .any(|c| matches!(c.outcome, CellOutcome::Computed(_)));
    if !feasible {
        eprintln!("no feasible cells: the attack cannot match Bob's rate anywhere on this grid");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(
    cli: &Ctx,
    data: PathBuf,
    trials: Option<u64>,
    budget: Option<u32>,
    init_d0: Option<PathBuf>,
    init_d1: Option<PathBuf>,
    thresholds: Option<PathBuf>,
) -> aftergate::Result<ExitCode> {
    let curve = CumulativeCurve::load(&data)?;
    let table = load_thresholds(&thresholds)?;
    let d0 = match &init_d0 {
        Some(p) => config::load_detector(p, table.d0.clone())?,
        None => presets::clavis2_d0_with(table.d0.clone()),
    };
    let d1 = match &init_d1 {
        Some(p) => config::load_detector(p, table.d1.clone())?,
        None => presets::clavis2_d1_with(table.d1.clone()),
    };
    let mut cfg = FitConfig::default();
    if let Some(t) = trials {
        cfg.trials_per_eval = t;
    }
    if let Some(b) = budget {
        cfg.max_evaluations = b;
    }
    let seed = SeedKey::new(cli.seed.unwrap_or(1));

    let fit = with_threads(cli.threads, || {
        calibration::fit_decay_params(&curve, &d0, &d1, &cfg, seed)
    })?;

    for d in [&fit.d0, &fit.d1] {
        println!(
            "{}: dark={:.4e}  A1={:.4e} tau1={:.4} us  A2={:.4e} tau2={:.4} us",
            d.name,
            d.dark_prob,
            d.traps[0].amplitude,
            d.traps[0].lifetime_us,
            d.traps[1].amplitude,
            d.traps[1].lifetime_us
        );
    }
    println!(
        "residual: {:.6e} (from {:.6e}) after {} evaluations{}",
        fit.residual,
        fit.initial_residual,
        fit.evaluations,
        if fit.converged { "" } else { "  NOT_CONVERGED" }
    );
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let report_path = cli.out.join("fit_report.toml");
    let report = toml::to_string_pretty(&fit)
        .map_err(|e| Error::config(format!("report serialization failed: {e}")))?;
    fs::write(&report_path, report).map_err(|e| Error::io(&report_path, e))?;
    println!("report: {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_theta(thresholds: Option<PathBuf>, step_ns: f64) -> aftergate::Result<ExitCode> {
    if !(step_ns > 0.0) {
        return Err(Error::config("step_ns must be > 0"));
    }
    let table = load_thresholds(&thresholds)?;
    let (lo, hi) = table.domain_ns();
    println!("delay domain: {lo} .. {hi} ns");
    let windows = table.feasible_windows(step_ns)?;
    if windows.is_empty() {
        println!("no feasible window: theta never exceeds 0.5");
        return Ok(ExitCode::from(3));
    }
    for (a, b) in &windows {
        println!("feasible window: {a:.2} .. {b:.2} ns (theta > 0.5)");
    }
    let (best_t, best_theta) = table.best_delay(step_ns)?;
    println!("optimal delay: {best_t:.2} ns (theta = {best_theta:.4})");
    Ok(ExitCode::SUCCESS)
}

fn cmd_baseline(
    cli: &Ctx,
    frequency_mhz: f64,
    transmittance: f64,
    frames: u32,
    write_trace: bool,
) -> aftergate::Result<ExitCode> {
    if frames == 0 {
        return Err(Error::config("frames must be >= 1"));
    }
    let fc = FrameConfig::from_frequency_hz(
        frequency_mhz * 1e6,
        FrameConfig::DEFAULT_GATES,
        FrameConfig::DEFAULT_GAP_NS,
    )?;
    let ch = ChannelConfig::coupled(transmittance);
    ch.validate()?;
    let mut rx = Receiver::new(
        presets::clavis2_d0(),
        presets::clavis2_d1(),
        0.412,
        DoubleClickPolicy::RandomBit,
    )?;
    let key = SeedKey::new(cli.seed.unwrap_or(1));
    let mut outcomes = Vec::with_capacity(frames as usize);
    for i in 0..frames {
        let mut rng = key.derive(i as u64).rng();
        outcomes.push(run_baseline_frame(&fc, &ch, &mut rx, &mut rng)?);
    }
    let q = sift_and_count(&outcomes)?;
    let anomalies: usize = outcomes
        .iter()
        .map(|(o, _)| aftergate::protocol::monitor_click_spacing(o, 10.0).len())
        .sum();
    println!(
        "frames={frames}  gate_period={} ns  clicks/frame={:.3}  sifted={}  qber={:.4} [{:.4}, {:.4}]  anomalies={anomalies}",
        fc.gate_period_ns, q.raw_rate_per_frame, q.sifted_total, q.qber, q.wilson_low, q.wilson_high
    );
    if write_trace {
        fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
        let path = cli.out.join("trace.tsv");
        let mut buf = Vec::new();
        trace::write_trace(&mut buf, &outcomes).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        println!("trace: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_monitor(trace_path: PathBuf, dead_time_us: f64) -> aftergate::Result<ExitCode> {
    if !(dead_time_us > 0.0) {
        return Err(Error::config("dead_time_us must be > 0"));
    }
    let rows = trace::read_trace(&trace_path)?;
    let scan = trace::scan_trace(&rows, dead_time_us);
    println!(
        "frames={}  clicks={}  anomalies={}  frames_with_anomalies={}",
        scan.frames,
        scan.clicks,
        scan.anomalies.len(),
        scan.frames_with_anomalies
    );
    for a in scan.anomalies.iter().take(10) {
        println!(
            "  frame {}: clicks at {} ns and {} ns, gap {} ns",
            a.frame, a.first_time_ns, a.second_time_ns, a.gap_ns
        );
    }
    if scan.anomalies.len() > 10 {
        println!("  ... {} more", scan.anomalies.len() - 10);
    }
    Ok(ExitCode::SUCCESS)
}

fn with_threads<T>(
    threads: Option<usize>,
    body: impl FnOnce() -> aftergate::Result<T> + Send,
) -> aftergate::Result<T>
where
    T: Send,
{
    match threads {
        None => body(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            pool.install(body)
        }
    }
}
