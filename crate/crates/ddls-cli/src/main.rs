//! Command-line driver: scenario execution with CSV emission, standalone
//! configuration validation, and channel replay for debugging.

use clap::{Args, Parser, Subcommand};
use ddls_core::channel::sample_paths;
use ddls_core::harness::{
    check_pipeline, pilot_parity_check, run_scenario, Predictor, Waveform,
};
use ddls_core::io::{read_channel, write_channel, write_dd_grid, write_tf_grid, ChannelFile};
use ddls_core::mimo::assemble_mimo_otfs;
use ddls_core::ofdm::{ofdm_ti_gains, TfGrid};
use ddls_core::otfs::DdGrid;
use ddls_core::scenario::{builtin_scenario, builtin_scenarios, PathMode, ScenarioConfig};
use ddls_core::{DdlsError, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ddls",
    version,
    about = "Delay-Doppler link simulator: OTFS/OFDM precoder prediction experiments"
)]
struct Cli {
    /// Worker threads for trial parallelism (fallback: DDLS_THREADS, then
    /// all cores). Results are identical for any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario's Monte Carlo and write metrics CSV plus a manifest.
    Run(RunArgs),
    /// Check the structural and pilot-parity constraints without simulating.
    Validate(ValidateArgs),
    /// Rebuild the equivalent channel matrices of a saved channel file.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Builtin scenario name (see `validate --emit` for the list).
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario configuration file (JSON, same schema as --emit output).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated SNR grid in dB, overriding the scenario's.
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    /// Trial count override.
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default ./results/<scenario>-<seed>/).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated predictors
    /// (none|stale|deterministic|cebem|gcebem|gcebem-gn|ideal).
    #[arg(long, value_delimiter = ',')]
    predictors: Option<Vec<String>>,
    /// Comma-separated waveforms (ofdm|otfs).
    #[arg(long, value_delimiter = ',')]
    waveforms: Option<Vec<String>>,
    /// Write each trial's channel realization to channels/trial_<i>.json.
    #[arg(long)]
    save_channels: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// Builtin scenario to check; default checks every builtin.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario configuration file to check.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Emit the builtin scenarios as JSON to stdout and exit.
    #[arg(long)]
    emit: bool,
}

#[derive(Args)]
struct ReplayArgs {
    /// Channel file from a previous run (channels/trial_<i>.json).
    #[arg(long)]
    channel: PathBuf,
    /// Frame index to rebuild.
    #[arg(long)]
    frame: usize,
    /// Output directory (default: alongside the channel file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump the full MN×MN equivalent matrix per antenna pair.
    #[arg(long)]
    full: bool,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    timestamp_unix: u64,
    config_path: Option<String>,
    scenario: &'a ScenarioConfig,
    out_dir: String,
    base_seed: u64,
    waveforms: Vec<String>,
    predictors: Vec<String>,
}

fn main() -> ExitCode {
    // Keep the BLAS single-threaded: trials are the parallelism unit and
    // the ordered reduction must not depend on BLAS threading.
    std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("DDLS_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(num_threads_default);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("thread pool: {e}");
    }
    match run_cli(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn run_cli(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Validate(args) => cmd_validate(args),
        Cmd::Replay(args) => cmd_replay(args),
    }
}

fn load_scenario(
    scenario: &Option<String>,
    config: &Option<PathBuf>,
) -> Result<(ScenarioConfig, Option<String>)> {
    match (scenario, config) {
        (Some(name), None) => {
            let cfg = builtin_scenario(name).ok_or_else(|| {
                let names: Vec<String> =
                    builtin_scenarios().iter().map(|s| s.name.clone()).collect();
                DdlsError::Config(format!(
                    "unknown scenario '{name}'; available: {}",
                    names.join(", ")
                ))
            })?;
            Ok((cfg, None))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| DdlsError::io(path.display().to_string(), e))?;
            let cfg: ScenarioConfig = serde_json::from_str(&text)
                .map_err(|e| DdlsError::Config(format!("{}: {e}", path.display())))?;
            Ok((cfg, Some(path.display().to_string())))
        }
        _ => Err(DdlsError::Config(
            "exactly one of --scenario or --config is required".into(),
        )),
    }
}

/// Default pipeline matrix for a scenario: every predictor the waveform
/// supports in this mode.
fn default_variants(cfg: &ScenarioConfig, waveforms: &[Waveform]) -> Vec<(Waveform, Predictor)> {
    let candidates = |w: Waveform| -> Vec<Predictor> {
        match (w, cfg.mode) {
            (Waveform::Otfs, PathMode::Integer) => {
                vec![Predictor::Ideal, Predictor::Deterministic, Predictor::Stale]
            }
            (Waveform::Otfs, PathMode::Fractional) => vec![
                Predictor::Ideal,
                Predictor::GcebemGn,
                Predictor::Gcebem,
                Predictor::Stale,
            ],
            (Waveform::Ofdm, _) => vec![Predictor::Ideal, Predictor::Cebem, Predictor::Stale],
        }
    };
    let mut out = Vec::new();
    for &w in waveforms {
        for p in candidates(w) {
            if check_pipeline(cfg, w, p).is_ok() {
                out.push((w, p));
            }
        }
    }
    out
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let (mut cfg, config_path) = load_scenario(&args.scenario, &args.config)?;
    if let Some(snr) = args.snr {
        cfg.snr_db = snr;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    cfg.validate()?;
    pilot_parity_check(&cfg)?;

    let waveforms: Vec<Waveform> = match &args.waveforms {
        Some(list) => list
            .iter()
            .map(|s| Waveform::parse(s))
            .collect::<Result<_>>()?,
        None => vec![Waveform::Otfs, Waveform::Ofdm],
    };
    let variants: Vec<(Waveform, Predictor)> = match &args.predictors {
        Some(list) => {
            let preds: Vec<Predictor> = list
                .iter()
                .map(|s| Predictor::parse(s))
                .collect::<Result<_>>()?;
            let mut out = Vec::new();
            for &w in &waveforms {
                for &p in &preds {
                    // Predictors apply to the waveform that supports them;
                    // with a single waveform selected a mismatch is an error.
                    match check_pipeline(&cfg, w, p) {
                        Ok(()) => out.push((w, p)),
                        Err(_) if waveforms.len() > 1 => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            if out.is_empty() {
                return Err(DdlsError::Config(
                    "no valid (waveform, predictor) combinations selected".into(),
                ));
            }
            out
        }
        None => default_variants(&cfg, &waveforms),
    };

    let out_dir = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("results/{}-{}", cfg.name, cfg.base_seed)));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| DdlsError::io(out_dir.display().to_string(), e))?;

    let manifest = RunManifest {
        tool: "ddls",
        version: env!("CARGO_PKG_VERSION"),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config_path,
        scenario: &cfg,
        out_dir: out_dir.display().to_string(),
        base_seed: cfg.base_seed,
        waveforms: waveforms.iter().map(|w| w.to_string()).collect(),
        predictors: variants.iter().map(|(w, p)| format!("{w}:{p}")).collect(),
    };
    let manifest_path = out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| DdlsError::Config(format!("manifest: {e}")))?,
    )
    .map_err(|e| DdlsError::io(manifest_path.display().to_string(), e))?;

    if args.save_channels {
        let ch_dir = out_dir.join("channels");
        std::fs::create_dir_all(&ch_dir)
            .map_err(|e| DdlsError::io(ch_dir.display().to_string(), e))?;
        for t in 0..cfg.trials {
            let set = sample_paths(&cfg, cfg.base_seed.wrapping_add(t as u64))?;
            let file = ChannelFile {
                grid: cfg.grid.clone(),
                channel: set,
                frames: cfg.warmup() + cfg.measured_frames,
            };
            write_channel(&ch_dir.join(format!("trial_{t}.json")), &file)?;
        }
    }

    let table = run_scenario(&cfg, &variants, Some(&out_dir))?;
    println!(
        "wrote {} rows to {}",
        table.rows.len(),
        out_dir.join("metrics.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    if args.emit {
        let json = serde_json::to_string_pretty(&builtin_scenarios())
            .map_err(|e| DdlsError::Config(format!("emit: {e}")))?;
        println!("{json}");
        return Ok(ExitCode::SUCCESS);
    }
    let targets: Vec<(ScenarioConfig, Option<String>)> =
        if args.scenario.is_none() && args.config.is_none() {
            builtin_scenarios().into_iter().map(|s| (s, None)).collect()
        } else {
            vec![load_scenario(&args.scenario, &args.config)?]
        };
    let mut failures = 0;
    for (cfg, _) in &targets {
        match validate_one(cfg) {
            Ok(report) => {
                println!("{}: OK", cfg.name);
                for line in report {
                    println!("  {line}");
                }
            }
            Err(e) => {
                failures += 1;
                println!("{}: FAIL", cfg.name);
                println!("  {e}");
            }
        }
    }
    if failures > 0 {
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn validate_one(cfg: &ScenarioConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let mut lines = Vec::new();
    let g = &cfg.grid;
    lines.push(format!(
        "frame length parity: c_otfs = {} = M*c_ofdm = {}*{}",
        g.c_otfs, g.m_doppler, g.c_ofdm
    ));
    match g.periodicity_k() {
        Some(k) => lines.push(format!("periodicity: c = kN with k = {k}")),
        None => {
            if cfg.mode == PathMode::Integer {
                return Err(DdlsError::Config(format!(
                    "integer prediction requires c_otfs = kN; c_otfs = {}, N = {}",
                    g.c_otfs, g.n_delay
                )));
            }
            lines.push("periodicity: c is not a multiple of N (fractional mode)".into());
        }
    }
    let parity = pilot_parity_check(cfg)?;
    lines.push(format!(
        "pilot budget: OFDM {} cells = OTFS {} (pilot+guard), OTFS impulse amplitude {:.6}",
        parity.ofdm_pilot_cells, parity.otfs_budget, parity.otfs_pilot_amplitude
    ));
    lines.push(format!(
        "payload: {} data cells per frame per waveform",
        parity.data_cells
    ));
    Ok(lines)
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode> {
    let file = read_channel(&args.channel)?;
    if args.frame >= file.frames {
        return Err(DdlsError::Config(format!(
            "frame {} beyond the run horizon of {} frames",
            args.frame, file.frames
        )));
    }
    let g = &file.grid;
    let (m, n) = (g.m_doppler, g.n_delay);
    let out = args.out.unwrap_or_else(|| {
        args.channel
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("replay-frame{}", args.frame))
    });
    std::fs::create_dir_all(&out).map_err(|e| DdlsError::io(out.display().to_string(), e))?;

    let integer = file.channel.pairs.iter().all(|p| p.is_integer());
    let mode = if integer {
        PathMode::Integer
    } else {
        PathMode::Fractional
    };
    let full = assemble_mimo_otfs(&file.channel, m, n, g.c_otfs, args.frame, mode)?;
    for p in 0..g.nr {
        for q in 0..g.nt {
            let mn = m * n;
            let block = full.slice(ndarray::s![p * mn..(p + 1) * mn, q * mn..(q + 1) * mn]);
            // Delay-Doppler response: the first column reshaped onto the grid.
            let col = block.column(0).to_owned();
            let dd = DdGrid::from_vector(&col, m, n)?;
            write_dd_grid(&out.join(format!("dd_response_rx{p}_tx{q}.csv")), &dd)?;
            if args.full {
                let grid = DdGrid {
                    m_doppler: mn,
                    n_delay: mn,
                    data: block.to_owned(),
                };
                write_dd_grid(&out.join(format!("equiv_channel_rx{p}_tx{q}.csv")), &grid)?;
            }
            // Per-symbol TI gains across the frame.
            let mut tf = TfGrid::zeros(m, n);
            for s in 0..m {
                let gains = ofdm_ti_gains(
                    file.channel.pair(p, q),
                    n,
                    m,
                    g.c_ofdm,
                    args.frame * m + s,
                );
                tf.data.row_mut(s).assign(&gains);
            }
            write_tf_grid(&out.join(format!("tf_gains_rx{p}_tx{q}.csv")), &tf)?;
        }
    }
    println!("wrote replay grids to {}", out.display());
    Ok(ExitCode::SUCCESS)
}
