//! Config-driven commands behind the `wrpo` binary.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or I/O
//! error, 4 numeric failure.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod verify;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::schedule::ScheduleKind;

pub use commands::{
    cmd_export_figures, cmd_gen_data, cmd_sweep_alpha, cmd_train, ExportInputs, ExportSummary, Stage, SweepRow,
};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "wrpo", version, about = "Weighted-reward preference optimization on a toy task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory (takes precedence over WRPO_OUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample candidates, build preference quadruples and write the dataset.
    GenData(CommonArgs),
    /// Run SFT, preference optimization, or both.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// sft, po or full
        #[arg(long, default_value = "full")]
        stage: String,
    },
    /// One preference-optimization run per fusion target and schedule kind.
    SweepAlpha {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated targets, e.g. 0.1,0.5,0.9
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
        /// Comma-separated schedule kinds: linear, static
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
    },
    /// Turn telemetry, the deviation report and sweep results into plot-ready CSVs.
    ExportFigures {
        #[command(flatten)]
        common: CommonArgs,
        /// Telemetry files; defaults to the run directory's PO and sweep telemetry.
        #[arg(long = "telemetry")]
        telemetry: Vec<PathBuf>,
        /// Deviation report; defaults to the run directory's.
        #[arg(long)]
        deviation: Option<PathBuf>,
        /// Sweep summary CSV; defaults to the run directory's.
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Output directory; defaults to `<run dir>/figures`.
        #[arg(long)]
        figures: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per objective kind.
        #[arg(long, default_value_t = 10)]
        instances: usize,
    },
}

/// Loads the config, then applies environment overrides, then flags.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialised; ignoring threads = {n}");
        }
    }
    Ok(cfg)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(common) => {
            let cfg = resolve_config(&common)?;
            let ds = cmd_gen_data(&cfg)?;
            println!(
                "gen-data: {} quadruples -> {}",
                ds.assembly.quadruples.len(),
                cfg.out_dir.display()
            );
        }
        Command::Train { common, stage } => {
            let stage: Stage = stage.parse()?;
            let cfg = resolve_config(&common)?;
            if let Some(m) = cmd_train(&cfg, stage)? {
                println!(
                    "train: {} steps={} accuracy={} mean_score={:.4} baseline={:.4} win_rate={:.3}",
                    m.objective,
                    m.steps,
                    m.reward_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into()),
                    m.quality.mean_score,
                    m.quality.baseline_mean_score,
                    m.quality.win_rate
                );
            } else {
                println!("train: sft snapshot -> {}", cfg.out_dir.display());
            }
        }
        Command::SweepAlpha {
            common,
            targets,
            kinds,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(t) = targets {
                cfg.sweep.targets = t;
            }
            if let Some(k) = kinds {
                cfg.sweep.kinds = k
                    .iter()
                    .map(|s| s.parse::<ScheduleKind>().map_err(|e| Error::usage(e.to_string())))
                    .collect::<Result<_>>()?;
            }
            let rows = cmd_sweep_alpha(&cfg)?;
            println!("{}", commands::SWEEP_HEADER);
            for r in rows {
                println!(
                    "{},{},{},{},{},{:.6},{:.6}",
                    r.target,
                    r.kind,
                    r.objective,
                    r.seed,
                    r.reward_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
                    r.mean_score,
                    r.win_rate
                );
            }
        }
        Command::ExportFigures {
            common,
            telemetry,
            deviation,
            sweep,
            figures,
        } => {
            let run_dir = match (&common.config, &common.out) {
                (None, None) => {
                    let mut cfg = RunConfig::default();
                    cfg.apply_env()?;
                    cfg.out_dir
                }
                _ => resolve_config(&common)?.out_dir,
            };
            let mut inputs = ExportInputs::from_run_dir(&run_dir);
            if !telemetry.is_empty() {
                inputs.telemetry = telemetry;
            }
            if deviation.is_some() {
                inputs.deviation = deviation;
            }
            if sweep.is_some() {
                inputs.sweep = sweep;
            }
            let out = figures.unwrap_or_else(|| run_dir.join(commands::files::FIGURES_DIR));
            let s = cmd_export_figures(&inputs, &out)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "export-figures: {} margin rows, {} histogram rows, {} sweep rows -> {}",
                s.margin_rows,
                s.histogram_rows,
                s.sweep_rows,
                out.display()
            );
        }
        Command::Verify { seed, instances } => {
            let checks = verify::run_checks(seed, instances.max(1))?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                return Err(Error::numeric(format!("{failed} invariant check(s) failed")));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
