use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use activeloop::acquisition::Strategy;
use activeloop::error::{Error, Result};
use activeloop::interface::dataset::FrameFormat;
use activeloop::interface::tables::{write_manifest, write_manifest_to};
use activeloop::interface::{
    cmd_eval, cmd_gen, cmd_report, cmd_run, cmd_select, ExperimentConfig, GenOptions, RunOptions, SelectOptions,
    DEFAULT_CONFIG_TOML,
};
use clap::{Parser, Subcommand, ValueEnum};

/// Pool-based active learning for 3D object detection on synthetic LiDAR scenes.
///
/// Set ACTIVELOOP_THREADS to bound the worker threads and RUST_LOG for log output.
#[derive(Parser, Debug)]
#[command(name = "activeloop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the documented default configuration.
    Init,
    /// Generate the configured synthetic dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scene seed, replacing the one in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
    /// Run the active-learning loop for every configured strategy.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed, replacing the one in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Strategies to run, comma separated.
        #[arg(long, value_delimiter = ',')]
        strategy: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue an interrupted run from its checkpoints.
        #[arg(long)]
        resume: bool,
        /// Stop each strategy after this many rounds in total.
        #[arg(long)]
        stop_after_rounds: Option<usize>,
    },
    /// Select frames to label from external inference records.
    Select {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        budget: usize,
        /// Manifest of frames that are already labeled.
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Configuration supplying the acquisition parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manifest to write; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the configuration's test split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare learning curves and published values.
    Report {
        /// Metrics CSVs written by `run`.
        #[arg(long, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// CSV with columns series,labeled_percent,map_percent.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Directory for report.md and curves.svg; the table is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Jsonl,
    Binary,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ACTIVELOOP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("ACTIVELOOP_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn execute(cmd: Command) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    let out_err = |e: std::io::Error| Error::io("<stdout>", e);
    match cmd {
        Command::Init => stdout.write_all(DEFAULT_CONFIG_TOML.as_bytes()).map_err(out_err)?,
        Command::Gen { config, seed, out, format } => {
            let cfg = load_config(config.as_deref())?;
            let format = match format {
                Format::Jsonl => FrameFormat::Jsonl,
                Format::Binary => FrameFormat::Binary,
            };
            let meta = cmd_gen(&cfg, &GenOptions { out: out.clone(), seed, format })?;
            writeln!(stdout, "wrote {} frames to {}", meta.frames.len(), out.display()).map_err(out_err)?;
        }
        Command::Run { config, seed, strategy, out, resume, stop_after_rounds } => {
            let cfg = load_config(config.as_deref())?;
            let opts = RunOptions { out, seed, strategies: strategy, resume, stop_after_rounds };
            let summary = cmd_run(&cfg, &opts)?;
            for (s, rounds, done) in &summary.strategies {
                let state = if *done { "complete" } else { "stopped" };
                writeln!(stdout, "{s}: {rounds} round(s), {state}").map_err(out_err)?;
            }
            writeln!(stdout, "results in {}", summary.out.display()).map_err(out_err)?;
        }
        Command::Select { records, strategy, budget, labeled, seed, config, out } => {
            let strategy: Strategy = strategy.parse()?;
            let cfg = load_config(config.as_deref())?;
            let opts = SelectOptions { records, strategy, budget, labeled, seed, acquisition: cfg.acquisition };
            let (_, rows) = cmd_select(&opts)?;
            match out {
                Some(p) => write_manifest(&p, &rows)?,
                None => write_manifest_to(&mut stdout, &rows).map_err(|e| Error::Data(e.to_string()))?,
            }
        }
        Command::Eval { config, checkpoint } => {
            let cfg = load_config(config.as_deref())?;
            let report = cmd_eval(&cfg, &checkpoint)?;
            serde_json::to_writer_pretty(&mut stdout, &report)?;
            writeln!(stdout).map_err(out_err)?;
        }
        Command::Report { metrics, reference, out } => {
            let report = cmd_report(&metrics, reference.as_deref(), out.as_deref())?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            stdout.write_all(report.markdown.as_bytes()).map_err(out_err)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match configure_threads().and_then(|_| execute(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
