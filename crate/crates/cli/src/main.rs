mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use farfield::Error;

#[derive(Debug, Parser)]
#[command(name = "farfield", version, about = "Multi-channel far-field speech enhancement")]
struct Cli {
    /// Worker threads for the per-frequency stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene description to WAV files with ground truth.
    Simulate(SimulateArgs),
    /// Enhance a mixture (WPE, masks, beamforming) without scoring.
    Enhance(EnhanceArgs),
    /// Score estimates against references.
    Evaluate(EvaluateArgs),
    /// Run a full pipeline config, scoring when ground truth is present.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scene TOML file.
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args, Default)]
struct StageFlags {
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write every intermediate tensor to the output directory.
    #[arg(long)]
    dump_intermediate: bool,
    /// Write one PNG heat map per mask class.
    #[arg(long)]
    mask_png: bool,
    /// WPE filter taps.
    #[arg(long)]
    taps: Option<usize>,
    /// WPE prediction delay in frames.
    #[arg(long)]
    delay: Option<usize>,
    /// WPE iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// WPE variance context, frames on each side.
    #[arg(long)]
    context: Option<usize>,
    /// Clustering class treated as noise instead of the flattest one.
    #[arg(long)]
    noise_class: Option<usize>,
    /// Clustering seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// Pipeline config; input and stage flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Multi-channel mixture WAV.
    #[arg(long, conflicts_with = "spectrogram")]
    mixture: Option<PathBuf>,
    /// Spectrogram tensor, for example `wpe_output.fftn` from an earlier run.
    #[arg(long)]
    spectrogram: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    stages: StageFlags,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Enhanced signal, repeatable; paired with `--reference` in order.
    #[arg(long = "estimate", required = true)]
    estimates: Vec<PathBuf>,
    /// Reference signal, repeatable.
    #[arg(long = "reference", required = true)]
    references: Vec<PathBuf>,
    /// Unprocessed mixture for the input SDR (best channel).
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Reference channel of multi-channel references.
    #[arg(long, default_value_t = 0)]
    reference_channel: usize,
    /// Also export log-Mel features with this many bands.
    #[arg(long)]
    mel: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline TOML file.
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    stages: StageFlags,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_numerical() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = commands::set_threads(n) {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a.scene, &a.out, &a.overrides),
        Command::Enhance(a) => commands::enhance(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Pipeline(a) => commands::pipeline(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error in stage `{stage}`: {}", e.root()),
                None => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
