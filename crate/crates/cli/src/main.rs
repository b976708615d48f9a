mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "protofeedback", version, about = "Context-conditioned predicate prototypes")]
struct Cli {
    /// Log training progress.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override one config entry, e.g. `train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic training and test scene files.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one model and write its checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a scene file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Scene file; defaults to the config's test set.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Reference checkpoint: report how many of its confusions this one resolves.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Write the metrics report as JSON.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate a set of updater/feedback variants.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated `updater[:no-edge]` entries.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Corrupt one analytic gradient of the named check.
        #[arg(long)]
        fault: Option<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Export the similarity-shift heatmap of one scene.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Scene id; defaults to the first scene with candidates.
        #[arg(long)]
        scene: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::GenData { config } => commands::gen_data(&config),
        Command::Train { config, out } => commands::train(&config, &out),
        Command::Eval {
            checkpoint,
            data,
            config,
            overrides,
            compare,
            out,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            data,
            config,
            overrides,
            compare,
            out,
        }),
        Command::Ablate {
            config,
            out_dir,
            variants,
        } => commands::ablate(&config, &out_dir, variants.as_deref()),
        Command::Gradcheck {
            seed,
            points,
            fault,
            out,
        } => commands::gradcheck(seed, points, fault, out.as_deref()),
        Command::Heatmap {
            checkpoint,
            data,
            scene,
            out_dir,
        } => commands::heatmap(&checkpoint, &data, scene.as_deref(), &out_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
