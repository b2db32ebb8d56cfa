mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use seqfit::amodal::LabelScenario;
use seqfit::model::Mode;
use seqfit::Error;

#[derive(Parser)]
#[command(name = "seqfit", about = "Sequential shape completion and pose estimation from LiDAR tracks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

impl StageArg {
    fn stages(self) -> Vec<u8> {
        match self {
            StageArg::One => vec![1],
            StageArg::Two => vec![2],
            StageArg::Three => vec![3],
            StageArg::All => vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sequential,
    PerFrame,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sequential => Mode::Sequential,
            ModeArg::PerFrame => Mode::PerFrame,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelModeArg {
    GtAccumulation,
    SequentialCompletionGt,
    SequentialCompletionExternal,
}

impl From<LabelModeArg> for LabelScenario {
    fn from(m: LabelModeArg) -> Self {
        match m {
            LabelModeArg::GtAccumulation => LabelScenario::GtAccumulation,
            LabelModeArg::SequentialCompletionGt => LabelScenario::SequentialCompletionGt,
            LabelModeArg::SequentialCompletionExternal => LabelScenario::SequentialCompletionExternal,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset of LiDAR tracks.
    Simulate {
        /// Dataset config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the model, one stage or all three in order.
    Train {
        /// Training config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        stage: StageArg,
        /// Continue from this checkpoint's weights and step counter.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Training log CSV; defaults to the checkpoint path with `.log.csv` appended.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: per-frame CSV, aggregate JSON and an SVG chart.
    Eval {
        /// Evaluation config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Evaluate only this mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Generate amodal and inmodal instance masks.
    Label {
        /// Label config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config mode.
        #[arg(long, value_enum)]
        mode: Option<LabelModeArg>,
        /// Model checkpoint for the sequential completion modes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Summarize an evaluation directory or score labels against references.
    Report {
        /// Evaluation output directory.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Predicted label directory.
        #[arg(long, requires = "reference")]
        labels: Option<PathBuf>,
        /// Reference label directory.
        #[arg(long, requires = "labels")]
        reference: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the build identifier.
    Version,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::MissingGroundTruth(_) => 2,
        Error::Io { .. } | Error::CorruptCheckpoint(_) => 3,
        _ => 4,
    }
}

fn run(cli: Cli) -> seqfit::Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate(&config, &out, seed),
        Command::Train {
            config,
            data,
            out,
            stage,
            resume,
            seed,
            mode,
            log,
        } => commands::train(commands::TrainArgs {
            config: config.as_deref(),
            data: &data,
            out: &out,
            stages: stage.stages(),
            resume: resume.as_deref(),
            seed,
            mode: mode.map(Mode::from),
            log: log.as_deref(),
        }),
        Command::Eval {
            config,
            data,
            checkpoint,
            out,
            mode,
        } => commands::eval(config.as_deref(), &data, &checkpoint, &out, mode.map(Mode::from)),
        Command::Label {
            config,
            out,
            mode,
            checkpoint,
        } => commands::label(&config, &out, mode.map(LabelScenario::from), checkpoint.as_deref()),
        Command::Report {
            eval,
            labels,
            reference,
            out,
        } => commands::report(eval.as_deref(), labels.as_deref().zip(reference.as_deref()), out.as_deref()),
        Command::Version => {
            println!("{}", commands::build_id());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
