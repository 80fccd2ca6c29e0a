use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spoofpmf::pipeline::{Pipeline, PipelineConfig, Stage};
use spoofpmf::{Error, ErrorClass};

/// Amplitude-PMF spoofing detection pipeline.
#[derive(Debug, Parser)]
#[command(name = "spoofpmf", version)]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run a single stage by name instead of a subcommand.
    #[arg(long, value_name = "NAME")]
    stage: Option<String>,

    /// Override the pipeline and corpus seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Pool both genders into one model set, embedding and classifier.
    #[arg(long, global = true)]
    no_gender_split: bool,

    /// Skip unreadable audio during feature extraction.
    #[arg(long, global = true)]
    lenient: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus described by [synth].
    SynthGen,
    /// Pool per-class channel PMFs over the training set.
    BuildModels,
    /// Compute difference features for every split.
    Extract,
    /// Fit a diffusion map per gender bucket.
    DmFit,
    /// Embed every split with the Nystrom extension.
    DmExtend,
    /// Train the logistic-regression classifiers.
    Train,
    /// Score, compute EER and per-attack error tables.
    Evaluate,
    /// Collect embedding, score and DET CSVs under <work_dir>/plots.
    ExportPlots,
    /// Run every stage in order.
    RunAll,
    /// Print the effective config as TOML.
    ShowConfig,
}

enum Action {
    Stage(Stage),
    RunAll,
    ShowConfig,
}

fn action(cli: &Cli) -> Result<Action, Error> {
    let from_command = cli.command.as_ref().map(|c| match c {
        Command::SynthGen => Action::Stage(Stage::SynthGen),
        Command::BuildModels => Action::Stage(Stage::BuildModels),
        Command::Extract => Action::Stage(Stage::Extract),
        Command::DmFit => Action::Stage(Stage::DmFit),
        Command::DmExtend => Action::Stage(Stage::DmExtend),
        Command::Train => Action::Stage(Stage::Train),
        Command::Evaluate => Action::Stage(Stage::Evaluate),
        Command::ExportPlots => Action::Stage(Stage::ExportPlots),
        Command::RunAll => Action::RunAll,
        Command::ShowConfig => Action::ShowConfig,
    });
    match (from_command, &cli.stage) {
        (Some(_), Some(_)) => Err(Error::InvalidArgument("give either a subcommand or --stage, not both".into())),
        (Some(a), None) => Ok(a),
        (None, Some(name)) if name == "run-all" => Ok(Action::RunAll),
        (None, Some(name)) => name.parse().map(Action::Stage),
        (None, None) => Err(Error::InvalidArgument("no stage given; try --help".into())),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let action = action(cli)?;
    let (mut config, base) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(PathBuf::from).unwrap_or_default();
            (PipelineConfig::from_toml(&text)?, base)
        }
        None => (PipelineConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if cli.no_gender_split {
        config.gender_split = false;
    }
    if let Action::ShowConfig = action {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let mut pipeline = Pipeline::new(config, base)?;
    pipeline.set_lenient(cli.lenient);
    match action {
        Action::Stage(stage) => pipeline.run(stage),
        Action::RunAll => pipeline.run_all(),
        Action::ShowConfig => unreachable!(),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
