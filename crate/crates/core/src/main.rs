use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use glis::pipeline::{load_config, run_stage, validate_file, LlmBackend, RunOptions, SchemaName, Stage};

#[derive(Parser)]
#[command(name = "glis", version, about = "Lidar open-vocabulary 3D detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

#[derive(Args)]
struct StageArgs {
    /// Configuration file; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Restrict the stage to one scene.
    #[arg(long)]
    scene: Option<String>,
    /// Override the configured language-model backend.
    #[arg(long, value_enum)]
    backend: Option<Backend>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter 2D labels and lift the survivors to 3D pseudo labels.
    Rplg(StageArgs),
    /// Match proposals to pseudo labels and write objectness targets.
    BaolLabel(StageArgs),
    /// Run the question-answer session and write refined detections.
    Infer(StageArgs),
    /// Score detections against ground truth.
    Eval(StageArgs),
    /// Generate synthetic scenes.
    Synth(StageArgs),
    /// Run the numeric loss invariants.
    LossesCheck(StageArgs),
    /// Compare mAP with and without refinement over synthetic trials.
    Experiment {
        #[command(flatten)]
        args: StageArgs,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Check a file against one of the interchange schemas.
    Validate {
        path: PathBuf,
        #[arg(long)]
        schema: String,
    },
}

fn run_validate(path: PathBuf, schema: &str) -> ExitCode {
    let schema: SchemaName = match schema.parse() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match validate_file(&path, schema) {
        Ok(violations) => {
            for v in &violations {
                eprintln!("{v}");
            }
            let summary = json!({"path": path, "schema": schema.as_str(), "violations": violations});
            println!("{summary}");
            if violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            ExitCode::from(4)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (stage, args, trials) = match cli.command {
        Command::Validate { path, schema } => return run_validate(path, &schema),
        Command::Rplg(a) => (Stage::Rplg, a, None),
        Command::BaolLabel(a) => (Stage::BaolLabel, a, None),
        Command::Infer(a) => (Stage::Infer, a, None),
        Command::Eval(a) => (Stage::Eval, a, None),
        Command::Synth(a) => (Stage::Synth, a, None),
        Command::LossesCheck(a) => (Stage::LossesCheck, a, None),
        Command::Experiment { args, trials } => (Stage::Experiment, args, trials),
    };
    let opts = RunOptions {
        scene: args.scene,
        backend: args.backend.map(|b| match b {
            Backend::Mock => LlmBackend::Mock,
            Backend::Http => LlmBackend::Http,
        }),
        trials,
    };
    let result = load_config(&args.config).and_then(|cfg| run_stage(stage, &cfg, &opts));
    match result {
        Ok(out) => {
            if let Some(t) = &out.table {
                eprint!("{t}");
            }
            println!("{}", out.summary);
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
