use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathchat_service::commands::{self, CliError, EvalBackend};

#[derive(Debug, Parser)]
#[command(
    name = "pathchat",
    version,
    about = "Learning-path explanation chatbot"
)]
struct Cli {
    /// TOML configuration file. Defaults to $PATHCHAT_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP/WebSocket chat service.
    Serve,
    /// Load and validate a knowledge graph and learning path.
    ValidateGraph {
        /// Graph document; overrides the configured one.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Learning path document; overrides the configured one.
        #[arg(long)]
        learning_path: Option<PathBuf>,
    },
    /// Evaluate an intent classifier on a labeled dataset.
    EvalIntents {
        /// Tab-separated `utterance<TAB>category` file; the bundled fixture if omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalBackend::Baseline)]
        backend: EvalBackend,
        /// Also write report.txt, report.json and confusion.svg here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the prompt that would be sent for a question.
    BuildContext {
        /// Intent category id, 1 to 7.
        #[arg(long)]
        intent: u8,
        #[arg(long)]
        utterance: String,
        /// Node id or exact title.
        #[arg(long)]
        focus: Option<String>,
        /// Character budget; the configured one if omitted.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Replay a scripted dialogue offline and compare the bot's actions.
    Simulate {
        #[arg(long)]
        script: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = commands::load_config(cli.config)?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Serve => {
            drop(out);
            let runtime = tokio::runtime::Runtime::new().map_err(CliError::runtime)?;
            runtime.block_on(commands::serve(&config))
        }
        Command::ValidateGraph {
            graph,
            learning_path,
        } => {
            config.graph = graph.or(config.graph);
            config.learning_path = learning_path.or(config.learning_path);
            commands::validate_graph(&config, &mut out)
        }
        Command::EvalIntents {
            dataset,
            backend,
            out_dir,
        } => commands::eval_intents(
            &config,
            dataset.as_deref(),
            backend,
            out_dir.as_deref(),
            &mut out,
        ),
        Command::BuildContext {
            intent,
            utterance,
            focus,
            budget,
        } => commands::build_context(
            &config,
            intent,
            &utterance,
            focus.as_deref(),
            budget,
            &mut out,
        ),
        Command::Simulate { script } => commands::simulate_script(&config, &script, &mut out),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("PATHCHAT_LOG")
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code as u8)
        }
    }
}
