//! Operator commands behind the `pathchat` binary. Each returns an exit code
//! class through [`CliError`]; output goes to the given writer.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use pathchat_core::bot::ExplainerBot;
use pathchat_core::config::Config;
use pathchat_core::context::{ContextError, ContextInput};
use pathchat_core::eval::{confusion_svg, evaluate, EvaluationDocument, LabeledDataset};
use pathchat_core::intent::{
    GoldEchoBackend, IntentBackend, IntentCategory, LexiconClassifier, LlmClassifier,
};
use pathchat_core::llm::{LlmGateway, MockLlm};
use pathchat_core::simulate::{simulate, ScriptedDialogue};

use crate::service::{ChatService, ServiceSettings, SystemClock};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl std::fmt::Display) -> Self {
        Self {
            exit_code: EXIT_VALIDATION,
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl std::fmt::Display) -> Self {
        Self {
            exit_code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::runtime(format!("writing output: {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalBackend {
    /// Lexicon phrase matching.
    Baseline,
    /// Language-model classifier over the configured gateway, lexicon fallback.
    Llm,
    /// Echoes the dataset's own labels.
    EchoGold,
    /// Language-model classifier over the offline mock.
    Mock,
}

/// Loads and validates a knowledge graph and optionally a learning path.
pub fn validate_graph(config: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = config.load_graph().map_err(CliError::validation)?;
    let path = config.load_learning_path().map_err(CliError::validation)?;
    path.validate(&graph).map_err(CliError::validation)?;
    let similarity = graph
        .edges()
        .iter()
        .filter(|e| e.kind == pathchat_core::kg::EdgeKind::SimilarTo)
        .count();
    writeln!(
        out,
        "ok: {} nodes, {} edges ({} similarity), learning path of {} items",
        graph.len(),
        graph.edges().len(),
        similarity,
        path.node_ids.len()
    )
    .map_err(out_err)
}

pub fn eval_intents(
    config: &Config,
    dataset: Option<&Path>,
    backend: EvalBackend,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let ds = match dataset {
        Some(p) => LabeledDataset::from_path(p).map_err(CliError::validation)?,
        None => LabeledDataset::bundled(),
    };
    let baseline = || -> Result<LexiconClassifier, CliError> {
        Ok(
            LexiconClassifier::new(config.load_lexicon().map_err(CliError::validation)?)
                .with_floor(config.other_floor),
        )
    };
    let classifier: Box<dyn IntentBackend> = match backend {
        EvalBackend::Baseline => Box::new(baseline()?),
        EvalBackend::EchoGold => Box::new(GoldEchoBackend::new(
            ds.items().iter().map(|(u, c)| (u.as_str(), *c)),
        )),
        EvalBackend::Mock => Box::new(LlmClassifier::new(
            Arc::new(LlmGateway::new(MockLlm::new())),
            baseline()?,
        )),
        EvalBackend::Llm => {
            let bot = ExplainerBot::from_config(config).map_err(CliError::validation)?;
            Box::new(LlmClassifier::new(bot.gateway().clone(), baseline()?))
        }
    };
    let (matrix, report) = evaluate(&ds, classifier.as_ref());
    writeln!(out, "{}", report.to_table()).map_err(out_err)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
        let doc = EvaluationDocument::new(matrix.clone(), report.clone());
        let write = |name: &str, content: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, content)
                .map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))
        };
        write("report.txt", format!("{}\n", report.to_table()).as_bytes())?;
        write(
            "report.json",
            &serde_json::to_vec_pretty(&doc).expect("report serializes"),
        )?;
        write("confusion.svg", confusion_svg(&matrix).as_bytes())?;
        writeln!(
            out,
            "wrote report.txt, report.json, confusion.svg to {}",
            dir.display()
        )
        .map_err(out_err)?;
    }
    Ok(())
}

/// Prints the exact prompt the service would send for one question.
pub fn build_context(
    config: &Config,
    intent: u8,
    utterance: &str,
    focus: Option<&str>,
    budget: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let category = IntentCategory::from_id(intent)
        .ok_or_else(|| CliError::validation(format!("intent {intent} outside 1..=7")))?;
    if utterance.trim().is_empty() {
        return Err(CliError::validation("utterance is empty"));
    }
    let graph = config.load_graph().map_err(CliError::validation)?;
    let path = config.load_learning_path().map_err(CliError::validation)?;
    let builder = config.context_builder().map_err(CliError::validation)?;
    let focus = match focus {
        Some(f) => Some(graph.resolve(f).map_err(CliError::validation)?.id.clone()),
        None => None,
    };
    let ctx = builder
        .build(
            &graph,
            ContextInput {
                category,
                utterance,
                path: &path,
                focus: focus.as_deref(),
                history: &[],
            },
        )
        .map_err(CliError::validation)?;
    let rendered = ctx
        .render(budget.unwrap_or(config.budget_chars))
        .map_err(|e| match e {
            ContextError::BudgetTooSmall { .. } => CliError::validation(e),
            other => CliError::runtime(other),
        })?;
    writeln!(out, "{rendered}").map_err(out_err)
}

/// Replays a script offline with the mock model. Fails when the action
/// kinds differ from the script's expectations.
pub fn simulate_script(
    config: &Config,
    script: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let script = ScriptedDialogue::from_path(script).map_err(CliError::validation)?;
    let mut offline = config.clone();
    offline.llm.backend = pathchat_core::config::LlmBackendKind::Mock;
    offline.intent_backend = pathchat_core::config::IntentBackendKind::Baseline;
    let bot = ExplainerBot::from_config(&offline).map_err(CliError::validation)?;
    let report = simulate(&bot, &script);
    for line in &report.transcript {
        writeln!(out, "{line}").map_err(out_err)?;
    }
    if report.passed() {
        writeln!(out, "PASS ({} actions)", report.actual.len()).map_err(out_err)?;
        Ok(())
    } else {
        write!(out, "{}", report.diff()).map_err(out_err)?;
        for e in &report.errors {
            writeln!(out, "error: {e}").map_err(out_err)?;
        }
        Err(CliError::validation(
            "simulated actions differ from the expected ones",
        ))
    }
}

/// Opens the service described by `config`.
pub fn open_service(config: &Config) -> Result<Arc<ChatService>, CliError> {
    let bot = Arc::new(ExplainerBot::from_config(config).map_err(CliError::validation)?);
    ChatService::open(
        bot,
        ServiceSettings::from(config),
        &config.participants,
        config.data_dir.clone(),
        Arc::new(SystemClock),
    )
    .map_err(CliError::runtime)
}

/// Runs the server until ctrl-c or SIGTERM.
pub async fn serve(config: &Config) -> Result<(), CliError> {
    let service = open_service(config)?;
    let listener = tokio::net::TcpListener::bind(&config.address)
        .await
        .map_err(|e| CliError::runtime(format!("binding {}: {e}", config.address)))?;
    let addr = listener.local_addr().map_err(CliError::runtime)?;
    tracing::info!(%addr, data_dir = %config.data_dir.display(), "listening");
    println!("listening on http://{addr}");

    let sweeper = {
        let service = service.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(30));
            loop {
                tick.tick().await;
                if let Err(e) = service.sweep_expired().await {
                    tracing::warn!("expiring mentor requests: {e}");
                }
            }
        })
    };
    let app = crate::http::router(service, config.static_dir.clone());
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await;
    sweeper.abort();
    result.map_err(CliError::runtime)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

/// Config file resolution: explicit flag, else `PATHCHAT_CONFIG`, else defaults.
pub fn load_config(path: Option<PathBuf>) -> Result<Config, CliError> {
    let path = path.or_else(|| std::env::var_os("PATHCHAT_CONFIG").map(PathBuf::from));
    Config::load(path.as_deref()).map_err(CliError::validation)
}
