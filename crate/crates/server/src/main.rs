use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use apprentice_core::orchestrator::EventEnvelope;
use apprentice_core::segmentation::SegmentLabel;
use apprentice_core::service::TutorService;
use apprentice_core::store::{FileStore, Store};
use apprentice_server::commands::{self, read_json, Inputs, KnowledgeFile, LabelFile, SegmentsFile};
use apprentice_server::http::{router, AppState};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "apprentice",
    version,
    about = "Tutoring pipeline and service for programming videos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Backend {
    /// Replay model replies from this mock script instead of calling a live model.
    #[arg(long, value_name = "SCRIPT")]
    mock: Option<PathBuf>,
    /// Live backend settings (base URL, models, retry), JSON.
    #[arg(long, value_name = "FILE")]
    live_config: Option<PathBuf>,
    /// Refuse to fetch remote transcript or code sources.
    #[arg(long)]
    offline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Split a transcript into learning-goal segments.
    Segment {
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every intermediate artifact of the run here.
        #[arg(long, value_name = "FILE")]
        run: Option<PathBuf>,
    },
    /// Summarize knowledge for each segment.
    Extract {
        #[arg(long)]
        segments: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose mentor moves for every knowledge item.
    Plan {
        #[arg(long)]
        knowledge: PathBuf,
        /// Stored student model; a missing file means a new student.
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn plans into the action document.
    CompileDsl {
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        knowledge: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive a whole session from an event script.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        student: Option<PathBuf>,
        /// Write the updated student model back to `--student`.
        #[arg(long, requires = "student")]
        save_student: bool,
        #[command(flatten)]
        backend: Backend,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score segments or intent labels.
    #[command(subcommand)]
    Eval(Eval),
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        data: PathBuf,
        /// Directory relative config sources resolve against.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Require `Authorization: Bearer <token>` on session routes.
        #[arg(long, env = "APPRENTICE_TOKEN")]
        token: Option<String>,
        #[command(flatten)]
        backend: Backend,
    },
}

#[derive(Subcommand)]
enum Eval {
    Segmentation {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value_t = apprentice_core::eval::DEFAULT_MARGIN_S)]
        margin: f64,
    },
    Intents {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Row label in the table.
        #[arg(long, default_value = "corpus")]
        name: String,
        #[arg(long)]
        json: bool,
    },
}

fn emit(text: String, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    emit(serde_json::to_string_pretty(value)?, out)
}

impl Backend {
    fn gateway(&self) -> Result<Arc<dyn apprentice_core::gateway::LlmGateway>> {
        commands::gateway(self.mock.as_deref(), self.live_config.as_deref())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment {
            transcript,
            config,
            backend,
            out,
            run,
        } => {
            let inputs = Inputs::load(&config, backend.offline)?;
            let sentences = match transcript {
                Some(path) => apprentice_core::ingestion::parse_transcript(&std::fs::read_to_string(&path)?)?,
                None => inputs.transcript_and_code()?.0,
            };
            let result = commands::segment(&inputs, &sentences, backend.gateway()?.as_ref())?;
            for warning in &result.warnings {
                eprintln!("warning: {warning}");
            }
            if let Some(path) = run {
                emit_json(&result, Some(&path))?;
            }
            emit_json(&result.labels(), out.as_deref())
        }
        Command::Extract {
            segments,
            config,
            backend,
            out,
        } => {
            let inputs = Inputs::load(&config, backend.offline)?;
            let (transcript, code) = inputs.transcript_and_code()?;
            let segments = read_json::<SegmentsFile>(&segments)?.into_segments(&transcript)?;
            let (knowledge, rejections) =
                commands::extract(&inputs, &transcript, &code, segments, backend.gateway()?.as_ref())?;
            for r in &rejections {
                eprintln!("rejected: {} ({})", r.text, r.reason);
            }
            emit_json(&knowledge, out.as_deref())
        }
        Command::Plan {
            knowledge,
            student,
            config,
            backend,
            out,
        } => {
            let inputs = Inputs::load(&config, backend.offline)?;
            let knowledge: KnowledgeFile = read_json(&knowledge)?;
            let model = commands::load_student(student.as_deref(), &inputs.config)?;
            emit_json(
                &commands::plan(&inputs.config, &knowledge, &model, backend.gateway()?.as_ref()),
                out.as_deref(),
            )
        }
        Command::CompileDsl {
            plans,
            knowledge,
            config,
            out,
        } => {
            let config = apprentice_core::ingestion::load_config(&config)?;
            let doc = commands::compile_dsl(&config, &read_json::<Vec<_>>(&plans)?, &read_json(&knowledge)?)?;
            emit(doc.to_canonical(), out.as_deref())
        }
        Command::Replay {
            config,
            events,
            student,
            save_student,
            backend,
            out,
        } => {
            let inputs = Inputs::load(&config, backend.offline)?;
            let events: Vec<EventEnvelope> = read_json(&events)?;
            let model = commands::load_student(student.as_deref(), &inputs.config)?;
            let result = commands::replay_session(&inputs, &events, model, backend.gateway()?.as_ref())?;
            eprintln!(
                "final phase {:?}, {} messages, {} observations",
                result.report.final_phase,
                result.report.messages().count(),
                result.report.observations.len()
            );
            if let (true, Some(path)) = (save_student, &student) {
                emit_json(&result.model, Some(path))?;
            }
            emit_json(&result, out.as_deref())
        }
        Command::Eval(Eval::Segmentation { pred, gold, margin }) => {
            let pred: Vec<SegmentLabel> = read_json(&pred)?;
            let gold: Vec<SegmentLabel> = read_json(&gold)?;
            emit_json(&commands::eval_segmentation(&pred, &gold, margin), None)
        }
        Command::Eval(Eval::Intents { pred, gold, name, json }) => {
            let table = commands::eval_intents(&name, read_json::<LabelFile>(&pred)?, read_json::<LabelFile>(&gold)?)?;
            if json {
                emit_json(&table, None)
            } else {
                emit(table.render(true), None)
            }
        }
        Command::Serve {
            port,
            data,
            inputs,
            token,
            backend,
        } => serve(port, data, inputs, token, backend),
    }
}

fn serve(port: u16, data: PathBuf, inputs: Option<PathBuf>, token: Option<String>, backend: Backend) -> Result<()> {
    let store: Arc<dyn Store> = Arc::new(FileStore::open(&data)?);
    let service = TutorService::new(store, backend.gateway()?)?.with_inputs(
        inputs,
        apprentice_core::ingestion::FetchPolicy {
            offline: backend.offline,
        },
    );
    let app = router(AppState {
        service: Arc::new(service),
        token,
    });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
