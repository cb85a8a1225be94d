use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use aquabot_core::eval::{Correction, CorrectionKind, InteractiveSession, Prediction, Review};
use aquabot_server::app::router;
use aquabot_server::config::ServiceConfig;
use aquabot_server::service::Service;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "aquabot", version, about = "Water-quality question answering assistant")]
struct Cli {
    /// Path to the TOML configuration.
    #[arg(long, short, default_value = "aquabot.toml", global = true)]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the NLU ranker and dialogue policy and save them.
    Train,
    /// Evaluate the saved model on the configured test stories.
    Evaluate {
        /// Write the policy confusion matrix as CSV.
        #[arg(long)]
        confusion_csv: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        /// Override the bind address from the config.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Chat with the saved model on stdin.
    Shell {
        #[arg(long, default_value = "shell")]
        conversation: String,
    },
    /// Review and correct predictions turn by turn, then export stories.
    Interactive {
        /// Where to write the augmented training stories.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = ServiceConfig::load(&cli.config)?;
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(&config.log_level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new()?;
    let service = Service::start(config)?;
    match cli.command {
        Command::Train => train(&service),
        Command::Evaluate { confusion_csv } => evaluate(&service, confusion_csv),
        Command::Serve { bind } => rt.block_on(serve(service, bind)),
        Command::Shell { conversation } => rt.block_on(shell(service, conversation)),
        Command::Interactive { out } => interactive(&service, out),
    }
}

fn train(service: &Service) -> Result<()> {
    let out = service.train_blocking(&service.config.train.clone())?;
    let m = &out.metrics;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    println!("model {}", out.version);
    println!(
        "nlu    train accuracy {:.4}  final loss {:.6}",
        m.nlu_accuracy, m.nlu_final_loss
    );
    println!(
        "policy train accuracy {:.4}  final loss {:.6}  ({} pairs)",
        m.policy_accuracy, m.policy_final_loss, m.policy_pairs
    );
    Ok(())
}

fn evaluate(service: &Service, confusion_csv: Option<PathBuf>) -> Result<()> {
    let bundle = service.require_bundle()?;
    let out = service.evaluate_blocking(&bundle)?;
    println!(
        "model {}\n\nactions\n{}\nintents\n{}",
        out.version, out.policy_table, out.nlu_table
    );
    if let Some(c) = &out.most_confused {
        println!("most confused: {} predicted as {} ({}x)", c.truth, c.predicted, c.count);
    }
    if let Some(path) = confusion_csv {
        std::fs::write(&path, out.policy.matrix.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

async fn serve(service: Arc<Service>, bind: Option<String>) -> Result<()> {
    let addr = bind.unwrap_or_else(|| service.config.bind.clone());
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    let app = router(service).into_make_service_with_connect_info::<std::net::SocketAddr>();
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn shell(service: Arc<Service>, conversation: String) -> Result<()> {
    service.require_bundle()?;
    let stdin = io::stdin();
    prompt("you> ")?;
    for line in stdin.lock().lines() {
        let line = line?;
        let text = line.trim();
        if text == "/restart" {
            service.restart(&conversation).await?;
        } else if !text.is_empty() {
            for u in service.handle_message(&conversation, text).await?.utterances {
                println!("bot> {u}");
            }
        }
        prompt("you> ")?;
    }
    Ok(())
}

fn prompt(p: &str) -> io::Result<()> {
    print!("{p}");
    io::stdout().flush()
}

fn show(p: &Prediction) {
    let intent = p.intents.first().map_or("?", |i| i.intent.as_str());
    let conf = p.intents.first().map_or(0.0, |i| i.confidence);
    println!(
        "  intent {intent} ({conf:.3}){}",
        if p.nlu_fallback { " [nlu fallback]" } else { "" }
    );
    for e in &p.entities {
        println!("  entity {}={}", e.entity_type, e.value);
    }
    println!("  next action {} ({:.3})", p.proposed_action, p.action_confidence);
    println!("  [enter] confirm | i <intent> | a <action> | rewind");
}

fn interactive(service: &Service, out: PathBuf) -> Result<()> {
    let bundle = service.require_bundle()?;
    let mut session = InteractiveSession::new("cli", bundle);
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let mut next_line = |p: &str| -> Result<Option<String>> {
        prompt(p)?;
        Ok(lines.next().transpose()?)
    };
    'turns: while let Some(text) = next_line("you> ")? {
        let text = text.trim().to_string();
        if text.is_empty() {
            continue;
        }
        if text == "/done" {
            break;
        }
        let mut pending = session.step(&text, service.config.now())?;
        loop {
            show(&pending);
            let Some(cmd) = next_line("review> ")? else {
                break 'turns;
            };
            let cmd = cmd.trim();
            let now = service.config.now();
            let review: Result<Review, _> = match cmd.split_once(' ') {
                _ if cmd.is_empty() => session.confirm(now),
                _ if cmd == "rewind" => {
                    session.rewind(now)?;
                    continue 'turns;
                }
                Some(("i", label)) => session.correct(
                    Correction {
                        kind: CorrectionKind::Intent,
                        label: label.trim().into(),
                    },
                    now,
                ),
                Some(("a", label)) => session.correct(
                    Correction {
                        kind: CorrectionKind::Action,
                        label: label.trim().into(),
                    },
                    now,
                ),
                _ => {
                    println!("  unrecognised command");
                    continue;
                }
            };
            match review {
                Ok(r) => {
                    for u in &r.utterances {
                        println!("bot> {u}");
                    }
                    match r.next {
                        Some(p) => pending = p,
                        None => break,
                    }
                }
                Err(e) => println!("  {e}"),
            }
        }
    }
    let corpus = service.corpus()?;
    let (story, log) = session.finish();
    if story.steps.is_empty() {
        bail!("nothing to export");
    }
    let text = aquabot_core::eval::export_augmented_corpus(&corpus.stories, &[story]);
    std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({} corrections)", out.display(), log.len());
    Ok(())
}
