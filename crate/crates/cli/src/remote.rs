use anyhow::{bail, Context};
use serde::Serialize;

use envaware_client::Client;
use envaware_core::api::{CreateSession, HumanAnswer, SessionMode, API_VERSION};
use envaware_core::fsio::write_atomic;
use envaware_core::irl::WeightsFile;
use envaware_core::{ActionKind, EpisodeConfig, StrategyId};
use envaware_service::{load_tasks_dir, AppState};

use crate::args::{ServeArgs, SessionArgs, SessionCommand};

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub fn serve(a: &ServeArgs) -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let tasks = load_tasks_dir(&a.tasks)?;
    if tasks.is_empty() {
        bail!("no tasks found under {}", a.tasks.display());
    }
    let state = AppState::open(tasks, &a.store)?;
    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        envaware_service::serve(listener, state).await?;
        Ok(())
    })
}

/// Parses `NQ`, `FSQ`, `LQ:<instance id>` or `DQ:<concept index>`.
pub fn parse_action(s: &str) -> anyhow::Result<ActionKind> {
    let upper = s.trim().to_ascii_uppercase();
    let (kind, arg) = match upper.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (upper.as_str(), None),
    };
    Ok(match (kind, arg) {
        ("NQ", None) => ActionKind::NoQuery,
        ("FSQ", None) => ActionKind::FeatureSubsetQuery,
        ("LQ", Some(id)) => ActionKind::LabelQuery(id.parse().with_context(|| format!("instance id '{id}'"))?),
        ("DQ", Some(c)) => ActionKind::DemoQuery(c.parse().with_context(|| format!("concept index '{c}'"))?),
        _ => bail!("unrecognized action '{s}'; expected NQ, FSQ, LQ:<instance> or DQ:<concept>"),
    })
}

fn print<T: Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn session(a: &SessionArgs) -> anyhow::Result<()> {
    let client = Client::new(&a.url);
    runtime()?.block_on(async {
        match &a.command {
            SessionCommand::Create {
                task,
                mode,
                budget,
                time,
                change_period,
                strategy,
                seed,
                weights,
                idempotency_key,
            } => {
                let mode: SessionMode = serde_json::from_value(serde_json::Value::String(mode.clone()))
                    .with_context(|| format!("unknown mode '{mode}'"))?;
                let strategy: StrategyId = strategy.parse()?;
                let weights = match weights {
                    Some(p) => {
                        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                        let file: WeightsFile = serde_json::from_str(&text)?;
                        Some(file.weight_vector()?.weights().to_vec())
                    }
                    None => None,
                };
                let req = CreateSession {
                    v: API_VERSION,
                    task: task.clone(),
                    config: EpisodeConfig::new(*budget, *time, *change_period, strategy, *seed),
                    mode,
                    weights,
                    idempotency_key: idempotency_key.clone(),
                };
                print(&client.create_session(&req).await?)
            }
            SessionCommand::Show { id } => print(&client.session(id).await?),
            SessionCommand::Candidates { id } => print(&client.candidates(id).await?),
            SessionCommand::Demonstrate { id, token, action } => {
                print(&client.demonstrate(id, *token, parse_action(action)?).await?)
            }
            SessionCommand::Teach {
                id,
                token,
                label,
                demo,
                features,
            } => {
                let answer = match (label, demo, features) {
                    (Some(c), _, _) => HumanAnswer::Label { concept: c.clone() },
                    (_, Some(i), _) => HumanAnswer::Demo { instance: *i },
                    (_, _, Some(f)) => HumanAnswer::FeatureSubset { features: f.clone() },
                    _ => bail!("one of --label, --demo or --features is required"),
                };
                print(&client.teach(id, *token, answer).await?)
            }
            SessionCommand::Observe { id, token } => print(&client.observe(id, *token).await?),
            SessionCommand::Export { id, out } => {
                let text = client.export(id).await?;
                match out {
                    Some(p) => write_atomic(p, text.as_bytes())?,
                    None => print!("{text}"),
                }
                Ok(())
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actions_parse() {
        assert_eq!(parse_action("nq").unwrap(), ActionKind::NoQuery);
        assert_eq!(parse_action("FSQ").unwrap(), ActionKind::FeatureSubsetQuery);
        assert_eq!(parse_action("LQ:42").unwrap(), ActionKind::LabelQuery(42));
        assert_eq!(parse_action("dq:1").unwrap(), ActionKind::DemoQuery(1));
        assert!(parse_action("LQ").is_err());
        assert!(parse_action("XQ:1").is_err());
    }
}
