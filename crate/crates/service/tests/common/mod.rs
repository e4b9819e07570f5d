//! Service fixtures and the end-to-end checks shared by the integration
//! tests and the acceptance report.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use pathchat_core::bot::ExplainerBot;
use pathchat_core::config::{ParticipantConfig, Role};
use pathchat_core::dialogue::{ActionKind, Phase};
use pathchat_core::llm::{LlmGateway, MockLlm};
use pathchat_service::model::{ChatMessage, RequestStatus, SessionKind};
use pathchat_service::protocol::ServerDoc;
use pathchat_service::service::{ChatService, ServiceSettings, SystemClock};

pub const TURN_LATENCY_BOUND: Duration = Duration::from_secs(1);
pub const HISTORY_WINDOW: usize = 10;

pub fn participants() -> Vec<ParticipantConfig> {
    let p = |id: &str, role| ParticipantConfig {
        id: id.into(),
        role,
        available: true,
    };
    vec![
        p("amy", Role::Student),
        p("ben", Role::Student),
        p("mia", Role::Mentor),
        p("max", Role::Mentor),
    ]
}

pub struct Harness {
    pub mock: Arc<MockLlm>,
    pub service: Arc<ChatService>,
}

impl Harness {
    pub fn open(dir: &Path) -> Self {
        let mock = Arc::new(MockLlm::new());
        let bot = Arc::new(ExplainerBot::sample(Arc::new(LlmGateway::new(
            mock.clone(),
        ))));
        let service = ChatService::open(
            bot,
            ServiceSettings::default(),
            &participants(),
            dir,
            Arc::new(SystemClock),
        )
        .unwrap();
        Self { mock, service }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Step {
    /// The student writes in the solo session.
    Say(&'static str),
    /// The first mentor accepts the session's pending request.
    Accept,
    /// A message in the group session.
    GroupSay(&'static str, &'static str),
}

pub struct Scenario {
    pub name: &'static str,
    pub steps: Vec<(Step, Vec<ActionKind>)>,
}

fn run_task() -> Vec<ActionKind> {
    vec![ActionKind::RunTask, ActionKind::BotReply]
}

/// One scenario per intent category, then a mentor-escalation group chat.
pub fn scenarios() -> Vec<Scenario> {
    use ActionKind::*;
    vec![
        Scenario {
            name: "reason",
            steps: vec![(Step::Say("Why did you recommend this path?"), run_task())],
        },
        Scenario {
            name: "page content",
            steps: vec![
                (
                    Step::Say("What is shown on this page?"),
                    vec![AskConfirmation],
                ),
                (Step::Say("yes"), run_task()),
            ],
        },
        Scenario {
            name: "benefit",
            steps: vec![
                (
                    Step::Say("How will learning pandas groupby help me?"),
                    vec![AskConfirmation],
                ),
                (Step::Say("no"), vec![AskRephrase]),
                (
                    Step::Say("What will I gain from pandas groupby?"),
                    run_task(),
                ),
            ],
        },
        Scenario {
            name: "relations",
            steps: vec![(
                Step::Say("How is pandas groupby related to other materials?"),
                run_task(),
            )],
        },
        Scenario {
            name: "additional info",
            steps: vec![(Step::Say("Tell me more about pandas groupby"), run_task())],
        },
        Scenario {
            name: "student context",
            steps: vec![
                (
                    Step::Say("How does this path relate to my daily work as a nurse?"),
                    vec![AskConfirmation],
                ),
                (Step::Say("yes"), run_task()),
            ],
        },
        Scenario {
            name: "other",
            steps: vec![
                (Step::Say("Who won the football game?"), vec![AskRephrase]),
                (Step::Say("what's the weather like"), vec![AskRephrase]),
                (Step::Say("Who won the football game?"), vec![SuggestMentor]),
                (Step::Say("yes"), vec![CreateMentorRequest]),
            ],
        },
        Scenario {
            name: "group chat",
            steps: vec![
                (
                    Step::Say("@mentor I need help with my path"),
                    vec![CreateMentorRequest],
                ),
                (Step::Accept, vec![BotReply]),
                (Step::GroupSay("mia", "Hi Amy, what is unclear?"), vec![]),
                (
                    Step::GroupSay("amy", "@bot why did you recommend this path?"),
                    run_task(),
                ),
            ],
        },
    ]
}

#[derive(Debug)]
pub struct ScenarioReport {
    pub actual: Vec<Vec<ActionKind>>,
    pub max_turn: Duration,
}

fn drain_last_action(
    rx: &mut tokio::sync::broadcast::Receiver<ServerDoc>,
    session: &str,
) -> Vec<ActionKind> {
    let mut out = Vec::new();
    while let Ok(doc) = rx.try_recv() {
        if let ServerDoc::StateChanged {
            session_id,
            last_action: Some(a),
            ..
        } = doc
        {
            if session_id == session {
                out = vec![a];
            }
        }
    }
    out
}

fn check_replies(step: &Step, kinds: &[ActionKind], bots: &[ChatMessage]) -> Result<(), String> {
    let replying = kinds
        .iter()
        .filter(|k| !matches!(k, ActionKind::RunTask | ActionKind::NoOp))
        .count();
    if bots.len() != replying {
        return Err(format!(
            "{step:?}: {} bot messages for {kinds:?}",
            bots.len()
        ));
    }
    if kinds.contains(&ActionKind::RunTask)
        && !bots.last().is_some_and(|m| m.text.starts_with("[mock:"))
    {
        return Err(format!("{step:?}: task answer missing"));
    }
    Ok(())
}

/// Plays a scenario for student `amy` on a fresh service.
pub async fn run_scenario(h: &Harness, scenario: &Scenario) -> Result<ScenarioReport, String> {
    let svc = &h.service;
    let solo = svc
        .create_session("amy")
        .await
        .map_err(|e| e.to_string())?
        .session_id;
    let mut feed = svc.subscribe("amy");
    let mut group: Option<String> = None;
    let mut report = ScenarioReport {
        actual: Vec::new(),
        max_turn: Duration::ZERO,
    };
    for (step, expected) in &scenario.steps {
        let start = Instant::now();
        let kinds = match *step {
            Step::Say(text) => {
                let out = svc
                    .post_message(&solo, "amy", text, &[], None)
                    .await
                    .map_err(|e| format!("{step:?}: {e}"))?;
                check_replies(step, &out.actions, &out.bot_messages)?;
                out.actions
            }
            Step::Accept => {
                let request = svc
                    .requests()
                    .into_iter()
                    .find(|r| r.session_id == solo && r.status == RequestStatus::Pending)
                    .ok_or("no pending request")?;
                drain_last_action(&mut feed, &solo);
                let session = svc
                    .accept_request(&request.request_id, "mia")
                    .await
                    .map_err(|e| e.to_string())?;
                if session.kind != SessionKind::Group {
                    return Err("accepting did not open a group session".into());
                }
                group = Some(session.session_id);
                drain_last_action(&mut feed, &solo)
            }
            Step::GroupSay(sender, text) => {
                let g = group.as_deref().ok_or("no group session yet")?;
                let out = svc
                    .post_message(g, sender, text, &[], None)
                    .await
                    .map_err(|e| format!("{step:?}: {e}"))?;
                check_replies(step, &out.actions, &out.bot_messages)?;
                out.actions
            }
        };
        report.max_turn = report.max_turn.max(start.elapsed());
        if &kinds != expected {
            return Err(format!(
                "{}: {step:?} gave {kinds:?}, expected {expected:?}",
                scenario.name
            ));
        }
        report.actual.push(kinds);
    }
    if report.max_turn >= TURN_LATENCY_BOUND {
        return Err(format!(
            "{}: slowest turn took {:?}",
            scenario.name, report.max_turn
        ));
    }
    let phase = svc
        .session(&solo)
        .await
        .map_err(|e| e.to_string())?
        .dialogue_state
        .phase;
    let expected_phase = match scenario.name {
        "group chat" => Phase::GroupActive,
        "other" => Phase::MentorRequested,
        _ => Phase::Idle,
    };
    if phase != expected_phase {
        return Err(format!("{}: ended in {phase}", scenario.name));
    }
    Ok(report)
}

/// Opens a group session between amy and mia.
pub async fn open_group(svc: &ChatService) -> String {
    let solo = svc.create_session("amy").await.unwrap();
    let req = svc.request_mentor(&solo.session_id, "amy").await.unwrap();
    svc.accept_request(&req.request.request_id, "mia")
        .await
        .unwrap()
        .session_id
}

fn history_lines(prompt: &str) -> Option<Vec<String>> {
    let start = prompt.find("Recent conversation:\n")? + "Recent conversation:\n".len();
    Some(
        prompt[start..]
            .lines()
            .take_while(|l| !l.starts_with('[') && !l.starts_with("# "))
            .map(str::to_string)
            .collect(),
    )
}

/// Posts `prior` numbered messages, then an @-mention, and returns the
/// history lines the model saw next to the last `HISTORY_WINDOW` messages.
pub async fn mention_history(
    h: &Harness,
    prior: usize,
) -> Result<(Vec<String>, Vec<String>), String> {
    let svc = &h.service;
    let group = open_group(svc).await;
    for i in 1..=prior {
        let sender = if i % 2 == 0 { "mia" } else { "amy" };
        svc.post_message(&group, sender, &format!("note number {i:02}"), &[], None)
            .await
            .map_err(|e| e.to_string())?;
    }
    let before = svc
        .history(&group, "amy", None)
        .await
        .map_err(|e| e.to_string())?;
    let expected: Vec<String> = before[before.len().saturating_sub(HISTORY_WINDOW)..]
        .iter()
        .map(|m| format!("{}: {}", m.sender, m.text))
        .collect();
    svc.post_message(
        &group,
        "amy",
        "@bot why did you recommend this path?",
        &[],
        None,
    )
    .await
    .map_err(|e| e.to_string())?;
    let prompt = h.mock.last_prompt().ok_or("model was not called")?;
    let seen = history_lines(&prompt).ok_or("prompt has no chat history")?;
    Ok((seen, expected))
}

/// Two mentors accept the same request at once, `rounds` times over.
pub async fn accept_race(dir: &Path, rounds: usize) -> Result<(), String> {
    let h = Harness::open(dir);
    for round in 0..rounds {
        let svc = &h.service;
        let solo = svc.create_session("amy").await.map_err(|e| e.to_string())?;
        let req = svc
            .request_mentor(&solo.session_id, "amy")
            .await
            .map_err(|e| e.to_string())?
            .request
            .request_id;
        let before = svc.session_count();
        let (a, b) = {
            let (s1, s2) = (svc.clone(), svc.clone());
            let (r1, r2) = (req.clone(), req.clone());
            tokio::join!(
                tokio::spawn(async move { s1.accept_request(&r1, "mia").await }),
                tokio::spawn(async move { s2.accept_request(&r2, "max").await })
            )
        };
        let (a, b) = (a.map_err(|e| e.to_string())?, b.map_err(|e| e.to_string())?);
        let winners = [a.is_ok(), b.is_ok()].iter().filter(|x| **x).count();
        if winners != 1 {
            return Err(format!("round {round}: {winners} mentors won"));
        }
        if svc.session_count() != before + 1 {
            return Err(format!(
                "round {round}: {} new sessions",
                svc.session_count() - before
            ));
        }
        let request = svc.request(&req).map_err(|e| e.to_string())?;
        let winner = if a.is_ok() { "mia" } else { "max" };
        if request.status != RequestStatus::Accepted
            || request.accepted_by.as_deref() != Some(winner)
        {
            return Err(format!("round {round}: request ended as {request:?}"));
        }
    }
    Ok(())
}

/// Every message of every session, in order, as seen by its members.
pub async fn all_messages(svc: &ChatService, sessions: &[String]) -> Vec<ChatMessage> {
    let mut out = Vec::new();
    for s in sessions {
        let member = svc.session(s).await.unwrap().student().unwrap().to_string();
        out.extend(svc.history(s, &member, None).await.unwrap());
    }
    out
}

/// Chats, drops the service without shutdown, reopens the same directory
/// and compares what was acknowledged with what was replayed.
pub async fn restart_keeps_acked(dir: &Path) -> Result<usize, String> {
    let (acked, sessions) = {
        let h = Harness::open(dir);
        let svc = &h.service;
        let solo = svc
            .create_session("amy")
            .await
            .map_err(|e| e.to_string())?
            .session_id;
        let mut acked = Vec::new();
        for text in [
            "Why did you recommend this path?",
            "What is shown on this page?",
            "yes",
        ] {
            let out = svc
                .post_message(&solo, "amy", text, &[], None)
                .await
                .map_err(|e| e.to_string())?;
            acked.push(out.message);
            acked.extend(out.bot_messages);
        }
        let group = open_group(svc).await;
        let out = svc
            .post_message(&group, "mia", "hello from the mentor", &[], None)
            .await
            .map_err(|e| e.to_string())?;
        acked.push(out.message);
        (acked, svc.sessions_of("amy").await)
    };
    let h = Harness::open(dir);
    let replayed = all_messages(&h.service, &sessions).await;
    for m in &acked {
        if !replayed.contains(m) {
            return Err(format!("lost message {} in {}", m.message_id, m.session_id));
        }
    }
    Ok(acked.len())
}

pub struct ServerProcess {
    child: std::process::Child,
    pub base: String,
}

impl ServerProcess {
    /// Starts `pathchat serve` on an ephemeral port with state under `dir`.
    pub fn start(bin: &Path, dir: &Path) -> Result<Self, String> {
        use std::io::BufRead;
        let config = dir.join("pathchat.toml");
        std::fs::write(
            &config,
            "address = \"127.0.0.1:0\"\ndata_dir = \"data\"\n\
             [[participants]]\nid = \"amy\"\nrole = \"student\"\n\
             [[participants]]\nid = \"mia\"\nrole = \"mentor\"\n",
        )
        .map_err(|e| e.to_string())?;
        let mut child = std::process::Command::new(bin)
            .arg("--config")
            .arg(&config)
            .arg("serve")
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .spawn()
            .map_err(|e| format!("spawning {}: {e}", bin.display()))?;
        let mut line = String::new();
        std::io::BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .map_err(|e| e.to_string())?;
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .ok_or(format!("unexpected banner {line:?}"))?
            .to_string();
        Ok(Self { child, base })
    }

    /// SIGKILL: no shutdown hooks run.
    pub fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

async fn call(req: reqwest::RequestBuilder, who: &str) -> Result<serde_json::Value, String> {
    let resp = req
        .bearer_auth(who)
        .send()
        .await
        .map_err(|e| e.to_string())?;
    let status = resp.status();
    let body: serde_json::Value = resp.json().await.map_err(|e| e.to_string())?;
    if !status.is_success() {
        return Err(format!("{status}: {body}"));
    }
    Ok(body)
}

/// Chats over HTTP with a server process, kills it mid-conversation, restarts
/// it and checks that every acknowledged message is replayed unchanged.
/// Returns the number of acknowledged messages.
pub async fn kill_and_restart(bin: &Path, dir: &Path) -> Result<usize, String> {
    let client = reqwest::Client::new();
    let server = ServerProcess::start(bin, dir)?;
    let base = server.base.clone();
    let session = call(client.post(format!("{base}/sessions")), "amy").await?;
    let sid = session["session_id"]
        .as_str()
        .ok_or("no session id")?
        .to_string();
    let mut acked = Vec::new();
    for text in [
        "Why did you recommend this path?",
        "What is shown on this page?",
        "yes",
        "Tell me more about pandas groupby",
    ] {
        let out = call(
            client
                .post(format!("{base}/sessions/{sid}/messages"))
                .json(&serde_json::json!({ "text": text })),
            "amy",
        )
        .await?;
        acked.push(out["message"].clone());
        acked.extend(out["bot_messages"].as_array().cloned().unwrap_or_default());
    }
    server.kill();

    let server = ServerProcess::start(bin, dir)?;
    let history = call(
        client.get(format!("{}/sessions/{sid}/history", server.base)),
        "amy",
    )
    .await?;
    let history = history.as_array().ok_or("history is not a list")?.clone();
    if history != acked {
        return Err(format!(
            "replayed {} messages, acknowledged {}",
            history.len(),
            acked.len()
        ));
    }
    let state = call(client.get(format!("{}/sessions/{sid}", server.base)), "amy").await?;
    if state["dialogue_state"]["phase"] != "Idle" {
        return Err(format!(
            "replayed phase {}",
            state["dialogue_state"]["phase"]
        ));
    }
    Ok(acked.len())
}
