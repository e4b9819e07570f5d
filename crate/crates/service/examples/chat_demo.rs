//! An in-process chat against the bundled course graph and the offline model:
//! a student asks questions, escalates to a mentor, and the mentor group
//! mentions the bot. State is kept in a temporary directory.

use std::sync::Arc;

use pathchat_core::bot::ExplainerBot;
use pathchat_core::config::{ParticipantConfig, Role};
use pathchat_core::llm::{LlmGateway, MockLlm};
use pathchat_service::service::{ChatService, ServiceSettings, SystemClock};
use pathchat_service::ChatMessage;

fn show(messages: &[ChatMessage]) {
    for m in messages {
        println!(
            "[{}#{}] {}: {}",
            m.session_id, m.message_id, m.sender, m.text
        );
    }
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let participants = [
        ParticipantConfig {
            id: "amy".into(),
            role: Role::Student,
            available: true,
        },
        ParticipantConfig {
            id: "mia".into(),
            role: Role::Mentor,
            available: true,
        },
    ];
    let bot = Arc::new(ExplainerBot::sample(Arc::new(LlmGateway::new(
        MockLlm::new(),
    ))));
    let svc = ChatService::open(
        bot,
        ServiceSettings::default(),
        &participants,
        dir.path(),
        Arc::new(SystemClock),
    )?;

    let solo = svc.create_session("amy").await?.session_id;
    for text in [
        "Why did you recommend this path?",
        "What is shown on this page?",
        "yes",
        "@mentor can someone help?",
    ] {
        let out = svc.post_message(&solo, "amy", text, &[], None).await?;
        show(std::slice::from_ref(&out.message));
        show(&out.bot_messages);
        println!("    actions: {:?}", out.actions);
    }

    let request = svc
        .requests()
        .into_iter()
        .next()
        .ok_or("no mentor request")?;
    let group = svc
        .accept_request(&request.request_id, "mia")
        .await?
        .session_id;
    println!(
        "\nmia accepted {}; group session {group}",
        request.request_id
    );
    svc.post_message(&group, "mia", "Hi Amy, which part is unclear?", &[], None)
        .await?;
    svc.post_message(
        &group,
        "amy",
        "@bot how is data visualization related to other materials?",
        &[],
        None,
    )
    .await?;
    show(&svc.history(&group, "mia", None).await?);
    Ok(())
}
