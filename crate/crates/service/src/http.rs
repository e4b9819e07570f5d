//! HTTP and WebSocket front end.
//!
//! Requests authenticate with `Authorization: Bearer <participant id>`.
//! WebSocket clients instead send a `hello` document first.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::protocol::{ClientDoc, Reply, ServerDoc};
use crate::service::{ChatService, ServiceError};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn unauthorized() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or unknown bearer participant id",
        )
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        use ServiceError::*;
        let status = match &e {
            UnknownParticipant(_) | NoSession(_) | UnknownRequest(_) => StatusCode::NOT_FOUND,
            WrongRole { .. } | NotMember { .. } => StatusCode::FORBIDDEN,
            DuplicatePendingRequest(_)
            | AlreadyAccepted(_)
            | RequestNotPending { .. }
            | Dialogue(_) => StatusCode::CONFLICT,
            UnknownAttachment(_) | EmptyMessage | InvalidSession(_) | PeerGroupsDisabled => {
                StatusCode::BAD_REQUEST
            }
            AttachmentTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            Bot(_) | Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ServerDoc::Error {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn bearer(service: &ChatService, headers: &HeaderMap) -> Result<String, ApiError> {
    let id = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(ApiError::unauthorized)?;
    service
        .participant(id)
        .map_err(|_| ApiError::unauthorized())?;
    Ok(id.to_string())
}

/// Builds the router. `static_dir`, when given, is served for unmatched paths.
pub fn router(service: Arc<ChatService>, static_dir: Option<PathBuf>) -> Router {
    let upload_limit = service.settings().attachment_cap + 64 * 1024;
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/mentor-request", post(request_mentor))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/members", post(add_peer))
        .route("/mentor-requests/{id}/accept", post(accept_request))
        .route("/mentor-requests/{id}/cancel", post(cancel_request))
        .route("/mentors/{id}/availability", post(set_availability))
        .route(
            "/attachments",
            post(upload).layer(DefaultBodyLimit::max(upload_limit)),
        )
        .route("/ws", get(ws_upgrade))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

async fn healthz() -> &'static str {
    "ok"
}

async fn create_session(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
) -> ApiResult<crate::model::ChatSession> {
    let me = bearer(&svc, &headers)?;
    Ok(Json(svc.create_session(&me).await?))
}

async fn get_session(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<crate::model::ChatSession> {
    let me = bearer(&svc, &headers)?;
    let session = svc.session(&id).await?;
    if !session.is_member(&me) {
        return Err(ServiceError::NotMember {
            participant: me,
            session: id,
        }
        .into());
    }
    Ok(Json(session))
}

async fn request_mentor(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<crate::service::RequestOutcome> {
    let me = bearer(&svc, &headers)?;
    Ok(Json(svc.request_mentor(&id, &me).await?))
}

async fn accept_request(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<crate::model::ChatSession> {
    let me = bearer(&svc, &headers)?;
    Ok(Json(svc.accept_request(&id, &me).await?))
}

async fn cancel_request(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<crate::model::MentorRequest> {
    let me = bearer(&svc, &headers)?;
    Ok(Json(svc.cancel_request(&id, &me).await?))
}

#[derive(Debug, Deserialize)]
struct PostBody {
    #[serde(default)]
    text: String,
    #[serde(default)]
    attachments: Vec<String>,
    #[serde(default)]
    reply: Option<Reply>,
}

async fn post_message(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<PostBody>,
) -> ApiResult<crate::service::PostOutcome> {
    let me = bearer(&svc, &headers)?;
    Ok(Json(
        svc.post_message(&id, &me, &body.text, &body.attachments, body.reply)
            .await?,
    ))
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    limit: Option<usize>,
}

async fn history(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<HistoryQuery>,
) -> ApiResult<Vec<crate::model::ChatMessage>> {
    let me = bearer(&svc, &headers)?;
    Ok(Json(svc.history(&id, &me, q.limit).await?))
}

#[derive(Debug, Deserialize)]
struct PeerBody {
    student: String,
}

async fn add_peer(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<PeerBody>,
) -> ApiResult<crate::model::ChatSession> {
    let me = bearer(&svc, &headers)?;
    Ok(Json(svc.add_peer(&id, &me, &body.student).await?))
}

#[derive(Debug, Deserialize)]
struct AvailabilityBody {
    available: bool,
}

async fn set_availability(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Json(body): Json<AvailabilityBody>,
) -> ApiResult<crate::model::Participant> {
    let me = bearer(&svc, &headers)?;
    if me != id {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            "mentors can only change their own availability",
        ));
    }
    Ok(Json(svc.set_availability(&id, body.available)?))
}

/// Multipart upload; the first part named `file` is stored.
async fn upload(
    State(svc): State<Arc<ChatService>>,
    headers: HeaderMap,
    mut multipart: Multipart,
) -> ApiResult<crate::model::AttachmentRef> {
    bearer(&svc, &headers)?;
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "bad_upload", m);
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| bad(e.to_string()))?
    {
        if field.name() != Some("file") {
            continue;
        }
        let filename = field.file_name().unwrap_or("upload").to_string();
        let media_type = field
            .content_type()
            .unwrap_or("application/octet-stream")
            .to_string();
        let bytes = field.bytes().await.map_err(|e| {
            ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "attachment_too_large",
                e.to_string(),
            )
        })?;
        let cap = svc.settings().attachment_cap;
        if bytes.len() > cap {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "attachment_too_large",
                format!("{} bytes exceeds the {cap}-byte cap", bytes.len()),
            ));
        }
        let stored = svc
            .store()
            .put_attachment(&bytes, &media_type, &filename)
            .map_err(ServiceError::from)?;
        return Ok(Json(stored));
    }
    Err(bad("no part named \"file\"".into()))
}

async fn ws_upgrade(State(svc): State<Arc<ChatService>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| websocket(svc, socket))
}

fn encode(doc: &ServerDoc) -> Message {
    Message::Text(
        serde_json::to_string(doc)
            .expect("server documents serialize")
            .into(),
    )
}

fn error_doc(code: &str, message: impl Into<String>) -> ServerDoc {
    ServerDoc::Error {
        code: code.into(),
        message: message.into(),
    }
}

async fn websocket(svc: Arc<ChatService>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();

    // Handshake: the first text frame must be a hello naming a known participant.
    let me = loop {
        match stream.next().await {
            Some(Ok(Message::Text(t))) => match serde_json::from_str::<ClientDoc>(&t) {
                Ok(ClientDoc::Hello { participant_id }) => match svc.participant(&participant_id) {
                    Ok(p) => break p,
                    Err(e) => {
                        let _ = sink.send(encode(&e.into_doc())).await;
                        return;
                    }
                },
                _ => {
                    let _ = sink
                        .send(encode(&error_doc(
                            "hello_required",
                            "send a hello document first",
                        )))
                        .await;
                }
            },
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
            Some(Ok(_)) => {}
        }
    };

    let mut feed = svc.subscribe(&me.id);
    let hello = ServerDoc::Hello {
        participant_id: me.id.clone(),
        role: me.role,
        sessions: svc.sessions_of(&me.id).await,
    };
    if sink.send(encode(&hello)).await.is_err() {
        return;
    }

    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel::<ServerDoc>();
    let writer = tokio::spawn(async move {
        loop {
            let doc = tokio::select! {
                d = feed.recv() => match d {
                    Ok(d) => d,
                    Err(RecvError::Lagged(n)) => error_doc("lagged", format!("{n} documents dropped; resync via history")),
                    Err(RecvError::Closed) => break,
                },
                d = rx.recv() => match d {
                    Some(d) => d,
                    None => break,
                },
            };
            if sink.send(encode(&doc)).await.is_err() {
                break;
            }
        }
    });

    while let Some(frame) = stream.next().await {
        let text = match frame {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        let doc = match serde_json::from_str::<ClientDoc>(&text) {
            Ok(d) => d,
            Err(e) => {
                let _ = tx.send(error_doc("bad_document", e.to_string()));
                continue;
            }
        };
        // Successful results reach the client through its feed.
        let result = match doc {
            ClientDoc::Hello { .. } => {
                Err(error_doc("already_greeted", "hello was already received"))
            }
            ClientDoc::Post {
                session_id,
                text,
                attachments,
                reply,
            } => svc
                .post_message(&session_id, &me.id, &text, &attachments, reply)
                .await
                .map(|_| ())
                .map_err(|e| e.into_doc()),
            ClientDoc::MentorRequest { session_id } => svc
                .request_mentor(&session_id, &me.id)
                .await
                .map(|_| ())
                .map_err(|e| e.into_doc()),
            ClientDoc::MentorAccept { request_id } => svc
                .accept_request(&request_id, &me.id)
                .await
                .map(|_| ())
                .map_err(|e| e.into_doc()),
        };
        if let Err(doc) = result {
            let _ = tx.send(doc);
        }
    }
    drop(tx);
    writer.abort();
}

impl ServiceError {
    pub fn into_doc(self) -> ServerDoc {
        ServerDoc::Error {
            code: self.code().to_string(),
            message: self.to_string(),
        }
    }
}
