//! HTTP front end: `POST /classify`, `GET /health`, `PUT /rules`.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Json;
use serde::Deserialize;
use serde_json::json;

use crate::dispatcher::{dispatch, DispatchOptions};
use crate::ingestion::Ticket;
use crate::pipeline::Engine;
use crate::rules::{parse_rules, RuleSet};

/// Shared service state. The engine slot stays empty until the bundle has
/// loaded; rules are swapped whole.
pub struct AppState {
    engine: RwLock<Option<Arc<Engine>>>,
    rules: RwLock<Arc<RuleSet>>,
    options: DispatchOptions,
}

impl AppState {
    pub fn new(rules: RuleSet, options: DispatchOptions) -> Arc<Self> {
        Arc::new(AppState { engine: RwLock::new(None), rules: RwLock::new(Arc::new(rules)), options })
    }

    pub fn with_engine(engine: Engine, rules: RuleSet, options: DispatchOptions) -> Arc<Self> {
        let s = AppState::new(rules, options);
        s.set_engine(engine);
        s
    }

    pub fn set_engine(&self, engine: Engine) {
        *self.engine.write().expect("engine lock") = Some(Arc::new(engine));
    }

    pub fn set_rules(&self, rules: RuleSet) {
        *self.rules.write().expect("rules lock") = Arc::new(rules);
    }

    fn engine(&self) -> Option<Arc<Engine>> {
        self.engine.read().expect("engine lock").clone()
    }

    fn rules(&self) -> Arc<RuleSet> {
        self.rules.read().expect("rules lock").clone()
    }
}

#[derive(Deserialize)]
struct ClassifyRequest {
    #[serde(default)]
    id: String,
    #[serde(default)]
    subject: String,
    #[serde(default)]
    body: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn classify(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(engine) = state.engine() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model bundle is still loading");
    };
    let req: ClassifyRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if req.subject.is_empty() && req.body.is_empty() {
        return error(StatusCode::BAD_REQUEST, "subject and body are both empty");
    }
    let mut ticket = Ticket::new(req.id, req.subject, req.body);
    ticket.metadata = req.metadata;
    let rules = state.rules();
    match dispatch(&ticket, &engine.router, &rules, &state.options) {
        Ok(d) => Json(d).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let rules = state.rules().len();
    match state.engine() {
        Some(e) => Json(json!({
            "status": "ok",
            "provenance": e.provenance,
            "labels": e.router.classifier.labels(),
            "rules": rules,
        }))
        .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading", "rules": rules }))).into_response(),
    }
}

async fn replace_rules(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(_) => return error(StatusCode::BAD_REQUEST, "rule document is not UTF-8"),
    };
    match parse_rules(text) {
        Ok(rules) => {
            let n = rules.len();
            state.set_rules(rules);
            Json(json!({ "rules": n })).into_response()
        }
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

pub fn router(state: Arc<AppState>) -> axum::Router {
    axum::Router::new()
        .route("/classify", post(classify))
        .route("/health", get(health))
        .route("/rules", put(replace_rules))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
