//! HTTP front of the control server.
//!
//! | verb | path | body / query | success |
//! |------|------|--------------|---------|
//! | POST | `/api/login` | `{user, password}` | 200 session |
//! | POST | `/api/logout` | | 204 |
//! | GET  | `/api/status` | | 200 status rows |
//! | GET  | `/api/control` | | 200 control rows |
//! | GET  | `/api/commands` | | 200 command ledger |
//! | GET  | `/api/commands/{id}` | | 200 envelope |
//! | POST | `/api/commands` | `{device, command, duration_s?, sensor?}` | 201 envelope |
//! | POST | `/api/schedule` | `{entries: [...]}` | 204 |
//! | GET  | `/api/history` | `?sensor=&from=&to=` | 200 `text/csv` |
//! | GET  | `/api/events` | `?token=` allowed | 200 `text/event-stream` |
//! | GET  | `/api/gateway` | | 200 gateway dump |
//! | GET  | `/api/health` | | 200, no session needed |
//!
//! Sessions travel as `Authorization: Bearer <token>`. Failures answer with
//! `{"error": code, "message": text}`: 400 malformed input, 401 missing,
//! unknown or expired session and bad credentials, 404 unknown command,
//! 422 command validation, 423 locked account, 500 storage trouble.
//! Every session-guarded endpoint checks the session before reading the body.

use std::convert::Infallible;
use std::future::Future;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fieldlink_core::ctrlserver::{AuthError, CommandEnvelope, IssueRequest, PasswordHash, ServerError, ServerEvent};
use fieldlink_core::fieldctl::ScheduleEntry;
use fieldlink_core::plant::Plant;
use fieldlink_core::SensorKind;
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Seconds on the clock sessions expire against.
pub type WallClock = Arc<dyn Fn() -> f64 + Send + Sync>;

pub fn system_clock() -> WallClock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()))
}

const EVENT_BUFFER: usize = 1024;

struct Shared {
    plant: Mutex<Plant>,
    events: broadcast::Sender<ServerEvent>,
    clock: WallClock,
}

/// Plant plus the event fan-out, shared by every handler.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(mut plant: Plant, clock: WallClock) -> Self {
        plant.server_mut().set_event_capture(true);
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        AppState { shared: Arc::new(Shared { plant: Mutex::new(plant), events, clock }) }
    }

    fn lock(&self) -> MutexGuard<'_, Plant> {
        self.shared.plant.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Run `f` against the plant, then publish whatever events it raised.
    pub fn with_plant<R>(&self, f: impl FnOnce(&mut Plant) -> R) -> R {
        let mut plant = self.lock();
        let out = f(&mut plant);
        for event in plant.server_mut().drain_events() {
            let _ = self.shared.events.send(event);
        }
        out
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServerEvent> {
        self.shared.events.subscribe()
    }

    pub fn wall_now(&self) -> f64 {
        (self.shared.clock)()
    }

    /// Fold the server log into its state file.
    pub fn flush(&self) -> Result<(), ServerError> {
        self.with_plant(|p| p.server_mut().flush())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: "bad_request", message: message.into() }
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        let (status, code) = match &e {
            ServerError::Auth(AuthError::LockedOut) => (StatusCode::LOCKED, "locked_out"),
            ServerError::Auth(AuthError::BadCredentials) => (StatusCode::UNAUTHORIZED, "bad_credentials"),
            ServerError::Auth(AuthError::SessionExpired) => (StatusCode::UNAUTHORIZED, "session_expired"),
            ServerError::Auth(_) => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ServerError::Command(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            ServerError::Store(_) | ServerError::Csv(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError { status, code, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.code.into(), message: self.message })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    value.strip_prefix("Bearer ").map(|t| t.trim().to_string())
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

impl AppState {
    fn authorize(&self, headers: &HeaderMap) -> ApiResult<String> {
        let token = bearer(headers);
        let now = self.wall_now();
        Ok(self.with_plant(|p| p.server_mut().authorize(token.as_deref(), now))?)
    }
}

#[derive(Debug, Deserialize)]
struct LoginRequest {
    user: String,
    password: String,
}

async fn login(State(app): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: LoginRequest = parse_body(&body)?;
    let now = app.wall_now();
    let session = app.with_plant(|p| p.server_mut().login(&req.user, &req.password, now))?;
    log::info!("login: {}", session.user);
    Ok(Json(session))
}

async fn logout(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<StatusCode> {
    let token = bearer(&headers);
    let now = app.wall_now();
    app.with_plant(|p| p.server_mut().logout(token.as_deref(), now))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn status_table(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    let now = app.wall_now();
    Ok(Json(app.with_plant(|p| p.server_mut().get_status_table(token.as_deref(), now))?))
}

async fn control_table(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    let now = app.wall_now();
    Ok(Json(app.with_plant(|p| p.server_mut().get_control_table(token.as_deref(), now))?))
}

async fn list_commands(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Vec<CommandEnvelope>>> {
    app.authorize(&headers)?;
    Ok(Json(app.with_plant(|p| p.server().commands().cloned().collect())))
}

async fn get_command(
    State(app): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<CommandEnvelope>> {
    app.authorize(&headers)?;
    let id: u64 = id.parse().map_err(|_| ApiError::bad_request(format!("bad command id `{id}`")))?;
    app.with_plant(|p| p.server().command(id).cloned()).map(Json).ok_or(ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: format!("no command {id}"),
    })
}

async fn issue_command(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<impl IntoResponse> {
    app.authorize(&headers)?;
    let req: IssueRequest = parse_body(&body)?;
    let token = bearer(&headers);
    let now = app.wall_now();
    let envelope = app.with_plant(|p| p.server_mut().issue_command(token.as_deref(), now, &req))?;
    Ok((StatusCode::CREATED, Json(envelope)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRequest {
    entries: Vec<ScheduleEntry>,
}

async fn update_schedule(State(app): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<StatusCode> {
    let user = app.authorize(&headers)?;
    let req: ScheduleRequest = parse_body(&body)?;
    app.with_plant(|p| p.update_schedule(req.entries)).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        code: "validation",
        message: e.to_string(),
    })?;
    log::info!("schedule replaced by {user}");
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Default, Deserialize)]
struct HistoryQuery {
    sensor: Option<String>,
    from: Option<String>,
    to: Option<String>,
}

fn parse_time(name: &str, v: Option<&str>) -> ApiResult<Option<f64>> {
    v.map(|s| s.parse::<f64>().map_err(|_| ApiError::bad_request(format!("`{name}` must be a number of seconds"))))
        .transpose()
}

async fn history(
    State(app): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<HistoryQuery>,
) -> ApiResult<impl IntoResponse> {
    let token = bearer(&headers);
    app.authorize(&headers)?;
    let sensor = q
        .sensor
        .as_deref()
        .map(|s| s.parse::<SensorKind>().map_err(|e| ApiError::bad_request(e.to_string())))
        .transpose()?;
    let from = parse_time("from", q.from.as_deref())?;
    let to = parse_time("to", q.to.as_deref())?;
    let now = app.wall_now();
    let csv = app.with_plant(|p| p.server_mut().export_history(token.as_deref(), now, sensor, from, to, Vec::new()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv))
}

async fn gateway_dump(State(app): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    app.authorize(&headers)?;
    Ok(Json(app.with_plant(|p| p.gateway().dump())))
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    token: Option<String>,
}

fn sse_event(e: &ServerEvent) -> Event {
    let name = match e {
        ServerEvent::Status { .. } => "status",
        ServerEvent::Control { .. } => "control",
        ServerEvent::Command { .. } => "command",
        ServerEvent::Alarm { .. } => "alarm",
    };
    Event::default().event(name).data(serde_json::to_string(e).unwrap_or_default())
}

/// Current tables first, then live changes. Lagging clients skip ahead.
async fn events(
    State(app): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let token = bearer(&headers).or(q.token);
    let now = app.wall_now();
    let (status, control) = app.with_plant(|p| -> Result<_, ServerError> {
        let s = p.server_mut();
        s.authorize(token.as_deref(), now)?;
        let at = s.now();
        Ok((ServerEvent::Status { at, rows: s.status_table() }, ServerEvent::Control { at, rows: s.control_table() }))
    })?;
    let rx = app.subscribe();
    let initial = stream::iter([Ok(sse_event(&status)), Ok(sse_event(&control))]);
    let live = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(e) => return Some((Ok(sse_event(&e)), rx)),
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("event subscriber skipped {n} events"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    use futures::StreamExt;
    Ok(Sse::new(initial.chain(live)).keep_alive(KeepAlive::default()))
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/login", post(login))
        .route("/api/logout", post(logout))
        .route("/api/status", get(status_table))
        .route("/api/control", get(control_table))
        .route("/api/commands", get(list_commands).post(issue_command))
        .route("/api/commands/{id}", get(get_command))
        .route("/api/schedule", post(update_schedule))
        .route("/api/history", get(history))
        .route("/api/events", get(events))
        .route("/api/gateway", get(gateway_dump))
        .with_state(app)
}

/// Advance the plant so that simulated time tracks `accel` times wall time.
pub async fn run_clock(app: AppState, accel: f64, period: Duration) {
    let base = app.with_plant(|p| p.now().unwrap_or(-1.0));
    let start = Instant::now();
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        interval.tick().await;
        let target = base.max(0.0) + accel * start.elapsed().as_secs_f64();
        let app = app.clone();
        let result = tokio::task::spawn_blocking(move || app.with_plant(|p| p.run_until(target))).await;
        match result {
            Ok(Err(e)) => log::error!("simulation step failed: {e}"),
            Err(e) => log::error!("simulation task failed: {e}"),
            Ok(Ok(())) => {}
        }
    }
}

/// Serve on `listener` until `shutdown` resolves, then flush the server log.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    accel: f64,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let clock = tokio::spawn(run_clock(app.clone(), accel, Duration::from_millis(100)));
    let result = axum::serve(listener, router(app.clone())).with_graceful_shutdown(shutdown).await;
    clock.abort();
    if let Err(e) = app.flush() {
        log::error!("flush on shutdown failed: {e}");
    }
    result
}

#[derive(Debug, thiserror::Error)]
pub enum CredentialsError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CredentialsFile {
    users: Vec<UserEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserEntry {
    name: String,
    hash: PasswordHash,
}

/// Read `[[users]]` entries of `name` and `hash` (as printed by
/// `fieldlink hash-password`).
pub fn load_credentials(path: &Path) -> Result<Vec<(String, PasswordHash)>, CredentialsError> {
    let invalid = |message: String| CredentialsError::Invalid { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| invalid(e.to_string()))?;
    let file: CredentialsFile = toml::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    for u in &file.users {
        if !u.hash.is_well_formed() {
            return Err(invalid(format!("user `{}` has a malformed hash", u.name)));
        }
    }
    Ok(file.users.into_iter().map(|u| (u.name, u.hash)).collect())
}
