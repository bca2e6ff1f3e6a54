//! The serving loop: one controller task owns the runtime and steps it at
//! the configured pace; websocket clients read frames and submit commands
//! through a single ordered queue.

use std::collections::BTreeSet;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use amagf_core::corrective::{generate_pigr, parse_window, render_pigr, PigrError, PigrReport};
use amagf_core::scenario::{Ack, CommandKind, CommandRejection, EventLog, GovernanceEvent, OperatorCommand, RejectionCode, Runtime};
use amagf_core::Tick;

use crate::protocol::{parse_client, ClientMessage, DashboardFrame, ServerMessage, SCHEMA_VERSION};

#[derive(Debug, Clone, Default)]
pub struct ServeConfig {
    pub ms_per_tick: u64,
    /// Start without ticking until a resume command arrives.
    pub start_paused: bool,
    /// Pause automatically after these ticks.
    pub breakpoints: BTreeSet<Tick>,
    /// When set, every command must quote this token.
    pub operator_token: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pace {
    paused: bool,
    ms_per_tick: u64,
    next_tick: Tick,
}

type Reply<T> = oneshot::Sender<T>;

enum Request {
    Command(OperatorCommand, Reply<Result<Ack, CommandRejection>>),
    Log(Tick, Tick, Reply<Vec<GovernanceEvent>>),
    Pigr((Tick, Tick), Reply<Result<PigrReport, PigrError>>),
}

#[derive(Clone)]
struct AppState {
    requests: mpsc::Sender<Request>,
    frames: broadcast::Sender<DashboardFrame>,
    latest: watch::Receiver<Option<DashboardFrame>>,
    pace: watch::Receiver<Pace>,
    scenario: String,
    duration: Tick,
    token: Option<String>,
}

struct Controller {
    runtime: Runtime,
    config: ServeConfig,
    pace: watch::Sender<Pace>,
    frames: broadcast::Sender<DashboardFrame>,
    latest: watch::Sender<Option<DashboardFrame>>,
    halted: bool,
}

impl Controller {
    fn current(&self) -> Pace {
        *self.pace.borrow()
    }

    fn set_pace(&self, f: impl FnOnce(&mut Pace)) {
        self.pace.send_modify(f);
    }

    fn command(&mut self, command: OperatorCommand) -> Result<Ack, CommandRejection> {
        let kind = command.kind.clone();
        let ack = self.runtime.submit(command)?;
        if matches!(ack, Ack::Accepted { .. }) {
            match kind {
                CommandKind::Pause => self.set_pace(|p| p.paused = true),
                CommandKind::Resume => self.set_pace(|p| p.paused = false),
                CommandKind::SetPace { ms_per_tick } => self.set_pace(|p| p.ms_per_tick = ms_per_tick),
                _ => {}
            }
        }
        Ok(ack)
    }

    fn handle(&mut self, request: Request) {
        // a dropped receiver just means the client went away
        match request {
            Request::Command(command, reply) => {
                let _ = reply.send(self.command(command));
            }
            Request::Log(from, to, reply) => {
                let _ = reply.send(self.runtime.log().range(from, to).to_vec());
            }
            Request::Pigr(window, reply) => {
                let _ = reply.send(generate_pigr(self.runtime.log(), window));
            }
        }
    }

    fn tick(&mut self) {
        let frame = match self.runtime.step() {
            Ok(snapshot) => DashboardFrame::from(snapshot),
            Err(e) => {
                eprintln!("runtime halted: {e}");
                self.halted = true;
                return;
            }
        };
        let tick = frame.tick;
        self.latest.send_replace(Some(frame.clone()));
        let _ = self.frames.send(frame);
        let pause = self.config.breakpoints.contains(&tick);
        let next = self.runtime.next_tick();
        self.set_pace(|p| {
            p.next_tick = next;
            p.paused |= pause;
        });
    }

    async fn run(mut self, mut requests: mpsc::Receiver<Request>) {
        loop {
            let pace = self.current();
            let ticking = !pace.paused && !self.halted && !self.runtime.is_finished();
            tokio::select! {
                biased;
                request = requests.recv() => match request {
                    Some(r) => self.handle(r),
                    None => break,
                },
                _ = tokio::time::sleep(Duration::from_millis(pace.ms_per_tick)), if ticking => self.tick(),
            }
        }
    }
}

/// Builds the router and spawns the controller on the current tokio runtime.
pub fn router(runtime: Runtime, config: ServeConfig) -> Router {
    let (requests, rx) = mpsc::channel(256);
    let (frames, _) = broadcast::channel(1024);
    let (latest_tx, latest) = watch::channel(None);
    let (pace_tx, pace) = watch::channel(Pace {
        paused: config.start_paused,
        ms_per_tick: config.ms_per_tick,
        next_tick: runtime.next_tick(),
    });
    let state = AppState {
        requests,
        frames: frames.clone(),
        latest,
        pace,
        scenario: runtime.script().name.clone(),
        duration: runtime.script().duration,
        token: config.operator_token.clone(),
    };
    let controller = Controller {
        runtime,
        config,
        pace: pace_tx,
        frames,
        latest: latest_tx,
        halted: false,
    };
    tokio::spawn(controller.run(rx));
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/log", get(get_log))
        .route("/pigr", get(get_pigr))
        .route("/frame", get(get_frame))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, runtime: Runtime, config: ServeConfig) -> std::io::Result<()> {
    axum::serve(listener, router(runtime, config)).await
}

async fn ask<T>(state: &AppState, make: impl FnOnce(Reply<T>) -> Request) -> Option<T> {
    let (tx, rx) = oneshot::channel();
    state.requests.send(make(tx)).await.ok()?;
    rx.await.ok()
}

fn unavailable() -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, "controller stopped").into_response()
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": message }))).into_response()
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    from: Option<Tick>,
    to: Option<Tick>,
}

/// Events with `from <= t <= to` as JSON lines.
async fn get_log(State(state): State<AppState>, Query(q): Query<LogQuery>) -> Response {
    let (from, to) = (q.from.unwrap_or(0), q.to.unwrap_or(Tick::MAX));
    if from > to {
        return bad_request(format!("empty range {from}..{to}"));
    }
    let Some(events) = ask(&state, |r| Request::Log(from, to, r)).await else {
        return unavailable();
    };
    let body: String = events.iter().map(|e| EventLog::line(e) + "\n").collect();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

#[derive(Debug, Deserialize)]
struct PigrQuery {
    window: String,
    #[serde(default)]
    format: Option<String>,
}

async fn get_pigr(State(state): State<AppState>, Query(q): Query<PigrQuery>) -> Response {
    let window = match parse_window(&q.window) {
        Ok(w) => w,
        Err(e) => return bad_request(e),
    };
    let Some(result) = ask(&state, |r| Request::Pigr(window, r)).await else {
        return unavailable();
    };
    match result {
        Ok(report) if q.format.as_deref() == Some("text") => render_pigr(&report).into_response(),
        Ok(report) => Json(report).into_response(),
        Err(e @ PigrError::NotRequired { .. }) => {
            (StatusCode::UNPROCESSABLE_ENTITY, Json(serde_json::json!({ "error": e.to_string() }))).into_response()
        }
        Err(e) => (StatusCode::NOT_FOUND, Json(serde_json::json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn get_frame(State(state): State<AppState>) -> Response {
    match state.latest.borrow().clone() {
        Some(frame) => Json(frame).into_response(),
        None => (StatusCode::NO_CONTENT, "").into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

fn encode(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("server messages serialise").into())
}

fn frame_message(frame: DashboardFrame) -> ServerMessage {
    ServerMessage::Frame {
        schema: SCHEMA_VERSION,
        frame: Box::new(frame),
    }
}

fn error_message(command_id: Option<String>, rejection: CommandRejection) -> ServerMessage {
    ServerMessage::Error {
        schema: SCHEMA_VERSION,
        command_id,
        rejection,
    }
}

async fn client(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    // subscribe before reading the latest frame so nothing falls between
    let mut frames = state.frames.subscribe();
    let (out_tx, mut out_rx) = mpsc::channel::<ServerMessage>(64);

    let pace = *state.pace.borrow();
    let hello = ServerMessage::Hello {
        schema: SCHEMA_VERSION,
        scenario: state.scenario.clone(),
        duration: state.duration,
        next_tick: pace.next_tick,
        paused: pace.paused,
        ms_per_tick: pace.ms_per_tick,
    };
    let latest = state.latest.borrow().clone();

    let writer = tokio::spawn(async move {
        if sink.send(encode(&hello)).await.is_err() {
            return;
        }
        let mut last_sent: Option<Tick> = None;
        if let Some(frame) = latest {
            last_sent = Some(frame.tick);
            if sink.send(encode(&frame_message(frame))).await.is_err() {
                return;
            }
        }
        loop {
            let msg = tokio::select! {
                frame = frames.recv() => match frame {
                    Ok(f) if last_sent.is_some_and(|t| f.tick <= t) => continue,
                    Ok(f) => {
                        last_sent = Some(f.tick);
                        frame_message(f)
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                out = out_rx.recv() => match out {
                    Some(m) => m,
                    None => break,
                },
            };
            if sink.send(encode(&msg)).await.is_err() {
                break;
            }
        }
    });

    while let Some(Ok(message)) = stream.next().await {
        let text = match message {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match parse_client(&text) {
            Err((id, rejection)) => error_message(id, rejection),
            Ok(ClientMessage::Command { token, command, .. }) => {
                let id = command.command_id.clone();
                if state.token.is_some() && token != state.token {
                    error_message(Some(id), CommandRejection::new(RejectionCode::Unauthorized, "operator token missing or wrong").at("token"))
                } else {
                    match ask(&state, |r| Request::Command(command, r)).await {
                        Some(Ok(ack)) => ServerMessage::Ack {
                            schema: SCHEMA_VERSION,
                            command_id: id,
                            ack,
                        },
                        Some(Err(rejection)) => error_message(Some(id), rejection),
                        None => break,
                    }
                }
            }
        };
        if out_tx.send(reply).await.is_err() {
            break;
        }
    }
    drop(out_tx);
    let _ = writer.await;
}
