//! Single-client WebSocket session.
//!
//! Inbound binary messages carry whole wire records; inbound text messages
//! are JSON control commands. Outbound messages are JSON text, tagged by
//! `type`: one `event` per tick, a `heartbeat` every second, and `error`,
//! `ack` or `diagnostic` replies.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use tactile_core::model::Model;
use tactile_core::session::{Resampler, Session, SessionConfig, StateEvent};
use tactile_core::wire;

/// Observer for every event the session emits, including safety stops that
/// happen after the client is gone.
pub type EventTap = Arc<dyn Fn(&StateEvent) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Event(StateEvent),
    Heartbeat {
        running: bool,
        calibrated: bool,
        frames: u64,
        dropped: u64,
        corrupt: u64,
    },
    Ack {
        command: &'static str,
    },
    Error {
        message: String,
    },
    Diagnostic {
        kind: &'static str,
        message: String,
    },
}

impl ServerMessage {
    fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start,
    Stop,
    SetConfig { config: SessionConfig },
}

/// Protocol state of one connection, free of any I/O.
pub struct Connection {
    config: SessionConfig,
    model: Model<f32>,
    session: Session,
    resampler: Resampler,
    running: bool,
    frames: u64,
    dropped: u64,
    corrupt: u64,
    last_seq: Option<u32>,
    tap: Option<EventTap>,
}

impl Connection {
    pub fn new(config: SessionConfig, model: Model<f32>, tap: Option<EventTap>) -> Result<Self, crate::CliError> {
        let session = Session::new(config.clone(), Box::new(model.clone()))?;
        Ok(Self {
            resampler: Resampler::new(config.input_rate_hz, config.frame_rate_hz),
            config,
            model,
            session,
            running: true,
            frames: 0,
            dropped: 0,
            corrupt: 0,
            last_seq: None,
            tap,
        })
    }

    fn restart(&mut self) -> Result<(), crate::CliError> {
        self.session = Session::new(self.config.clone(), Box::new(self.model.clone()))?;
        self.resampler = Resampler::new(self.config.input_rate_hz, self.config.frame_rate_hz);
        self.last_seq = None;
        Ok(())
    }

    fn publish(&self, e: StateEvent) -> ServerMessage {
        if let Some(tap) = &self.tap {
            tap(&e);
        }
        ServerMessage::Event(e)
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn on_binary(&mut self, bytes: &[u8]) -> Vec<ServerMessage> {
        if !self.running {
            return vec![ServerMessage::error("session is stopped; send {\"type\":\"start\"} first")];
        }
        let decoded = wire::decode_wire(bytes);
        let mut out = Vec::new();
        let bad = decoded.stats.crc_failures + usize::from(decoded.stats.truncated_bytes > 0);
        if bad > 0 || decoded.stats.skipped_bytes > 0 {
            self.corrupt += bad as u64;
            out.push(ServerMessage::error(format!(
                "dropped {} corrupt record(s), skipped {} byte(s), {} trailing byte(s)",
                decoded.stats.crc_failures, decoded.stats.skipped_bytes, decoded.stats.truncated_bytes
            )));
        }
        for f in &decoded.frames {
            self.frames += 1;
            if let Some(prev) = self.last_seq {
                self.dropped += u64::from(f.seq.wrapping_sub(prev).saturating_sub(1));
            }
            self.last_seq = Some(f.seq);
            for tick in self.resampler.push(f) {
                match self.session.push_raw(&tick) {
                    Ok(Some(e)) => out.push(self.publish(e)),
                    Ok(None) => {}
                    Err(e) => out.push(ServerMessage::error(e.to_string())),
                }
            }
        }
        out
    }

    pub fn on_text(&mut self, text: &str) -> Vec<ServerMessage> {
        let msg = match serde_json::from_str::<ClientMessage>(text) {
            Ok(m) => m,
            Err(e) => return vec![ServerMessage::error(format!("malformed control message: {e}"))],
        };
        match msg {
            ClientMessage::Start => {
                if !self.running {
                    if let Err(e) = self.restart() {
                        return vec![ServerMessage::error(e.to_string())];
                    }
                    self.running = true;
                }
                vec![ServerMessage::Ack { command: "start" }]
            }
            ClientMessage::Stop => {
                self.running = false;
                vec![self.safety_stop(), ServerMessage::Ack { command: "stop" }]
            }
            ClientMessage::SetConfig { config } => {
                if let Err(e) = config.validate() {
                    return vec![ServerMessage::error(e.to_string())];
                }
                let stop = self.safety_stop();
                self.config = config;
                if let Err(e) = self.restart() {
                    return vec![ServerMessage::error(e.to_string())];
                }
                vec![stop, ServerMessage::Ack { command: "set_config" }]
            }
        }
    }

    /// Halts motion and reports the halted state.
    pub fn safety_stop(&mut self) -> ServerMessage {
        let e = self.session.halt();
        self.publish(e)
    }

    pub fn heartbeat(&self) -> ServerMessage {
        ServerMessage::Heartbeat {
            running: self.running,
            calibrated: self.session.is_calibrated(),
            frames: self.frames,
            dropped: self.dropped,
            corrupt: self.corrupt,
        }
    }
}

pub struct ServeOptions {
    pub config: SessionConfig,
    pub model: Model<f32>,
    pub heartbeat: Duration,
    /// Silence after which a running session halts and reports an underrun.
    pub underrun_after: Duration,
    pub tap: Option<EventTap>,
}

impl ServeOptions {
    pub fn new(config: SessionConfig, model: Model<f32>) -> Self {
        Self {
            config,
            model,
            heartbeat: Duration::from_secs(1),
            underrun_after: Duration::from_millis(250),
            tap: None,
        }
    }
}

struct App {
    opts: ServeOptions,
    busy: AtomicBool,
}

pub fn router(opts: ServeOptions) -> Router {
    let app = Arc::new(App {
        opts,
        busy: AtomicBool::new(false),
    });
    Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(app)
}

/// Binds and serves in the background; returns the bound address.
pub async fn spawn(addr: SocketAddr, opts: ServeOptions) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(opts);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

async fn upgrade(ws: WebSocketUpgrade, State(app): State<Arc<App>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, app))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    socket.send(Message::Text(text)).await.is_ok()
}

async fn client(mut socket: WebSocket, app: Arc<App>) {
    if app.busy.swap(true, Ordering::SeqCst) {
        send(&mut socket, &ServerMessage::error("another client is connected")).await;
        let _ = socket.close().await;
        return;
    }
    let opts = &app.opts;
    let mut conn = match Connection::new(opts.config.clone(), opts.model.clone(), opts.tap.clone()) {
        Ok(c) => c,
        Err(e) => {
            send(&mut socket, &ServerMessage::error(e.to_string())).await;
            app.busy.store(false, Ordering::SeqCst);
            return;
        }
    };
    tracing::info!("client connected");
    let mut heartbeat = tokio::time::interval(opts.heartbeat);
    heartbeat.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut watchdog = tokio::time::interval(opts.underrun_after / 2);
    let mut last_frame: Option<Instant> = None;
    'conn: loop {
        let replies = tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Binary(bytes))) => {
                    last_frame = Some(Instant::now());
                    conn.on_binary(&bytes)
                }
                Some(Ok(Message::Text(text))) => {
                    let r = conn.on_text(&text);
                    // Stop and reconfigure reset the input clock.
                    last_frame = None;
                    r
                }
                Some(Ok(Message::Ping(_) | Message::Pong(_))) => Vec::new(),
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break 'conn,
            },
            _ = heartbeat.tick() => vec![conn.heartbeat()],
            _ = watchdog.tick() => match last_frame {
                Some(t) if conn.is_running() && t.elapsed() >= opts.underrun_after => {
                    last_frame = None;
                    vec![
                        ServerMessage::Diagnostic {
                            kind: "underrun",
                            message: format!("no frames for {} ms; motion halted", t.elapsed().as_millis()),
                        },
                        conn.safety_stop(),
                    ]
                }
                _ => Vec::new(),
            },
        };
        for r in &replies {
            if !send(&mut socket, r).await {
                break 'conn;
            }
        }
    }
    conn.safety_stop();
    tracing::info!("client disconnected; motion halted");
    app.busy.store(false, Ordering::SeqCst);
}
