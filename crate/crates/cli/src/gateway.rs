//! Live session gateway.
//!
//! Each connection owns a [`Gateway`], a synchronous state machine that turns
//! one incoming text frame into zero or more outgoing frames. The WebSocket
//! server in [`serve`] only moves frames between the socket and the machine,
//! so the protocol is testable without a network.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use cobench_core::battery::TrialPlan;
use cobench_core::session::{Body, Message, MessageKind, SessionRecord, SessionStatus};
use cobench_core::taxonomy::DeviceDescriptor;
use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message as Frame;

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub plan: TrialPlan,
    /// Where finished session logs are written; `None` keeps them in memory.
    pub data_dir: Option<PathBuf>,
}

/// Per-connection protocol state.
#[derive(Debug)]
pub struct Gateway {
    plan: TrialPlan,
    session: Option<SessionRecord>,
}

impl Gateway {
    pub fn new(plan: TrialPlan) -> Self {
        Self {
            plan,
            session: None,
        }
    }

    pub fn session(&self) -> Option<&SessionRecord> {
        self.session.as_ref()
    }

    pub fn is_closed(&self) -> bool {
        self.session
            .as_ref()
            .is_some_and(|s| s.status != SessionStatus::Open)
    }

    fn reject(&mut self, t: f64, trial: Option<u32>, reason: String) -> Vec<Message> {
        let id = match &mut self.session {
            Some(s) => {
                s.record_protocol_error(t, trial, &reason);
                s.id.clone()
            }
            None => String::new(),
        };
        vec![Message::new(t, &id, trial, Body::ProtocolError { reason })]
    }

    /// Answers a frame that could not be read as text.
    pub fn reject_frame(&mut self, reason: &str) -> Vec<Message> {
        self.reject(0.0, None, reason.to_string())
    }

    /// Handles one text frame and returns the replies.
    pub fn handle_text(&mut self, text: &str) -> Vec<Message> {
        match Message::parse(text, 1) {
            Ok(msg) => self.handle(msg),
            Err(e) => self.reject(0.0, None, e.to_string()),
        }
    }

    pub fn handle(&mut self, msg: Message) -> Vec<Message> {
        let Some(session) = &mut self.session else {
            return match msg.body {
                Body::Hello(hello) => {
                    if let Err(e) = hello.device.validate() {
                        return self.reject(msg.t, None, e.to_string());
                    }
                    if msg.session.is_empty() {
                        return self.reject(msg.t, None, "hello needs a session id".into());
                    }
                    let mut s = SessionRecord::new(
                        &msg.session,
                        hello.device,
                        self.plan.clone(),
                        hello.mapping,
                    );
                    s.opened_at = msg.t;
                    self.session = Some(s);
                    vec![Message::new(
                        msg.t,
                        &msg.session,
                        None,
                        Body::Plan(self.plan.clone()),
                    )]
                }
                other => self.reject(
                    msg.t,
                    msg.trial,
                    format!("expected hello, got {}", other.kind().label()),
                ),
            };
        };

        match msg.kind() {
            MessageKind::TrialStart
            | MessageKind::Sample
            | MessageKind::Event
            | MessageKind::Close => match session.ingest(&msg) {
                Ok(()) if msg.kind() == MessageKind::Close => {
                    vec![Message::new(
                        msg.t,
                        &session.id,
                        None,
                        Body::Close {
                            status: session.status,
                        },
                    )]
                }
                Ok(()) => Vec::new(),
                Err(e) => self.reject(msg.t, msg.trial, e.to_string()),
            },
            MessageKind::TrialEnd => {
                if let Err(e) = session.ingest(&msg) {
                    return self.reject(msg.t, msg.trial, e.to_string());
                }
                let trial = msg.trial.expect("ingest checked the trial id");
                match session.finalize_trial(trial) {
                    Ok(metrics) => vec![Message::new(
                        msg.t,
                        &session.id,
                        Some(trial),
                        Body::Ack(metrics),
                    )],
                    Err(e) => self.reject(msg.t, msg.trial, e.to_string()),
                }
            }
            other => self.reject(
                msg.t,
                msg.trial,
                format!("unexpected {} from a performer", other.label()),
            ),
        }
    }

    /// Connection lost: an active trial is aborted and an open session is
    /// closed as aborted. Returns the session, if one was started.
    pub fn disconnect(mut self) -> Option<SessionRecord> {
        let mut session = self.session.take()?;
        if session.status == SessionStatus::Open {
            session.abort_active();
            let last = session
                .trials
                .iter()
                .filter_map(|t| t.end_t)
                .fold(session.opened_at, f64::max);
            session
                .close_with(last, SessionStatus::Aborted)
                .expect("open sessions can be closed");
        }
        Some(session)
    }
}

fn log_path(dir: &Path, session: &SessionRecord) -> PathBuf {
    let safe: String = session
        .id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    dir.join(format!("{safe}.log"))
}

pub fn persist(dir: &Path, session: &SessionRecord) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = log_path(dir, session);
    std::fs::write(&path, session.export_log())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

async fn connection(
    stream: TcpStream,
    config: Arc<GatewayConfig>,
) -> anyhow::Result<Option<SessionRecord>> {
    let mut ws = tokio_tungstenite::accept_async(stream).await?;
    let mut gateway = Gateway::new(config.plan.clone());
    while let Some(frame) = ws.next().await {
        let text = match frame {
            Ok(Frame::Text(t)) => t,
            Ok(Frame::Close(_)) | Err(_) => break,
            Ok(Frame::Binary(_)) => {
                for reply in gateway.reject_frame("binary frames are not part of the protocol") {
                    ws.send(Frame::text(reply.to_line())).await?;
                }
                continue;
            }
            Ok(_) => continue,
        };
        for reply in gateway.handle_text(text.as_str()) {
            ws.send(Frame::text(reply.to_line())).await?;
        }
        if gateway.is_closed() {
            let _ = ws.close(None).await;
            break;
        }
    }
    let session = gateway.disconnect();
    if let (Some(dir), Some(s)) = (&config.data_dir, &session) {
        persist(dir, s)?;
    }
    Ok(session)
}

/// Accepts connections until the listener fails; one session per connection.
pub async fn serve(listener: TcpListener, config: GatewayConfig) -> anyhow::Result<()> {
    let config = Arc::new(config);
    loop {
        let (stream, peer): (TcpStream, SocketAddr) = listener.accept().await?;
        let config = Arc::clone(&config);
        tokio::spawn(async move {
            match connection(stream, config).await {
                Ok(Some(s)) => eprintln!("{peer}: session {} ended ({:?})", s.id, s.status),
                Ok(None) => eprintln!("{peer}: disconnected before hello"),
                Err(e) => eprintln!("{peer}: {e:#}"),
            }
        });
    }
}

/// Helper for building a hello message.
pub fn hello(session: &str, device: DeviceDescriptor, mapping: Option<String>) -> Message {
    Message::new(
        0.0,
        session,
        None,
        Body::Hello(cobench_core::session::HelloPayload { device, mapping }),
    )
}
