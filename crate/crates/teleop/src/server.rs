//! WebSocket endpoint serving one session at a fixed control rate.
//!
//! The control loop is the only writer of simulator state. Each tick it
//! drains every message that arrived since the previous tick into a
//! one-slot queue ([`Coalescer`]), applies the single resulting command and
//! sends a frame. Commands arriving faster than the control rate are
//! therefore coalesced, never queued up.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::Context;
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::{Message, WebSocket};

use crate::protocol::{parse_command, ServerMessage, TeleopCommand};
use crate::session::{Session, SessionConfig};

pub const ENDPOINT: &str = "/session";

/// Latest-wins slot between the network reader and the control loop.
#[derive(Debug, Default)]
pub struct Coalescer {
    pending: Option<TeleopCommand>,
    pub received: u64,
    /// Commands folded into a later one before they were applied.
    pub coalesced: u64,
}

impl Coalescer {
    pub fn push(&mut self, cmd: TeleopCommand) {
        self.received += 1;
        self.pending = Some(match self.pending.take() {
            Some(old) => {
                self.coalesced += 1;
                old.coalesce(cmd)
            }
            None => cmd,
        });
    }

    pub fn take(&mut self) -> Option<TeleopCommand> {
        self.pending.take()
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub session: SessionConfig,
    pub rate_hz: f64,
    /// Stop after this many ticks even if the client stays connected.
    pub max_ticks: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub received: u64,
    pub coalesced: u64,
    pub rejected: u64,
    /// Ticks that started more than one period behind schedule.
    pub late_ticks: u64,
    pub episodes: Vec<PathBuf>,
}

fn check_path(req: &Request, resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() == ENDPOINT {
        Ok(resp)
    } else {
        let mut err = ErrorResponse::new(Some(format!("use {ENDPOINT}")));
        *err.status_mut() = StatusCode::NOT_FOUND;
        Err(err)
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> anyhow::Result<()> {
    match ws.send(Message::text(msg.to_line())) {
        Ok(()) => Ok(()),
        Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => Ok(()),
        Err(e) => Err(e.into()),
    }
}

/// Accepts one client on `listener` and runs its session until the client
/// disconnects (or `max_ticks`). An open recording is finalised on exit.
pub fn serve(listener: &TcpListener, cfg: &ServerConfig) -> anyhow::Result<ServeSummary> {
    let mut session = Session::new(cfg.session.clone())?;
    let (stream, _) = listener.accept().context("accepting a client")?;
    stream.set_nodelay(true).ok();
    let mut ws = tungstenite::accept_hdr(stream, check_path).map_err(|e| anyhow::anyhow!("handshake: {e}"))?;
    ws.get_mut().set_nonblocking(true)?;

    let mut queue = Coalescer::default();
    let mut summary = ServeSummary::default();
    let period = Duration::from_secs_f64(1.0 / cfg.rate_hz);
    let mut next = Instant::now();
    'session: loop {
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        match parse_command(line) {
                            Ok(cmd) => queue.push(cmd),
                            Err(e) => {
                                summary.rejected += 1;
                                send(&mut ws, &ServerMessage::Error { message: e.to_string() })?;
                            }
                        }
                    }
                }
                Ok(Message::Close(_)) => break 'session,
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if e.kind() == ErrorKind::WouldBlock => break,
                Err(_) => break 'session,
            }
        }
        let cmd = queue.take();
        for msg in session.tick(cmd.as_ref()) {
            if matches!(msg, ServerMessage::Error { .. }) {
                summary.rejected += 1;
            }
            if send(&mut ws, &msg).is_err() {
                break 'session;
            }
        }
        summary.ticks += 1;
        if cfg.max_ticks.is_some_and(|m| summary.ticks >= m) {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
        next += period;
        let now = Instant::now();
        if now < next {
            std::thread::sleep(next - now);
        } else if now - next > period {
            summary.late_ticks += 1;
            next = now;
        }
    }
    session.finish()?;
    summary.received = queue.received;
    summary.coalesced = queue.coalesced;
    summary.episodes = session.written().to_vec();
    Ok(summary)
}
