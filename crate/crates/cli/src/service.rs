//! WebSocket session service. Each connection owns one session; its inbound
//! lines are processed strictly in arrival order and every committed
//! selection is forwarded to the shared command sink.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use anyhow::{Context, Result};
use futures_util::{SinkExt, StreamExt};
use gsi_core::log::Recorder;
use gsi_core::wire::{Hello, WIRE_SCHEMA_VERSION};
use gsi_core::{
    Catalog, CommandCounter, CommandRecord, CommandSink, Millis, SessionConfig, SuiteFile,
    Transport, WireMessage,
};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;

/// Everything a connection needs, shared read-only across connections.
pub struct ServiceContext {
    pub session: SessionConfig,
    pub catalog: Catalog,
    pub suite: SuiteFile,
    pub log_dir: PathBuf,
    commands: mpsc::Sender<CommandRecord>,
    next_id: AtomicU64,
}

impl ServiceContext {
    /// Starts the sink thread that owns `transport`.
    pub fn new(
        session: SessionConfig,
        suite: SuiteFile,
        log_dir: PathBuf,
        transport: Option<Box<dyn Transport>>,
        buffer_bound: usize,
    ) -> Result<Self> {
        session.validate()?;
        std::fs::create_dir_all(&log_dir)
            .with_context(|| format!("creating log directory {}", log_dir.display()))?;
        let (tx, rx) = mpsc::channel::<CommandRecord>();
        let mut sink = CommandSink::new(transport, buffer_bound);
        std::thread::Builder::new()
            .name("command-sink".into())
            .spawn(move || loop {
                match rx.recv_timeout(Duration::from_millis(250)) {
                    Ok(record) => sink.submit(record),
                    Err(mpsc::RecvTimeoutError::Timeout) => {
                        sink.flush();
                    }
                    Err(mpsc::RecvTimeoutError::Disconnected) => {
                        sink.flush();
                        break;
                    }
                }
            })?;
        Ok(Self {
            catalog: suite.catalog.clone(),
            session,
            suite,
            log_dir,
            commands: tx,
            next_id: AtomicU64::new(1),
        })
    }
}

/// Protocol state of one connection, independent of the transport.
pub struct Connection {
    ctx: Arc<ServiceContext>,
    id: String,
    recorder: Option<Recorder>,
    counter: CommandCounter,
    last_t: Option<Millis>,
}

impl Connection {
    pub fn new(ctx: Arc<ServiceContext>) -> Self {
        let n = ctx.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n:04}");
        Self {
            counter: CommandCounter::new(id.clone()),
            ctx,
            id,
            recorder: None,
            last_t: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Processes one inbound line and returns the replies in order.
    pub fn handle_line(&mut self, line: &str) -> Vec<WireMessage> {
        let msg = match WireMessage::parse(line) {
            Ok(m) => m,
            Err(e) => return vec![WireMessage::error("parse", e.to_string())],
        };
        if let WireMessage::Hello(hello) = msg {
            return match self.start(hello) {
                Ok(ack) => vec![ack, self.panel_state()],
                Err(e) => vec![WireMessage::error("hello", e.to_string())],
            };
        }
        let Some(input) = msg.to_input() else {
            return vec![WireMessage::error(
                "unexpected",
                "message type is server-to-client only",
            )];
        };
        if self.recorder.is_none() {
            if let Err(e) = self.start(Hello::default()) {
                return vec![WireMessage::error("session", e.to_string())];
            }
        }
        let recorder = self.recorder.as_mut().expect("started above");
        let effects = match recorder.apply(input) {
            Ok(e) => e,
            Err(e) => return vec![WireMessage::error("rejected", e.to_string())],
        };
        self.last_t = Some(input.t());
        let mut out = Vec::new();
        if let Some(sel) = effects.selection {
            let record = self.counter.record(&sel);
            if self.ctx.commands.send(record.clone()).is_err() {
                ::log::error!(
                    "command sink thread is gone; command {} of {} lost",
                    record.seq,
                    self.id
                );
            }
            out.push(WireMessage::Selection(sel));
            out.push(WireMessage::Command(record));
        }
        if let Some(trial) = effects.trial {
            out.push(WireMessage::Trial(trial));
        }
        out.push(self.panel_state());
        out
    }

    fn start(&mut self, hello: Hello) -> Result<WireMessage> {
        if self.recorder.is_some() {
            anyhow::bail!("session {} already started", self.id);
        }
        if let Some(v) = &hello.schema_version {
            anyhow::ensure!(
                v == WIRE_SCHEMA_VERSION,
                "unsupported wire schema {v}, expected {WIRE_SCHEMA_VERSION}"
            );
        }
        if let Some(name) = &hello.session {
            anyhow::ensure!(
                !name.is_empty()
                    && name
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'),
                "session id must be non-empty ASCII letters, digits, '-' or '_'"
            );
            self.id = name.clone();
            self.counter = CommandCounter::new(name.clone());
        }
        let mut config = self.ctx.session.clone();
        if let Some(kind) = hello.gsi_kind {
            config.gsi_kind = kind;
        }
        if let Some(feedback) = hello.feedback {
            config.feedback = feedback;
        }
        config.backend.cycle_order = self.ctx.suite.config.cycle_order;
        config.backend.fsm_initial = self.ctx.suite.config.initial();
        let set_index = hello.set_index.unwrap_or(1);
        let set = self
            .ctx
            .suite
            .set(set_index)
            .with_context(|| format!("suite has no set {set_index}"))?;
        let subject = hello.subject_id.clone().unwrap_or_else(|| "live".into());
        self.recorder = Some(Recorder::new(
            config.clone(),
            self.ctx.catalog.clone(),
            set,
            subject.clone(),
            Some(self.ctx.suite.config.seed),
        )?);
        ::log::info!(
            "session {} started: {} set {set_index} subject {subject}",
            self.id,
            config.gsi_kind
        );
        Ok(WireMessage::Hello(Hello {
            schema_version: Some(WIRE_SCHEMA_VERSION.into()),
            session: Some(self.id.clone()),
            gsi_kind: Some(config.gsi_kind),
            subject_id: Some(subject),
            set_index: Some(set_index),
            feedback: Some(config.feedback),
        }))
    }

    fn panel_state(&self) -> WireMessage {
        let session = self.recorder.as_ref().map(|r| r.session());
        WireMessage::PanelState {
            t: self.last_t,
            latched: session.and_then(|s| s.latched()),
            dwell: session.and_then(|s| s.panel_state().dwell),
            phase: session.map(|s| s.phase()),
            target: session.and_then(|s| s.current_target().cloned()),
        }
    }

    /// Writes the session log, if a session was started. Returns its path.
    pub fn finish(self) -> Result<Option<PathBuf>> {
        let Some(recorder) = self.recorder else {
            return Ok(None);
        };
        let path = unique_path(&self.ctx.log_dir, &self.id);
        recorder.into_log().save(&path)?;
        ::log::info!("session {} log written to {}", self.id, path.display());
        Ok(Some(path))
    }
}

fn unique_path(dir: &Path, id: &str) -> PathBuf {
    let mut path = dir.join(format!("{id}.jsonl"));
    let mut k = 1;
    while path.exists() {
        path = dir.join(format!("{id}-{k}.jsonl"));
        k += 1;
    }
    path
}

pub struct Service {
    listener: TcpListener,
    ctx: Arc<ServiceContext>,
}

impl Service {
    pub async fn bind(addr: SocketAddr, ctx: ServiceContext) -> Result<Self> {
        let listener = TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        Ok(Self {
            listener,
            ctx: Arc::new(ctx),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub async fn run(self) -> Result<()> {
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let ctx = self.ctx.clone();
            tokio::spawn(async move {
                if let Err(e) = serve_connection(ctx, stream).await {
                    ::log::warn!("connection from {peer}: {e:#}");
                }
            });
        }
    }
}

async fn serve_connection(ctx: Arc<ServiceContext>, stream: TcpStream) -> Result<()> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut tx, mut rx) = ws.split();
    let mut conn = Connection::new(ctx);
    let result = async {
        while let Some(frame) = rx.next().await {
            let text = match frame? {
                Message::Text(t) => t.to_string(),
                Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                Message::Close(_) => break,
                _ => continue,
            };
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                for reply in conn.handle_line(line) {
                    tx.send(Message::text(reply.to_line())).await?;
                }
            }
        }
        anyhow::Ok(())
    }
    .await;
    conn.finish()?;
    result
}
