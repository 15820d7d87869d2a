//! Network server: connection tasks feed a single hub thread that owns all
//! protocol state.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::mpsc as std_mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use lluad_core::protocol::{Action, ConnId, Message, ServerHub};
use log::{debug, info, warn};
use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::task::JoinHandle as TaskHandle;
use tokio_rustls::TlsAcceptor;

use crate::frame::read_message;

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

enum Outbound {
    Frame(Arc<Vec<u8>>),
    Close,
}

type HubCall = Box<dyn FnOnce(&mut ServerHub, u64) -> Vec<Action> + Send>;

enum HubEvent {
    Connect(ConnId, mpsc::UnboundedSender<Outbound>),
    Message(ConnId, Box<Message>),
    Disconnect(ConnId),
    Call(HubCall),
    Shutdown,
}

pub struct ServerOptions {
    pub listen: SocketAddr,
    pub tls: Option<TlsAcceptor>,
    pub tick: Duration,
}

impl ServerOptions {
    pub fn plain(listen: SocketAddr) -> Self {
        Self { listen, tls: None, tick: Duration::from_secs(1) }
    }
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    events: std_mpsc::Sender<HubEvent>,
    hub: Option<JoinHandle<ServerHub>>,
    accept: TaskHandle<()>,
}

struct HubLoop {
    hub: ServerHub,
    writers: HashMap<ConnId, mpsc::UnboundedSender<Outbound>>,
}

impl HubLoop {
    fn dispatch(&mut self, actions: Vec<Action>) {
        for action in actions {
            match action {
                Action::Send { to, message } => {
                    let frame = Arc::new(message.encode());
                    for conn in to {
                        if let Some(w) = self.writers.get(&conn) {
                            let _ = w.send(Outbound::Frame(frame.clone()));
                        }
                    }
                }
                Action::Close { conn, reason } => {
                    info!("closing connection {conn}: {reason}");
                    if let Some(w) = self.writers.remove(&conn) {
                        let _ = w.send(Outbound::Close);
                    }
                }
            }
        }
    }

    fn run(mut self, events: std_mpsc::Receiver<HubEvent>, tick: Duration) -> ServerHub {
        let mut next_tick = Instant::now();
        loop {
            let wait = next_tick.saturating_duration_since(Instant::now());
            match events.recv_timeout(wait) {
                Ok(HubEvent::Connect(conn, writer)) => {
                    self.writers.insert(conn, writer);
                    self.hub.connect(conn);
                }
                Ok(HubEvent::Message(conn, m)) => {
                    let actions = self.hub.handle(conn, *m, unix_now());
                    self.dispatch(actions);
                }
                Ok(HubEvent::Disconnect(conn)) => {
                    self.writers.remove(&conn);
                    let actions = self.hub.disconnect(conn, unix_now());
                    self.dispatch(actions);
                }
                Ok(HubEvent::Call(f)) => {
                    let actions = f(&mut self.hub, unix_now());
                    self.dispatch(actions);
                }
                Ok(HubEvent::Shutdown) | Err(std_mpsc::RecvTimeoutError::Disconnected) => break,
                Err(std_mpsc::RecvTimeoutError::Timeout) => {}
            }
            if Instant::now() >= next_tick {
                let actions = self.hub.tick(unix_now());
                self.dispatch(actions);
                if let Some(e) = self.hub.last_error() {
                    debug!("hub: {e}");
                }
                next_tick = Instant::now() + tick;
            }
        }
        for (_, w) in self.writers.drain() {
            let _ = w.send(Outbound::Close);
        }
        self.hub
    }
}

async fn run_connection<S>(stream: S, conn: ConnId, events: std_mpsc::Sender<HubEvent>)
where
    S: AsyncRead + AsyncWrite + Send + Unpin + 'static,
{
    let (mut rd, mut wr) = tokio::io::split(stream);
    let (tx, mut rx) = mpsc::unbounded_channel();
    if events.send(HubEvent::Connect(conn, tx)).is_err() {
        return;
    }
    let writer = async move {
        while let Some(out) = rx.recv().await {
            match out {
                Outbound::Frame(bytes) => {
                    if wr.write_all(&bytes).await.is_err() {
                        break;
                    }
                }
                Outbound::Close => break,
            }
        }
        let _ = wr.shutdown().await;
    };
    let reader = {
        let events = events.clone();
        async move {
            loop {
                match read_message(&mut rd).await {
                    Ok(Some(m)) => {
                        if events.send(HubEvent::Message(conn, Box::new(m))).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        warn!("connection {conn}: {e}");
                        break;
                    }
                }
            }
        }
    };
    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    let _ = events.send(HubEvent::Disconnect(conn));
}

/// Binds the listener and starts the hub thread.
pub async fn start_server(hub: ServerHub, options: ServerOptions) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(options.listen).await?;
    let local_addr = listener.local_addr()?;
    let (events, rx) = std_mpsc::channel();
    let tick = options.tick;
    let hub_thread = std::thread::Builder::new()
        .name("lluad-hub".into())
        .spawn(move || HubLoop { hub, writers: HashMap::new() }.run(rx, tick))?;
    let tls = options.tls;
    info!("listening on {local_addr} ({})", if tls.is_some() { "TLS" } else { "plaintext" });
    let accept_events = events.clone();
    let accept = tokio::spawn(async move {
        let mut next: ConnId = 1;
        loop {
            let Ok((stream, peer)) = listener.accept().await else { continue };
            let _ = stream.set_nodelay(true);
            let conn = next;
            next += 1;
            debug!("connection {conn} from {peer}");
            let events = accept_events.clone();
            match &tls {
                Some(acceptor) => {
                    let acceptor = acceptor.clone();
                    tokio::spawn(async move {
                        match acceptor.accept(stream).await {
                            Ok(s) => run_connection(s, conn, events).await,
                            Err(e) => warn!("TLS handshake with {peer} failed: {e}"),
                        }
                    });
                }
                None => {
                    tokio::spawn(run_connection(stream, conn, events));
                }
            }
        }
    });
    Ok(ServerHandle { local_addr, events, hub: Some(hub_thread), accept })
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Runs `f` on the hub thread and dispatches the actions it returns.
    pub fn act<F>(&self, f: F)
    where
        F: FnOnce(&mut ServerHub, u64) -> Vec<Action> + Send + 'static,
    {
        let _ = self.events.send(HubEvent::Call(Box::new(f)));
    }

    /// Reads hub state on the hub thread.
    pub async fn inspect<T, F>(&self, f: F) -> Option<T>
    where
        T: Send + 'static,
        F: FnOnce(&ServerHub) -> T + Send + 'static,
    {
        let (tx, rx) = tokio::sync::oneshot::channel();
        self.act(move |hub, _| {
            let _ = tx.send(f(hub));
            Vec::new()
        });
        rx.await.ok()
    }

    /// Stops accepting, closes every session and returns the hub.
    pub fn shutdown(mut self) -> Option<ServerHub> {
        self.accept.abort();
        let _ = self.events.send(HubEvent::Shutdown);
        self.hub.take()?.join().ok()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.accept.abort();
        let _ = self.events.send(HubEvent::Shutdown);
    }
}
