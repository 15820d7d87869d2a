//! Client daemon: UDP stub resolver over the local list, fallback dispatch
//! and the server session that keeps the list and votes flowing.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use lluad_core::dns::wire::{build_error_response, build_response, Rcode};
use lluad_core::dns::RecordKey;
use lluad_core::list::PopularityList;
use lluad_core::maintenance::{Upstream, UpstreamError};
use lluad_core::protocol::{ClientSession, SessionStats};
use lluad_core::resolver::{answer_locally, FallbackMode, LocalAnswer};
use log::{debug, info, warn};
use serde::Serialize;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpStream, UdpSocket};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_rustls::rustls::pki_types::ServerName;
use tokio_rustls::TlsConnector;

use crate::frame::read_message;
use crate::server::unix_now;

#[derive(Debug, Error)]
pub enum FallbackError {
    #[error("fallback transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("fallback timed out")]
    Timeout,
    #[error("fallback resolver failed: {0}")]
    Upstream(String),
    #[error("query type not supported by the simulated resolver")]
    Unsupported,
}

/// Where list misses go.
pub enum Fallback {
    /// Raw query forwarded over UDP after the modeled transport latency.
    Udp { mode: FallbackMode, upstream: SocketAddr, latency: Duration, timeout: Duration },
    /// Answered by an in-process authority after a fixed latency.
    Simulated { authority: Arc<Mutex<Box<dyn Upstream + Send>>>, latency: Duration },
}

impl Fallback {
    pub fn mode(&self) -> FallbackMode {
        match self {
            Self::Udp { mode, .. } => *mode,
            Self::Simulated { .. } => FallbackMode::Simulated,
        }
    }

    /// Relays on the path a fallback lookup takes.
    pub fn relay_count(&self) -> u32 {
        self.mode().relay_count()
    }

    pub async fn resolve(&self, query: &[u8], parsed: Option<(&RecordKey, u16)>) -> Result<Vec<u8>, FallbackError> {
        match self {
            Self::Udp { upstream, latency, timeout, .. } => {
                tokio::time::sleep(*latency).await;
                let bind: SocketAddr = if upstream.is_ipv4() {
                    ([0, 0, 0, 0], 0).into()
                } else {
                    (std::net::Ipv6Addr::UNSPECIFIED, 0).into()
                };
                let socket = UdpSocket::bind(bind).await?;
                socket.connect(upstream).await?;
                socket.send(query).await?;
                let mut buf = vec![0u8; 4096];
                let id = query.get(..2);
                tokio::time::timeout(*timeout, async {
                    loop {
                        let n = socket.recv(&mut buf).await?;
                        if buf.get(..2) == id {
                            buf.truncate(n);
                            return Ok::<_, std::io::Error>(buf);
                        }
                    }
                })
                .await
                .map_err(|_| FallbackError::Timeout)?
                .map_err(FallbackError::Io)
            }
            Self::Simulated { authority, latency } => {
                let (key, id) = parsed.ok_or(FallbackError::Unsupported)?;
                tokio::time::sleep(*latency).await;
                let result = authority.lock().expect("authority lock").resolve(key, Duration::from_secs(unix_now()));
                match result {
                    Ok(res) => {
                        let ttl = res.records.iter().map(|(_, t)| *t).min().unwrap_or(0);
                        let records: Vec<_> = res.records.into_iter().map(|(rr, _)| rr).collect();
                        Ok(build_response(id, key, &records, ttl))
                    }
                    Err(UpstreamError::NxDomain) => Ok(build_error_response(id, key, Rcode::NxDomain)),
                    Err(UpstreamError::NoData) => Ok(build_response(id, key, &[], 0)),
                    Err(UpstreamError::Failure(e)) => Err(FallbackError::Upstream(e)),
                }
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct ResolverStats {
    pub queries: AtomicU64,
    pub local_hits: AtomicU64,
    pub fallback_queries: AtomicU64,
    pub fallback_failures: AtomicU64,
    pub forwarded: AtomicU64,
    pub rejected: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ResolverCounts {
    pub queries: u64,
    pub local_hits: u64,
    pub fallback_queries: u64,
    pub fallback_failures: u64,
    pub forwarded: u64,
    pub rejected: u64,
}

impl ResolverStats {
    pub fn snapshot(&self) -> ResolverCounts {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        ResolverCounts {
            queries: g(&self.queries),
            local_hits: g(&self.local_hits),
            fallback_queries: g(&self.fallback_queries),
            fallback_failures: g(&self.fallback_failures),
            forwarded: g(&self.forwarded),
            rejected: g(&self.rejected),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SessionStatus {
    pub connected: bool,
    pub synced: bool,
    pub generation: u64,
    pub list_records: usize,
    pub rejected_list: bool,
    pub stats: SessionStats,
    pub last_error: Option<String>,
}

/// Serves DNS from the published list. Shared by the UDP listener and
/// in-process callers.
pub struct Resolver {
    list: RwLock<Arc<PopularityList>>,
    fallback: Fallback,
    answer_ttl: u32,
    votes: mpsc::UnboundedSender<RecordKey>,
    pub stats: ResolverStats,
}

fn servfail_for(query: &[u8]) -> Vec<u8> {
    let mut out = query.get(..12).map(<[u8]>::to_vec).unwrap_or_else(|| vec![0; 12]);
    out[2] = 0x81;
    out[3] = 0x80 | Rcode::ServFail.code();
    out[4..12].fill(0);
    out
}

impl Resolver {
    pub fn new(fallback: Fallback, answer_ttl: u32, votes: mpsc::UnboundedSender<RecordKey>) -> Self {
        Self {
            list: RwLock::new(Arc::new(PopularityList::new())),
            fallback,
            answer_ttl,
            votes,
            stats: ResolverStats::default(),
        }
    }

    pub fn list(&self) -> Arc<PopularityList> {
        self.list.read().expect("list lock").clone()
    }

    pub fn publish(&self, list: PopularityList) {
        *self.list.write().expect("list lock") = Arc::new(list);
    }

    pub fn fallback(&self) -> &Fallback {
        &self.fallback
    }

    /// Answers one wire query. A lookup that fails in the fallback yields
    /// SERVFAIL; every resolved A/AAAA key is offered as a vote.
    pub async fn resolve(&self, query: &[u8]) -> Vec<u8> {
        self.stats.queries.fetch_add(1, Ordering::Relaxed);
        let list = self.list();
        match answer_locally(&list, query, self.answer_ttl) {
            LocalAnswer::Hit { key, response } => {
                self.stats.local_hits.fetch_add(1, Ordering::Relaxed);
                let _ = self.votes.send(key);
                response
            }
            LocalAnswer::Miss { key, id } => {
                self.stats.fallback_queries.fetch_add(1, Ordering::Relaxed);
                match self.fallback.resolve(query, Some((&key, id))).await {
                    Ok(response) => {
                        let _ = self.votes.send(key);
                        response
                    }
                    Err(e) => {
                        debug!("fallback for {key}: {e}");
                        self.stats.fallback_failures.fetch_add(1, Ordering::Relaxed);
                        build_error_response(id, &key, Rcode::ServFail)
                    }
                }
            }
            LocalAnswer::Forward => {
                self.stats.forwarded.fetch_add(1, Ordering::Relaxed);
                match self.fallback.resolve(query, None).await {
                    Ok(response) => response,
                    Err(_) => {
                        self.stats.fallback_failures.fetch_add(1, Ordering::Relaxed);
                        servfail_for(query)
                    }
                }
            }
            LocalAnswer::Reject(response) => {
                self.stats.rejected.fetch_add(1, Ordering::Relaxed);
                response
            }
        }
    }
}

pub struct ClientOptions {
    pub server: SocketAddr,
    pub tls: Option<(TlsConnector, ServerName<'static>)>,
    pub dns_listen: SocketAddr,
    /// Lists with more top records than this are not used for answers.
    pub max_list_records: Option<usize>,
    pub reconnect_delay: Duration,
}

pub struct ClientHandle {
    dns_addr: SocketAddr,
    resolver: Arc<Resolver>,
    status: Arc<Mutex<SessionStatus>>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ClientHandle {
    pub fn dns_addr(&self) -> SocketAddr {
        self.dns_addr
    }

    pub fn resolver(&self) -> &Arc<Resolver> {
        &self.resolver
    }

    pub fn status(&self) -> SessionStatus {
        self.status.lock().expect("status lock").clone()
    }

    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

async fn serve_dns(socket: Arc<UdpSocket>, resolver: Arc<Resolver>, mut stop: watch::Receiver<bool>) {
    let mut buf = vec![0u8; 4096];
    loop {
        tokio::select! {
            r = socket.recv_from(&mut buf) => {
                let Ok((n, peer)) = r else { continue };
                let query = buf[..n].to_vec();
                let (socket, resolver) = (socket.clone(), resolver.clone());
                tokio::spawn(async move {
                    let response = resolver.resolve(&query).await;
                    let _ = socket.send_to(&response, peer).await;
                });
            }
            _ = stop.changed() => return,
        }
    }
}

enum LinkEnd {
    Shutdown,
    Lost(String),
}

struct SessionRunner {
    session: ClientSession,
    resolver: Arc<Resolver>,
    status: Arc<Mutex<SessionStatus>>,
    max_list_records: Option<usize>,
    published_generation: Option<u64>,
}

impl SessionRunner {
    fn publish(&mut self) {
        let list = self.session.list();
        let generation = self.session.generation();
        let too_big = self.max_list_records.is_some_and(|m| list.len() > m);
        if self.published_generation != Some(generation) && self.session.is_synced() {
            self.published_generation = Some(generation);
            if too_big {
                warn!("list generation {generation} has {} records, above the accepted size", list.len());
                self.resolver.publish(PopularityList::new());
            } else {
                self.resolver.publish(list.clone());
            }
        }
        let mut s = self.status.lock().expect("status lock");
        s.synced = self.session.is_synced();
        s.generation = generation;
        s.list_records = list.len();
        s.rejected_list = too_big;
        s.stats = self.session.stats();
    }

    async fn run_link<S>(
        &mut self,
        stream: S,
        votes: &mut mpsc::UnboundedReceiver<RecordKey>,
        stop: &mut watch::Receiver<bool>,
    ) -> LinkEnd
    where
        S: AsyncRead + AsyncWrite + Send + Unpin + 'static,
    {
        let (mut rd, mut wr) = tokio::io::split(stream);
        let (in_tx, mut incoming) = mpsc::unbounded_channel();
        let reader = tokio::spawn(async move {
            loop {
                match read_message(&mut rd).await {
                    Ok(Some(m)) => {
                        if in_tx.send(Ok(m)).is_err() {
                            return;
                        }
                    }
                    Ok(None) => return,
                    Err(e) => {
                        let _ = in_tx.send(Err(e.to_string()));
                        return;
                    }
                }
            }
        });
        let end = 'link: {
            if let Err(e) = wr.write_all(&self.session.hello(unix_now()).encode()).await {
                break 'link LinkEnd::Lost(e.to_string());
            }
            self.status.lock().expect("status lock").connected = true;
            loop {
                tokio::select! {
                    m = incoming.recv() => {
                        let m = match m {
                            Some(Ok(m)) => m,
                            Some(Err(e)) => break 'link LinkEnd::Lost(e),
                            None => break 'link LinkEnd::Lost("server closed the connection".into()),
                        };
                        let replies = match self.session.handle(m) {
                            Ok(r) => r,
                            Err(e) => break 'link LinkEnd::Lost(e.to_string()),
                        };
                        for r in replies {
                            if let Err(e) = wr.write_all(&r.encode()).await {
                                break 'link LinkEnd::Lost(e.to_string());
                            }
                        }
                        self.publish();
                    }
                    Some(key) = votes.recv() => {
                        self.session.offer_vote(&key);
                    }
                    _ = stop.changed() => break 'link LinkEnd::Shutdown,
                }
            }
        };
        reader.abort();
        let _ = wr.shutdown().await;
        self.status.lock().expect("status lock").connected = false;
        end
    }
}

async fn connect(options: &ClientOptions) -> std::io::Result<Box<dyn AsyncStream>> {
    let tcp = TcpStream::connect(options.server).await?;
    tcp.set_nodelay(true)?;
    match &options.tls {
        Some((connector, name)) => Ok(Box::new(connector.connect(name.clone(), tcp).await?)),
        None => Ok(Box::new(tcp)),
    }
}

trait AsyncStream: AsyncRead + AsyncWrite + Send + Unpin {}
impl<T: AsyncRead + AsyncWrite + Send + Unpin> AsyncStream for T {}

/// Binds the DNS listener and starts the server session with reconnects.
pub async fn start_client(
    session: ClientSession,
    fallback: Fallback,
    answer_ttl: u32,
    options: ClientOptions,
) -> std::io::Result<ClientHandle> {
    let socket = Arc::new(UdpSocket::bind(options.dns_listen).await?);
    let dns_addr = socket.local_addr()?;
    let (vote_tx, mut vote_rx) = mpsc::unbounded_channel();
    let resolver = Arc::new(Resolver::new(fallback, answer_ttl, vote_tx));
    let status = Arc::new(Mutex::new(SessionStatus::default()));
    let (shutdown, stop) = watch::channel(false);
    info!("DNS on {dns_addr}, fallback {}", resolver.fallback().mode());
    let dns = tokio::spawn(serve_dns(socket, resolver.clone(), stop.clone()));
    let mut runner = SessionRunner {
        session,
        resolver: resolver.clone(),
        status: status.clone(),
        max_list_records: options.max_list_records,
        published_generation: None,
    };
    let mut stop_session = stop;
    let link = tokio::spawn(async move {
        loop {
            let end = match connect(&options).await {
                Ok(stream) => runner.run_link(stream, &mut vote_rx, &mut stop_session).await,
                Err(e) => LinkEnd::Lost(e.to_string()),
            };
            match end {
                LinkEnd::Shutdown => return,
                LinkEnd::Lost(e) => {
                    warn!("server link: {e}");
                    runner.status.lock().expect("status lock").last_error = Some(e);
                }
            }
            tokio::select! {
                _ = tokio::time::sleep(options.reconnect_delay) => {}
                _ = stop_session.changed() => return,
            }
        }
    });
    Ok(ClientHandle { dns_addr, resolver, status, shutdown, tasks: vec![dns, link] })
}

/// Sends a raw DNS query to a listener and waits for the reply.
pub async fn query_udp(server: SocketAddr, query: &[u8], timeout: Duration) -> std::io::Result<Vec<u8>> {
    let socket = UdpSocket::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    socket.send_to(query, server).await?;
    let mut buf = vec![0u8; 4096];
    let n = tokio::time::timeout(timeout, socket.recv(&mut buf))
        .await
        .map_err(|_| std::io::Error::from(std::io::ErrorKind::TimedOut))??;
    buf.truncate(n);
    Ok(buf)
}
