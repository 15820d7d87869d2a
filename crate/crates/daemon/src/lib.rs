//! Network daemons around the sans-IO protocol engines of `lluad-core`:
//! a TCP/TLS server hosting the hub and a client with a UDP DNS listener.

pub mod client;
pub mod config;
pub mod frame;
pub mod keys;
pub mod server;
pub mod tls;
pub mod upstream;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use lluad_core::protocol::{ClientRegistry, ClientSession, ServerHub, SessionConfig};
use lluad_core::resolver::FallbackMode;
use lluad_core::sim::universe::{SyntheticUniverse, UniverseConfig};
use thiserror::Error;
use tokio_rustls::rustls::pki_types::ServerName;

use client::{ClientHandle, ClientOptions, Fallback};
use config::{ClientConfig, ServerConfig};
use server::{ServerHandle, ServerOptions};
use upstream::UdpUpstream;

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Key(#[from] keys::KeyError),
    #[error(transparent)]
    Tls(#[from] tls::TlsError),
    #[error("registry: {0}")]
    Registry(String),
    #[error("maintenance: {0}")]
    Maintenance(#[from] lluad_core::maintenance::MaintenanceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loads registry, keys and TLS material, then starts serving.
pub async fn run_server(config: &ServerConfig) -> Result<ServerHandle, DaemonError> {
    let text = std::fs::read_to_string(&config.registry)
        .map_err(|e| DaemonError::Registry(format!("{}: {e}", config.registry.display())))?;
    let registry = ClientRegistry::parse(&text).map_err(|e| DaemonError::Registry(e.to_string()))?;
    let secret = keys::load_secret(&config.server_key)?;
    let upstream = UdpUpstream::new(config.upstream, config.upstream_timeout);
    let hub = ServerHub::new(config.hub.clone(), registry, secret, Box::new(upstream))?;
    let tls = match &config.tls {
        Some(files) => Some(tls::acceptor(&files.cert, &files.key)?),
        None => None,
    };
    let options = ServerOptions { listen: config.listen, tls, tick: Duration::from_secs(1) };
    Ok(server::start_server(hub, options).await?)
}

pub fn fallback_for(config: &ClientConfig) -> Fallback {
    match config.fallback {
        FallbackMode::Simulated => {
            let universe = SyntheticUniverse::new(UniverseConfig {
                size: config.sim_universe_size,
                seed: config.seed,
                ..UniverseConfig::default()
            });
            Fallback::Simulated {
                authority: Arc::new(Mutex::new(Box::new(universe))),
                latency: config.fallback_latency,
            }
        }
        mode => Fallback::Udp {
            mode,
            upstream: config.upstream,
            latency: config.fallback_latency,
            timeout: config.fallback_timeout,
        },
    }
}

pub async fn run_client(config: &ClientConfig) -> Result<ClientHandle, DaemonError> {
    let secret = keys::load_secret(&config.client_key)?;
    let session = ClientSession::new(
        config.client_id,
        secret,
        SessionConfig {
            voting_rate: config.voting_rate,
            max_votes: config.max_votes,
            seed: config.seed ^ u64::from(config.client_id),
            ..SessionConfig::default()
        },
    );
    let tls = match &config.tls_ca {
        Some(ca) => {
            let name = ServerName::try_from(config.tls_name.clone())
                .map_err(|_| config::ConfigError::Invalid(format!("bad tls_name {:?}", config.tls_name)))?;
            Some((tls::connector(ca)?, name))
        }
        None => None,
    };
    let cname_headroom = 1 + lluad_core::list::MAX_CNAME_DEPTH;
    let options = ClientOptions {
        server: config.server,
        tls,
        dns_listen: config.listen,
        max_list_records: Some(config.n_popular.saturating_mul(cname_headroom)),
        reconnect_delay: Duration::from_secs(2),
    };
    Ok(client::start_client(session, fallback_for(config), config.answer_ttl, options).await?)
}
