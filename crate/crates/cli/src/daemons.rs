use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::Args;
use lluad_core::protocol::{ClientRegistry, RegisteredClient};
use lluad_core::resolver::FallbackMode;
use lluad_daemon::config::{ClientConfig, KeyValues, ServerConfig};
use lluad_daemon::keys::{generate_secret, save_secret};

use crate::{CliError, Common};

#[derive(Args)]
pub struct ServerArgs {
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    #[arg(long)]
    pub n_popular: Option<usize>,
}

#[derive(Args)]
pub struct ClientArgs {
    /// DNS listener address.
    #[arg(long)]
    pub listen: Option<SocketAddr>,
    #[arg(long)]
    pub server: Option<SocketAddr>,
    #[arg(long)]
    pub fallback: Option<FallbackMode>,
}

#[derive(Args)]
pub struct KeygenArgs {
    #[arg(long, default_value_t = 3)]
    pub clients: u32,
    /// The first this many clients act as shufflers.
    #[arg(long)]
    pub shufflers: Option<u32>,
    /// Server address written into the client configs.
    #[arg(long, default_value = "127.0.0.1:8853")]
    pub server: SocketAddr,
}

/// Reads the daemon config; flags overwrite file values.
fn key_values(common: &Common, overrides: &[(&str, Option<String>)]) -> Result<KeyValues, CliError> {
    let path = common.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut kv = KeyValues::load(path)?;
    for (k, v) in overrides {
        if let Some(v) = v {
            kv.set(k, v.clone());
        }
    }
    if let Some(seed) = common.seed {
        kv.set("seed", seed.to_string());
    }
    Ok(kv)
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: "<runtime>".into(), source })
}

async fn interrupted() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        log::error!("cannot wait for Ctrl-C: {e}");
        std::future::pending::<()>().await;
    }
}

pub fn server(a: ServerArgs, common: &Common) -> Result<(), CliError> {
    let kv = key_values(
        common,
        &[("listen", a.listen.map(|x| x.to_string())), ("n_popular", a.n_popular.map(|x| x.to_string()))],
    )?;
    let config = ServerConfig::from_kv(&kv)?;
    runtime()?.block_on(async {
        let handle = lluad_daemon::run_server(&config).await?;
        log::info!("server on {}", handle.local_addr());
        interrupted().await;
        if let Some(hub) = handle.shutdown() {
            log::info!("stopped after {} rounds", hub.history().len());
        }
        Ok(())
    })
}

pub fn client(a: ClientArgs, common: &Common) -> Result<(), CliError> {
    let kv = key_values(
        common,
        &[
            ("listen", a.listen.map(|x| x.to_string())),
            ("server", a.server.map(|x| x.to_string())),
            ("fallback", a.fallback.map(|x| x.name().to_string())),
        ],
    )?;
    let config = ClientConfig::from_kv(&kv)?;
    runtime()?.block_on(async {
        let handle = lluad_daemon::run_client(&config).await?;
        log::info!("resolver on {}", handle.dns_addr());
        interrupted().await;
        let counts = handle.resolver().stats.snapshot();
        handle.shutdown().await;
        log::info!("answered {} queries, {} from the list", counts.queries, counts.local_hits);
        Ok(())
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

/// Writes `server.key`, `registry.txt`, `server.conf` and per client
/// `client-<id>.key` plus `client-<id>.conf` into the output directory.
pub fn keygen(a: KeygenArgs, common: &Common) -> Result<(), CliError> {
    let dir: PathBuf = common.out.clone().ok_or_else(|| CliError::Config("--out DIR is required".into()))?;
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let shufflers = a.shufflers.unwrap_or(a.clients);
    if shufflers > a.clients {
        return Err(CliError::Config("more shufflers than clients".into()));
    }
    save_secret(&dir.join("server.key"), &generate_secret())?;
    let mut clients = Vec::new();
    for id in 0..a.clients {
        let secret = generate_secret();
        let key = dir.join(format!("client-{id}.key"));
        save_secret(&key, &secret)?;
        clients.push(RegisteredClient { id, key: secret.public(), shuffler: id < shufflers });
        let mut conf = String::new();
        let _ = writeln!(conf, "server = {}", a.server);
        let _ = writeln!(conf, "client_id = {id}");
        let _ = writeln!(conf, "client_key = {}", key.display());
        let _ = writeln!(conf, "listen = 127.0.0.1:{}", 5353 + id);
        let _ = writeln!(conf, "fallback = plain");
        let _ = writeln!(conf, "upstream = 9.9.9.9:53");
        write(&dir.join(format!("client-{id}.conf")), &conf)?;
    }
    let registry = ClientRegistry::new(clients).map_err(|e| CliError::Config(e.to_string()))?;
    write(&dir.join("registry.txt"), &registry.to_text())?;
    let conf = format!(
        "listen = {}\nregistry = {}\nserver_key = {}\nupstream = 9.9.9.9:53\n",
        a.server,
        dir.join("registry.txt").display(),
        dir.join("server.key").display()
    );
    write(&dir.join("server.conf"), &conf)?;
    log::info!("wrote keys for {} clients ({shufflers} shufflers) to {}", a.clients, dir.display());
    Ok(())
}
