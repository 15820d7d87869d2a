//! `key = value` configuration files for both daemons.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use lluad_core::maintenance::MaintenanceConfig;
use lluad_core::protocol::HubConfig;
use lluad_core::resolver::FallbackMode;
use lluad_core::sim::latency::LatencyTable;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Parsed `key = value` pairs. `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: k.to_string() });
            }
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    fn take<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| v.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: v.into() }))
            .transpose()
    }

    fn take_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.0.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(ConfigError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TlsFiles {
    pub cert: PathBuf,
    pub key: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub tls: Option<TlsFiles>,
    pub registry: PathBuf,
    pub server_key: PathBuf,
    pub upstream: SocketAddr,
    pub upstream_timeout: Duration,
    pub hub: HubConfig,
}

const SERVER_KEYS: &[&str] = &[
    "listen",
    "tls_cert",
    "tls_key",
    "registry",
    "server_key",
    "upstream",
    "upstream_timeout_ms",
    "n_popular",
    "t_refresh",
    "weight_a",
    "voting_rate",
    "max_votes",
    "min_ttl",
    "fast_start_rounds",
    "quota",
    "n_shuffle",
    "assigned_shufflers",
    "straggler_timeout",
    "seed",
];

impl ServerConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_known(SERVER_KEYS)?;
        let d = MaintenanceConfig::default();
        let maintenance = MaintenanceConfig {
            n_popular: kv.take_or("n_popular", d.n_popular)?,
            t_refresh_secs: kv.take_or("t_refresh", d.t_refresh_secs)?,
            weight_a: kv.take_or("weight_a", d.weight_a)?,
            voting_rate: kv.take_or("voting_rate", d.voting_rate)?,
            max_votes_per_round: kv.take_or("max_votes", d.max_votes_per_round)?,
            min_ttl_secs: kv.take_or("min_ttl", d.min_ttl_secs)?,
            fast_start_rounds: kv.take_or("fast_start_rounds", d.fast_start_rounds)?,
            seed: kv.take_or("seed", d.seed)?,
            ..d
        };
        maintenance.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let h = HubConfig::default();
        let hub = HubConfig {
            maintenance,
            n_shuffle: kv.take_or("n_shuffle", h.n_shuffle)?,
            quota: kv.take_or("quota", h.quota)?,
            assigned_shufflers: kv.take("assigned_shufflers")?,
            straggler_timeout_secs: kv.take_or("straggler_timeout", h.straggler_timeout_secs)?,
            ..h
        };
        let tls = match (kv.take::<PathBuf>("tls_cert")?, kv.take::<PathBuf>("tls_key")?) {
            (Some(cert), Some(key)) => Some(TlsFiles { cert, key }),
            (None, None) => None,
            _ => return Err(ConfigError::Invalid("tls_cert and tls_key go together".into())),
        };
        Ok(Self {
            listen: kv.take_or("listen", SocketAddr::from(([127, 0, 0, 1], 8853)))?,
            tls,
            registry: kv.take("registry")?.ok_or(ConfigError::Missing("registry"))?,
            server_key: kv.take("server_key")?.ok_or(ConfigError::Missing("server_key"))?,
            upstream: kv.take_or("upstream", SocketAddr::from(([9, 9, 9, 9], 53)))?,
            upstream_timeout: Duration::from_millis(kv.take_or("upstream_timeout_ms", 2000)?),
            hub,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientConfig {
    pub server: SocketAddr,
    /// Present when the server link uses TLS.
    pub tls_ca: Option<PathBuf>,
    pub tls_name: String,
    pub client_id: u32,
    pub client_key: PathBuf,
    pub listen: SocketAddr,
    pub fallback: FallbackMode,
    pub upstream: SocketAddr,
    /// Latency added to every fallback lookup.
    pub fallback_latency: Duration,
    pub fallback_timeout: Duration,
    /// Largest list accepted, as a number of top records.
    pub n_popular: usize,
    pub voting_rate: f64,
    pub max_votes: Option<usize>,
    pub quota: Option<u16>,
    pub answer_ttl: u32,
    pub sim_universe_size: usize,
    pub seed: u64,
}

const CLIENT_KEYS: &[&str] = &[
    "server",
    "tls_ca",
    "tls_name",
    "client_id",
    "client_key",
    "listen",
    "fallback",
    "upstream",
    "fallback_latency_ms",
    "fallback_timeout_ms",
    "n_popular",
    "voting_rate",
    "max_votes",
    "quota",
    "answer_ttl",
    "sim_universe_size",
    "seed",
];

impl ClientConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.check_known(CLIENT_KEYS)?;
        let fallback: FallbackMode = kv.take_or("fallback", FallbackMode::Plain)?;
        let modeled = match fallback {
            FallbackMode::Plain => 0.0,
            mode => LatencyTable::default().fallback(mode),
        };
        let voting_rate: f64 = kv.take_or("voting_rate", 0.3)?;
        if !(voting_rate > 0.0 && voting_rate <= 1.0) {
            return Err(ConfigError::Invalid("voting_rate must lie in (0, 1]".into()));
        }
        Ok(Self {
            server: kv.take("server")?.ok_or(ConfigError::Missing("server"))?,
            tls_ca: kv.take("tls_ca")?,
            tls_name: kv.take_or("tls_name", "localhost".to_string())?,
            client_id: kv.take("client_id")?.ok_or(ConfigError::Missing("client_id"))?,
            client_key: kv.take("client_key")?.ok_or(ConfigError::Missing("client_key"))?,
            listen: kv.take_or("listen", SocketAddr::from(([127, 0, 0, 1], 5353)))?,
            fallback,
            upstream: kv.take_or("upstream", SocketAddr::from(([9, 9, 9, 9], 53)))?,
            fallback_latency: Duration::from_micros((kv.take_or("fallback_latency_ms", modeled)? * 1000.0) as u64),
            fallback_timeout: Duration::from_millis(kv.take_or("fallback_timeout_ms", 3000)?),
            n_popular: kv.take_or("n_popular", MaintenanceConfig::default().n_popular)?,
            voting_rate,
            max_votes: kv.take("max_votes")?,
            quota: kv.take("quota")?,
            answer_ttl: kv.take_or("answer_ttl", 60)?,
            sim_universe_size: kv.take_or("sim_universe_size", 10_000)?,
            seed: kv.take_or("seed", 0)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_junk() {
        let kv = KeyValues::parse("# c\n a = 1 # trailing\n\nb=x y\n").unwrap();
        assert_eq!(kv.get("a"), Some("1"));
        assert_eq!(kv.get("b"), Some("x y"));
        assert!(matches!(KeyValues::parse("a 1"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(ConfigError::Duplicate { line: 2, .. })));
    }

    #[test]
    fn server_defaults_and_overrides() {
        let kv = KeyValues::parse("registry = r.txt\nserver_key = s.key\nn_popular = 100\nquota = 4").unwrap();
        let c = ServerConfig::from_kv(&kv).unwrap();
        assert_eq!(c.hub.maintenance.n_popular, 100);
        assert_eq!(c.hub.quota, 4);
        assert_eq!(c.hub.maintenance.t_refresh_secs, 3600);
        assert_eq!(c.hub.n_shuffle, 10);
        assert!(c.tls.is_none());
        let bad = KeyValues::parse("registry = r\nserver_key = s\nweight_a = 2").unwrap();
        assert!(matches!(ServerConfig::from_kv(&bad), Err(ConfigError::Invalid(_))));
        let unknown = KeyValues::parse("registry = r\nserver_key = s\nbogus = 1").unwrap();
        assert!(matches!(ServerConfig::from_kv(&unknown), Err(ConfigError::UnknownKey(_))));
    }

    #[test]
    fn client_modes() {
        let kv = KeyValues::parse("server = 127.0.0.1:1\nclient_id = 3\nclient_key = k\nfallback = dohot").unwrap();
        let c = ClientConfig::from_kv(&kv).unwrap();
        assert_eq!(c.fallback, FallbackMode::Dohot);
        assert_eq!(c.fallback_latency, Duration::from_millis(1100));
        assert_eq!(c.listen, SocketAddr::from(([127, 0, 0, 1], 5353)));
        let bad =
            KeyValues::parse("server = 127.0.0.1:1\nclient_id = 3\nclient_key = k\nfallback = carrier-pigeon").unwrap();
        assert!(matches!(ClientConfig::from_kv(&bad), Err(ConfigError::BadValue { .. })));
    }
}
