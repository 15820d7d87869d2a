//! Deterministic synthetic DNS universe standing in for real authorities.
//!
//! Record `i` is the `i`-th most popular name at time zero. Heavier content
//! (CNAME indirection into shared CDN edges, rotating load-balanced pools)
//! is more likely near the head of the ranking; tail names are frequently
//! extra hostnames under already existing sites. Every choice is a pure
//! function of the seed and the record index.

use std::collections::{HashMap, HashSet};
use std::net::{Ipv4Addr, Ipv6Addr};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dns::{DomainName, RecordAnswer, RecordKey, RecordType, ResourceRecord};
use crate::list::PopularityList;
use crate::maintenance::{Maintenance, MaintenanceConfig, MaintenanceError, Resolution, Upstream, UpstreamError};

const SYLLABLES: [&str; 32] = [
    "ka", "lo", "mi", "ne", "ro", "ta", "vi", "zu", "ber", "dan", "fel", "gor", "hin", "jas", "kel", "mor", "nal",
    "pen", "qua", "ris", "sol", "tur", "vex", "wyn", "ar", "el", "on", "ux", "bri", "cla", "dro", "ste",
];
const TLDS: [(&str, u32); 10] = [
    ("com", 52),
    ("net", 10),
    ("org", 8),
    ("io", 5),
    ("se", 6),
    ("de", 5),
    ("co.uk", 4),
    ("fr", 4),
    ("info", 3),
    ("tv", 3),
];
const HOST_LABELS: [&str; 20] = [
    "www", "api", "static", "img", "cdn", "m", "mail", "login", "app", "media", "assets", "files", "video", "ads",
    "track", "s", "news", "auth", "metrics", "push",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniverseConfig {
    pub size: usize,
    pub seed: u64,
    /// Share of CNAME-aliased records at rank 0 and far in the tail.
    pub cname_share_head: f64,
    pub cname_share_tail: f64,
    /// Share of actively load-balanced records at rank 0 and in the tail.
    pub lb_share_head: f64,
    pub lb_share_tail: f64,
    /// Rank at which head and tail shares contribute equally.
    pub head_rank: usize,
    /// Share of names created as an extra hostname of an existing site.
    pub subdomain_share: f64,
    pub cdn_edges: usize,
    /// Share of CDN edges that rotate their answers.
    pub edge_lb_share: f64,
    pub lb_ttls: Vec<u32>,
    pub lb_pool_min: u8,
    pub lb_pool_max: u8,
    pub static_ttl_min: u32,
    pub static_ttl_max: u32,
    pub alias_ttl: u32,
    /// Distinct /16 blocks addresses are drawn from.
    pub address_blocks: u16,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            size: 100_000,
            seed: 0,
            cname_share_head: 0.30,
            cname_share_tail: 0.04,
            lb_share_head: 0.35,
            lb_share_tail: 0.01,
            head_rank: 2_000,
            subdomain_share: 0.55,
            cdn_edges: 600,
            edge_lb_share: 0.5,
            lb_ttls: vec![20, 30, 60],
            lb_pool_min: 2,
            lb_pool_max: 8,
            static_ttl_min: 300,
            static_ttl_max: 3600,
            alias_ttl: 300,
            address_blocks: 400,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Content {
    Static { block: u16, host: u16, ttl: u32 },
    Rotating { block: u16, base: u16, pool: u8, ttl: u32, salt: u64 },
    Alias { edge: usize },
}

#[derive(Clone, Debug)]
struct Entry {
    name: DomainName,
    content: Content,
}

/// Record names plus a time-dependent authority over them.
#[derive(Clone, Debug)]
pub struct SyntheticUniverse {
    config: UniverseConfig,
    records: Vec<Entry>,
    edges: Vec<Entry>,
    by_name: HashMap<DomainName, (bool, usize)>,
    pub queries: u64,
}

fn hash(seed: u64, tag: &str, i: u64) -> u64 {
    let d = Sha256::new().chain_update(seed.to_be_bytes()).chain_update(tag).chain_update(i.to_be_bytes()).finalize();
    u64::from_be_bytes(d[..8].try_into().expect("8"))
}

fn unit(seed: u64, tag: &str, i: u64) -> f64 {
    (hash(seed, tag, i) >> 11) as f64 / (1u64 << 53) as f64
}

fn word(h: u64) -> String {
    let n = 2 + (h % 2) as usize;
    (0..n).map(|k| SYLLABLES[((h >> (8 + 5 * k)) % 32) as usize]).collect()
}

fn tld(h: u64) -> &'static str {
    let total: u32 = TLDS.iter().map(|t| t.1).sum();
    let mut x = (h % u64::from(total)) as u32;
    for (t, w) in TLDS {
        if x < w {
            return t;
        }
        x -= w;
    }
    "com"
}

impl SyntheticUniverse {
    pub fn new(config: UniverseConfig) -> Self {
        let seed = config.seed;
        let mut taken = HashSet::new();
        let mut unique = |base: String| -> DomainName {
            let mut candidate = base.clone();
            let mut n = 2;
            while !taken.insert(candidate.clone()) {
                let (head, rest) = base.split_once('.').expect("dotted");
                candidate = format!("{head}{n}.{rest}");
                n += 1;
            }
            candidate.parse().expect("generated names are valid")
        };
        let edges: Vec<Entry> = (0..config.cdn_edges)
            .map(|k| {
                let k64 = k as u64;
                let name = unique(format!("e{}.{}.edgecdn.net", k % 64, word(hash(seed, "edge-net", k64 / 64))));
                let content = if unit(seed, "edge-lb", k64) < config.edge_lb_share {
                    rotating(&config, "edge", k64)
                } else {
                    fixed(&config, "edge", k64)
                };
                Entry { name, content }
            })
            .collect();
        let mut sites: Vec<String> = Vec::new();
        let mut records = Vec::with_capacity(config.size);
        for i in 0..config.size {
            let i64 = i as u64;
            let h = hash(seed, "site", i64);
            let name = if !sites.is_empty() && unit(seed, "sub", i64) < config.subdomain_share {
                let site = &sites[(hash(seed, "parent", i64) % sites.len() as u64) as usize];
                let label = HOST_LABELS[(h % HOST_LABELS.len() as u64) as usize];
                unique(format!("{label}.{site}"))
            } else {
                let site = format!("{}.{}", word(h), tld(h >> 32));
                let host = if h & 1 == 0 { format!("www.{site}") } else { site.clone() };
                sites.push(site);
                unique(host)
            };
            let weight = config.head_rank as f64 / (config.head_rank + i) as f64;
            let cname = config.cname_share_tail + (config.cname_share_head - config.cname_share_tail) * weight;
            let lb = config.lb_share_tail + (config.lb_share_head - config.lb_share_tail) * weight;
            let u = unit(seed, "kind", i64);
            let content = if u < cname && !edges.is_empty() {
                Content::Alias { edge: (hash(seed, "edge-pick", i64) % edges.len() as u64) as usize }
            } else if u < cname + lb {
                rotating(&config, "rec", i64)
            } else {
                fixed(&config, "rec", i64)
            };
            records.push(Entry { name, content });
        }
        let by_name = records
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), (false, i)))
            .chain(edges.iter().enumerate().map(|(k, e)| (e.name.clone(), (true, k))))
            .collect();
        Self { config, records, edges, by_name, queries: 0 }
    }

    pub fn config(&self) -> &UniverseConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn name(&self, i: usize) -> &DomainName {
        &self.records[i].name
    }

    pub fn key(&self, i: usize, rtype: RecordType) -> RecordKey {
        RecordKey::new(self.records[i].name.clone(), rtype)
    }

    pub fn is_rotating(&self, i: usize) -> bool {
        matches!(self.records[i].content, Content::Rotating { .. })
    }

    pub fn is_alias(&self, i: usize) -> bool {
        matches!(self.records[i].content, Content::Alias { .. })
    }

    /// Native TTL of the record's terminal answer.
    pub fn ttl(&self, i: usize) -> u32 {
        match &self.records[i].content {
            Content::Alias { edge } => terminal_ttl(&self.edges[*edge].content),
            c => terminal_ttl(c),
        }
    }

    /// Terminal A answer of record `i` at `now`, following any alias.
    pub fn address_at(&self, i: usize, now: Duration) -> Ipv4Addr {
        match &self.records[i].content {
            Content::Alias { edge } => address(&self.edges[*edge].content, now),
            c => address(c, now),
        }
    }

    fn answer(&self, entry: &Entry, rtype: RecordType, now: Duration) -> Option<RecordAnswer> {
        match rtype {
            RecordType::A => Some(RecordAnswer::A(address(&entry.content, now))),
            RecordType::AAAA => {
                let v4 = address(&entry.content, now).octets();
                Some(RecordAnswer::Aaaa(Ipv6Addr::new(
                    0x2001,
                    0x0db8,
                    u16::from_be_bytes([v4[0], v4[1]]),
                    0,
                    0,
                    0,
                    0,
                    u16::from_be_bytes([v4[2], v4[3]]),
                )))
            }
            _ => None,
        }
    }
}

fn fixed(config: &UniverseConfig, tag: &str, i: u64) -> Content {
    let h = hash(config.seed, tag, i);
    let span = u64::from(config.static_ttl_max.saturating_sub(config.static_ttl_min)) + 1;
    Content::Static {
        block: (h % u64::from(config.address_blocks.max(1))) as u16,
        host: (h >> 16) as u16,
        ttl: config.static_ttl_min + ((h >> 32) % span) as u32,
    }
}

fn rotating(config: &UniverseConfig, tag: &str, i: u64) -> Content {
    let h = hash(config.seed, &format!("{tag}-lb"), i);
    let span = u64::from(config.lb_pool_max.saturating_sub(config.lb_pool_min)) + 1;
    let ttls = if config.lb_ttls.is_empty() { &[60][..] } else { &config.lb_ttls[..] };
    Content::Rotating {
        block: (h % u64::from(config.address_blocks.max(1))) as u16,
        base: (h >> 16) as u16,
        pool: config.lb_pool_min.max(1) + ((h >> 32) % span) as u8,
        ttl: ttls[((h >> 40) % ttls.len() as u64) as usize],
        salt: h,
    }
}

fn terminal_ttl(c: &Content) -> u32 {
    match c {
        Content::Static { ttl, .. } | Content::Rotating { ttl, .. } => *ttl,
        Content::Alias { .. } => 0,
    }
}

fn address(c: &Content, now: Duration) -> Ipv4Addr {
    let (block, host) = match *c {
        Content::Static { block, host, .. } => (block, host),
        Content::Rotating { block, base, pool, ttl, salt } => {
            let epoch = now.as_secs() / u64::from(ttl.max(1));
            let pick = hash(salt, "rotate", epoch) % u64::from(pool);
            (block, base.wrapping_add(pick as u16))
        }
        Content::Alias { .. } => (0, 0),
    };
    let [b0, b1] = block.to_be_bytes();
    let [h0, h1] = host.to_be_bytes();
    Ipv4Addr::new(10 + (b0 % 100), b1, h0, h1)
}

impl Upstream for SyntheticUniverse {
    fn resolve(&mut self, key: &RecordKey, now: Duration) -> Result<Resolution, UpstreamError> {
        self.queries += 1;
        let &(is_edge, idx) = self.by_name.get(&key.name).ok_or(UpstreamError::NxDomain)?;
        let entry = if is_edge { &self.edges[idx] } else { &self.records[idx] };
        let mut out = Resolution::default();
        let terminal = match &entry.content {
            Content::Alias { edge } => {
                let target = &self.edges[*edge];
                out.records.push((
                    ResourceRecord::new(entry.name.clone(), RecordAnswer::Cname(target.name.clone())),
                    self.config.alias_ttl,
                ));
                if key.rtype == RecordType::CNAME {
                    return Ok(out);
                }
                target
            }
            _ if key.rtype == RecordType::CNAME => return Err(UpstreamError::NoData),
            _ => entry,
        };
        let answer = self.answer(terminal, key.rtype, now).ok_or(UpstreamError::NoData)?;
        out.records.push((ResourceRecord::new(terminal.name.clone(), answer), terminal_ttl(&terminal.content)));
        Ok(out)
    }
}

/// The list a server holds once ranks `0..n` are the voted top set, after
/// one load-balancing detection window of re-queries.
pub fn top_list(universe: &mut SyntheticUniverse, n: usize, seed: u64) -> Result<PopularityList, MaintenanceError> {
    let n = n.min(universe.len());
    let mut m = Maintenance::new(MaintenanceConfig { n_popular: n, seed, ..MaintenanceConfig::default() })?;
    for rank in 0..n {
        // Strictly more votes towards the head keeps the top set at 0..n.
        for _ in 0..(n - rank).min(3) {
            m.record_vote(&universe.key(rank, RecordType::A));
        }
    }
    let start = 1_700_000_000;
    m.refresh(Duration::from_secs(start), universe)?;
    let mut t = start;
    while t <= start + m.config().lb_window_secs {
        t += m.config().min_ttl_secs;
        m.requery_due(Duration::from_secs(t), universe);
        m.flush(Duration::from_secs(t))?;
    }
    Ok(m.list().clone())
}
