use std::collections::{HashMap, HashSet};
use std::net::{Ipv4Addr, Ipv6Addr};
use std::time::Duration;

use thiserror::Error;

use crate::dns::{DomainName, RecordAnswer, RecordKey, RecordType, ResourceRecord};
use crate::list::MAX_CNAME_DEPTH;

/// Upstream answer: CNAME records in chain order, then the terminal answers,
/// each with its TTL in seconds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Resolution {
    pub records: Vec<(ResourceRecord, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpstreamError {
    #[error("name does not exist")]
    NxDomain,
    #[error("no records of the requested type")]
    NoData,
    #[error("upstream failure: {0}")]
    Failure(String),
}

/// Recursive resolution used by the server to fill and refresh the list.
pub trait Upstream {
    fn resolve(&mut self, key: &RecordKey, now: Duration) -> Result<Resolution, UpstreamError>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AuthorityEntry {
    Alias { target: DomainName, ttl: u32 },
    Addresses { a: Vec<Ipv4Addr>, aaaa: Vec<Ipv6Addr>, ttl: u32 },
}

/// Deterministic in-memory authority for tests. Entries can be changed
/// between calls; keys in `failing` return a transient failure.
#[derive(Clone, Debug, Default)]
pub struct MemoryAuthority {
    pub entries: HashMap<DomainName, AuthorityEntry>,
    pub failing: HashSet<RecordKey>,
    pub queries: u64,
}

impl MemoryAuthority {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, entry: AuthorityEntry) {
        self.entries.insert(name.parse().expect("valid name"), entry);
    }

    pub fn set_a(&mut self, name: &str, addrs: &[[u8; 4]], ttl: u32) {
        let a = addrs.iter().map(|&o| Ipv4Addr::from(o)).collect();
        self.set(name, AuthorityEntry::Addresses { a, aaaa: vec![], ttl });
    }

    pub fn set_alias(&mut self, name: &str, target: &str, ttl: u32) {
        self.set(name, AuthorityEntry::Alias { target: target.parse().expect("valid name"), ttl });
    }
}

impl Upstream for MemoryAuthority {
    fn resolve(&mut self, key: &RecordKey, _now: Duration) -> Result<Resolution, UpstreamError> {
        self.queries += 1;
        if self.failing.contains(key) {
            return Err(UpstreamError::Failure("injected".into()));
        }
        let mut out = Resolution::default();
        let mut name = key.name.clone();
        for _ in 0..=MAX_CNAME_DEPTH {
            match self.entries.get(&name) {
                None if out.records.is_empty() => return Err(UpstreamError::NxDomain),
                None => return Ok(out),
                Some(AuthorityEntry::Alias { target, ttl }) => {
                    out.records.push((ResourceRecord::new(name.clone(), RecordAnswer::Cname(target.clone())), *ttl));
                    if key.rtype == RecordType::CNAME {
                        return Ok(out);
                    }
                    name = target.clone();
                }
                Some(AuthorityEntry::Addresses { a, aaaa, ttl }) => {
                    let answers: Vec<RecordAnswer> = match key.rtype {
                        RecordType::A => a.iter().copied().map(RecordAnswer::A).collect(),
                        RecordType::AAAA => aaaa.iter().copied().map(RecordAnswer::Aaaa).collect(),
                        _ => vec![],
                    };
                    if answers.is_empty() && out.records.is_empty() {
                        return Err(UpstreamError::NoData);
                    }
                    out.records.extend(answers.into_iter().map(|a| (ResourceRecord::new(name.clone(), a), *ttl)));
                    return Ok(out);
                }
            }
        }
        Err(UpstreamError::Failure("CNAME chain too long".into()))
    }
}
