//! Client-side resolution: answering from the popularity list, fallback
//! modes and vote sampling.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns::{build_formerr, build_response, parse_query, DnsError, RecordKey, RecordType};
use crate::list::{LookupResult, PopularityList};
use crate::mixnet::payload::{fragment_record, RecordDigest, VotePayload};

/// External resolution path used on list misses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackMode {
    Plain,
    Doh,
    DnscryptRotating,
    AnonDnscryptRotating,
    Dohot,
    Simulated,
}

impl FallbackMode {
    pub const ALL: [FallbackMode; 6] =
        [Self::Plain, Self::Doh, Self::DnscryptRotating, Self::AnonDnscryptRotating, Self::Dohot, Self::Simulated];

    /// Relays between the client and the resolver in the exposure model.
    pub fn relay_count(self) -> u32 {
        match self {
            Self::AnonDnscryptRotating => 1,
            Self::Dohot => 3,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Doh => "doh",
            Self::DnscryptRotating => "dnscrypt-rotating",
            Self::AnonDnscryptRotating => "anon-dnscrypt-rotating",
            Self::Dohot => "dohot",
            Self::Simulated => "simulated",
        }
    }
}

impl fmt::Display for FallbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown fallback mode `{0}`")]
pub struct UnknownMode(String);

impl FromStr for FallbackMode {
    type Err = UnknownMode;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| UnknownMode(s.to_owned()))
    }
}

/// Outcome of trying to answer a query from the list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LocalAnswer {
    /// Answered from the list; no network traffic needed.
    Hit { key: RecordKey, response: Vec<u8> },
    /// Supported query absent from the list.
    Miss { key: RecordKey, id: u16 },
    /// Type or class the list never holds; forward unchanged.
    Forward,
    /// Unparseable query; answer with this FORMERR.
    Reject(Vec<u8>),
}

pub fn answer_locally(list: &PopularityList, query: &[u8], ttl: u32) -> LocalAnswer {
    match parse_query(query) {
        Ok((key, id)) => match list.lookup(&key) {
            LookupResult::Hit(records) => LocalAnswer::Hit { response: build_response(id, &key, &records, ttl), key },
            LookupResult::Miss => LocalAnswer::Miss { key, id },
        },
        Err(DnsError::UnsupportedType { .. }) => LocalAnswer::Forward,
        Err(_) => match crate::dns::wire::message_id(query) {
            Some(id) => LocalAnswer::Reject(build_formerr(id)),
            None => LocalAnswer::Reject(build_formerr(0)),
        },
    }
}

/// Vote candidates gathered during one voting window.
///
/// Each resolved query is buffered with probability `voting_rate`; a key
/// enters at most once per window. Hashed votes are remembered so their
/// cleartext can be supplied when the server asks.
#[derive(Clone, Debug)]
pub struct VoteBuffer {
    voting_rate: f64,
    rng: ChaCha20Rng,
    seen: HashSet<RecordKey>,
    candidates: Vec<RecordKey>,
    hashed: HashMap<RecordDigest, RecordKey>,
    cleartext_due: Vec<RecordKey>,
    offered: u64,
    sampled: u64,
}

impl VoteBuffer {
    pub fn new(voting_rate: f64, seed: u64) -> Self {
        Self {
            voting_rate: voting_rate.clamp(0.0, 1.0),
            rng: ChaCha20Rng::seed_from_u64(seed),
            seen: HashSet::new(),
            candidates: Vec::new(),
            hashed: HashMap::new(),
            cleartext_due: Vec::new(),
            offered: 0,
            sampled: 0,
        }
    }

    pub fn set_voting_rate(&mut self, rate: f64) {
        self.voting_rate = rate.clamp(0.0, 1.0);
    }

    /// Returns true when the key was sampled into the buffer.
    pub fn offer(&mut self, key: &RecordKey) -> bool {
        if !matches!(key.rtype, RecordType::A | RecordType::AAAA) {
            return false;
        }
        self.offered += 1;
        if !self.rng.random_bool(self.voting_rate) {
            return false;
        }
        self.sampled += 1;
        if self.seen.insert(key.clone()) {
            self.candidates.push(key.clone());
            return true;
        }
        false
    }

    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn sampled(&self) -> u64 {
        self.sampled
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Queues cleartext fragments for requested hashes this client voted for.
    pub fn request_cleartext(&mut self, digests: &[RecordDigest]) {
        for d in digests {
            if let Some(key) = self.hashed.get(d) {
                if !self.cleartext_due.contains(key) {
                    self.cleartext_due.push(key.clone());
                }
            }
        }
    }

    /// Empties the window into at most `quota` payloads (None: unlimited).
    /// Fragment sets go first and are never split across rounds; votes
    /// beyond the remaining room are sampled uniformly.
    pub fn take_round(&mut self, quota: Option<usize>) -> Vec<VotePayload> {
        let mut out = Vec::new();
        let limit = quota.unwrap_or(usize::MAX);
        let mut deferred = Vec::new();
        for key in std::mem::take(&mut self.cleartext_due) {
            match fragment_record(&key, &mut self.rng) {
                Ok(frags) if out.len() + frags.len() <= limit => {
                    out.extend(frags.into_iter().map(VotePayload::Fragment));
                }
                Ok(_) => deferred.push(key),
                Err(_) => {}
            }
        }
        self.cleartext_due = deferred;
        let room = limit - out.len();
        let mut votes = std::mem::take(&mut self.candidates);
        self.seen.clear();
        if votes.len() > room {
            votes = index::sample(&mut self.rng, votes.len(), room).into_iter().map(|i| votes[i].clone()).collect();
        }
        for key in votes {
            let payload = VotePayload::for_record(&key);
            if let VotePayload::Hashed(d) = &payload {
                self.hashed.insert(*d, key);
            }
            out.push(payload);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dns::{encode_query, parse_response, Rcode, ResourceRecord};
    use crate::list::ListRecord;
    use std::net::Ipv4Addr;

    fn key(s: &str) -> RecordKey {
        RecordKey::new(s.parse().unwrap(), RecordType::A)
    }

    #[test]
    fn hit_miss_forward_reject() {
        let list = PopularityList::build([ListRecord::inline(
            "a.test".parse().unwrap(),
            crate::dns::RecordAnswer::A(Ipv4Addr::new(1, 2, 3, 4)),
        )])
        .unwrap();
        let LocalAnswer::Hit { response, .. } = answer_locally(&list, &encode_query(9, &key("a.test")), 60) else {
            panic!()
        };
        let parsed = parse_response(&response).unwrap();
        assert_eq!((parsed.id, parsed.rcode), (9, Rcode::NoError));
        assert_eq!(parsed.answers[0].1, 60);
        assert_eq!(
            parsed.answers[0].0,
            ResourceRecord::new("a.test".parse().unwrap(), crate::dns::RecordAnswer::A(Ipv4Addr::new(1, 2, 3, 4)))
        );
        assert_eq!(
            answer_locally(&list, &encode_query(3, &key("b.test")), 60),
            LocalAnswer::Miss { key: key("b.test"), id: 3 }
        );
        let mx = encode_query(4, &RecordKey::new("a.test".parse().unwrap(), RecordType(15)));
        assert_eq!(answer_locally(&list, &mx, 60), LocalAnswer::Forward);
        assert!(matches!(answer_locally(&list, &[0, 7, 1], 60), LocalAnswer::Reject(_)));
    }

    #[test]
    fn sampling_rate_concentrates() {
        let mut buf = VoteBuffer::new(0.3, 11);
        let m = 10_000;
        for i in 0..m {
            buf.offer(&key(&format!("k{i}.test")));
        }
        let p = 0.3;
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        assert!((buf.sampled() as f64 - m as f64 * p).abs() < 3.0 * sigma, "{}", buf.sampled());
        assert_eq!(buf.len() as u64, buf.sampled());
    }

    #[test]
    fn keys_buffered_once_per_window() {
        let mut buf = VoteBuffer::new(1.0, 1);
        assert!(buf.offer(&key("a.test")));
        assert!(!buf.offer(&key("a.test")));
        assert_eq!(buf.take_round(Some(10)).len(), 1);
        assert!(buf.offer(&key("a.test")));
        assert!(!buf.offer(&RecordKey::new("a.test".parse().unwrap(), RecordType::CNAME)));
    }

    #[test]
    fn round_is_capped_and_cleartext_goes_first() {
        let mut buf = VoteBuffer::new(1.0, 2);
        let long = key(&format!("{}.{}.example.com", "l".repeat(30), "m".repeat(20)));
        buf.offer(&long);
        let first = buf.take_round(Some(10));
        let VotePayload::Hashed(d) = first[0] else { panic!("{first:?}") };
        for i in 0..15 {
            buf.offer(&key(&format!("k{i}.test")));
        }
        buf.request_cleartext(&[d]);
        let round = buf.take_round(Some(10));
        assert_eq!(round.len(), 10);
        let frags = round.iter().filter(|p| matches!(p, VotePayload::Fragment(_))).count();
        assert_eq!(frags, 3);
        assert!(buf.is_empty());
    }
}
