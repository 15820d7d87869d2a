//! Hourly byte accounting for clients, shufflers and the server.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::hit_ratio::{HitRatioConfig, HourStats, Replay};
use super::trace::QueryTrace;
use crate::dns::{RecordAnswer, RecordType};
use crate::list::PopularityList;
use crate::maintenance::{MaintenanceError, Upstream};
use crate::mixnet::{RoundContext, PACKET_LEN};
use crate::protocol::FRAME_HEADER_LEN;
use crate::resolver::FallbackMode;

const FRAME_OVERHEAD: u64 = FRAME_HEADER_LEN as u64 + 1;
/// Packet count prefix of a batch body.
const BATCH_PREFIX: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandwidthConfig {
    pub replay: HitRatioConfig,
    /// Defaults to the clients present in the trace.
    pub clients: Option<usize>,
    pub shufflers: usize,
    pub quota: u16,
    pub n_shuffle: u8,
    pub mode: FallbackMode,
    /// Bytes sent plus received per fallback lookup.
    pub fallback_bytes: BTreeMap<FallbackMode, u64>,
    /// Bytes sent plus received per upstream re-query by the server.
    pub upstream_query_bytes: u64,
    pub hours: Option<u64>,
    /// Also price each hour's list changes under full-tuple mirroring.
    pub baseline: bool,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        let fallback_bytes = [
            (FallbackMode::Plain, 130),
            (FallbackMode::Doh, 450),
            (FallbackMode::DnscryptRotating, 600),
            (FallbackMode::AnonDnscryptRotating, 700),
            (FallbackMode::Dohot, 3100),
            (FallbackMode::Simulated, 130),
        ]
        .into_iter()
        .collect();
        Self {
            replay: HitRatioConfig::default(),
            clients: None,
            shufflers: 30,
            quota: 10,
            n_shuffle: 10,
            mode: FallbackMode::Dohot,
            fallback_bytes,
            upstream_query_bytes: 130,
            hours: None,
            baseline: false,
        }
    }
}

/// Bytes in one hour. Client and shuffler figures are per party.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct BandwidthHour {
    pub hour: u64,
    pub round_start_bytes: u64,
    pub lb_bytes: u64,
    pub membership_bytes: u64,
    /// Received by each client: round start plus list updates.
    pub client_broadcast_bytes: u64,
    /// Vote batch sent plus acknowledgment batch received.
    pub client_round_bytes: u64,
    /// Mean fallback bytes per client.
    pub client_fallback_bytes: f64,
    pub client_total_bytes: f64,
    /// Extra hop traffic carried by each shuffler.
    pub shuffler_extra_bytes: f64,
    pub server_sent_bytes: f64,
    pub server_received_bytes: f64,
    pub server_upstream_bytes: u64,
    /// Framed snapshot a client joining after this hour would download.
    pub snapshot_bytes: u64,
    pub lb_messages: u64,
    pub lb_entries: u64,
    pub baseline_changes: u64,
    pub baseline_bytes: u64,
}

fn batch_frame(packets: f64) -> f64 {
    (FRAME_OVERHEAD + BATCH_PREFIX) as f64 + packets * PACKET_LEN as f64
}

impl BandwidthConfig {
    fn round_start_bytes(&self) -> u64 {
        let ctx = RoundContext::new(0, self.n_shuffle, vec![true; self.shufflers]);
        FRAME_OVERHEAD + ctx.to_bytes().len() as u64
    }

    /// Converts replay statistics to bytes; `clients` parties are online.
    pub fn account(&self, s: &HourStats, clients: usize) -> BandwidthHour {
        let c = clients as f64;
        let round_start = self.round_start_bytes();
        let broadcast = round_start + s.lb_bytes + s.membership_bytes;
        let own = batch_frame(f64::from(self.quota));
        let client_round = 2.0 * own;
        let misses = (s.queries - s.hits) as f64;
        let per_lookup = self.fallback_bytes.get(&self.mode).copied().unwrap_or(0) as f64;
        let fallback = if clients == 0 { 0.0 } else { misses * per_lookup / c };
        let total_packets = c * f64::from(self.quota);
        let shufflers = self.shufflers.min(clients);
        let hops = 2.0 * f64::from(self.n_shuffle);
        // Each hop a shuffler receives and returns its share of all packets.
        let hop_batch = if shufflers == 0 { 0.0 } else { batch_frame(total_packets / shufflers as f64) };
        let shuffler_extra = if shufflers == 0 { 0.0 } else { 2.0 * hops * hop_batch };
        let relay = hops * shufflers as f64 * hop_batch;
        BandwidthHour {
            hour: s.hour,
            round_start_bytes: round_start,
            lb_bytes: s.lb_bytes,
            membership_bytes: s.membership_bytes,
            client_broadcast_bytes: broadcast,
            client_round_bytes: client_round as u64,
            client_fallback_bytes: fallback,
            client_total_bytes: broadcast as f64 + client_round + fallback,
            shuffler_extra_bytes: shuffler_extra,
            server_sent_bytes: c * (broadcast as f64 + own) + relay,
            server_received_bytes: c * own + relay,
            server_upstream_bytes: s.upstream_queries * self.upstream_query_bytes,
            snapshot_bytes: 0,
            lb_messages: s.lb_messages,
            lb_entries: s.lb_entries,
            baseline_changes: 0,
            baseline_bytes: 0,
        }
    }
}

/// Changes seen and bytes sent by a server that mirrors every address
/// record of `list` at its native TTL and sends each changed answer set as
/// its own framed (domain, type, answers) tuple.
pub fn lb_baseline(list: &PopularityList, upstream: &mut dyn Upstream, from: u64, to: u64) -> (u64, u64) {
    let (mut changes, mut bytes) = (0, 0);
    for rec in list.records() {
        if rec.key.rtype == RecordType::CNAME {
            continue;
        }
        let mut previous: Option<Vec<RecordAnswer>> = None;
        let mut t = from;
        while t < to {
            let Ok(res) = upstream.resolve(&rec.key, Duration::from_secs(t)) else { break };
            let mut answers: Vec<RecordAnswer> = res
                .records
                .iter()
                .filter(|(rr, _)| rr.name == rec.key.name && rr.answer.rtype() == rec.key.rtype)
                .map(|(rr, _)| rr.answer.clone())
                .collect();
            let ttl = res.records.iter().map(|(_, ttl)| *ttl).min().unwrap_or(0).max(1);
            answers.sort();
            if previous.as_ref().is_some_and(|p| *p != answers) {
                changes += 1;
                let data: usize = answers.iter().map(|a| 2 + a.content_bytes().len()).sum();
                bytes += FRAME_OVERHEAD + (rec.key.name.wire_len() + 2 + data) as u64;
            }
            previous = Some(answers);
            t += u64::from(ttl);
        }
    }
    (changes, bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub clients: usize,
    pub hours: Vec<BandwidthHour>,
}

/// Replays the trace with TTL re-queries on and prices every hour.
pub fn run_bandwidth(
    trace: &QueryTrace,
    config: &BandwidthConfig,
    upstream: &mut dyn Upstream,
) -> Result<BandwidthReport, MaintenanceError> {
    let clients = config.clients.unwrap_or_else(|| trace.clients());
    let mut replay = Replay::new(trace, &config.replay, config.hours)?.with_requery();
    let mut hours = Vec::new();
    loop {
        let hour = hours.len() as u64;
        let baseline = if config.baseline {
            let list = replay.maintenance().list().clone();
            Some(lb_baseline(&list, upstream, replay.period_start(hour), replay.period_start(hour + 1)))
        } else {
            None
        };
        let Some(stats) = replay.step(upstream)? else { break };
        let mut row = config.account(&stats, clients);
        row.snapshot_bytes = FRAME_OVERHEAD + 8 + replay.maintenance().list().serialize(true).len() as u64;
        if let Some((changes, bytes)) = baseline {
            row.baseline_changes = changes;
            row.baseline_bytes = bytes;
        }
        hours.push(row);
    }
    Ok(BandwidthReport { clients, hours })
}
