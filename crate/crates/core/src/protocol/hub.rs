//! Sans-IO server engine. Transport code feeds it connection events and
//! carries out the returned actions; every state change happens here.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{error_code, ClientRegistry, Message, Welcome};
use crate::maintenance::{Maintenance, MaintenanceConfig, MaintenanceError, MaintenanceStats, UpdateMessage, Upstream};
use crate::mixnet::round::select_shufflers;
use crate::mixnet::{
    tally_payloads, ClientId, MisbehaviorTracker, MixPacket, RecordBook, RoundContext, Scalar, ServerRound,
    ServerRoundStats,
};

pub type ConnId = u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HubConfig {
    pub maintenance: MaintenanceConfig,
    pub n_shuffle: u8,
    pub quota: u16,
    /// Shufflers assigned per round; `None` assigns every registered one.
    pub assigned_shufflers: Option<usize>,
    pub hello_skew_secs: u64,
    pub straggler_timeout_secs: u64,
    pub report_threshold: usize,
    /// Report correlation window, in voting rounds.
    pub report_window_rounds: u64,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            maintenance: MaintenanceConfig::default(),
            n_shuffle: crate::mixnet::DEFAULT_N_SHUFFLE,
            quota: 10,
            assigned_shufflers: None,
            hello_skew_secs: 300,
            straggler_timeout_secs: 10,
            report_threshold: crate::mixnet::misbehavior::DEFAULT_REPORT_THRESHOLD,
            report_window_rounds: crate::mixnet::misbehavior::DEFAULT_REPORT_WINDOW,
        }
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    /// One encoded frame fanned out to every listed connection.
    Send {
        to: Vec<ConnId>,
        message: Message,
    },
    Close {
        conn: ConnId,
        reason: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HubStats {
    pub sessions_opened: u64,
    pub auth_failures: u64,
    pub protocol_violations: u64,
    pub snapshots_sent: u64,
    pub rounds_completed: u64,
    pub rounds_skipped: u64,
    pub votes_tallied: u64,
    pub reports: u64,
    pub maintenance_errors: u64,
}

/// Summary of a finished mixnet round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundSummary {
    pub t_timestamp: u64,
    pub submitters: usize,
    pub tallied_votes: usize,
    pub dummies: usize,
    pub discrepancies: usize,
    pub server: ServerRoundStats,
}

#[derive(Clone, Debug, Default)]
struct Conn {
    client: Option<ClientId>,
    synced: bool,
    generation: u64,
    submitted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Collecting,
    Votes,
    Acks,
}

struct ActiveRound {
    server: ServerRound,
    stage: Stage,
    deadline: u64,
    expected: BTreeSet<ClientId>,
}

pub struct ServerHub {
    config: HubConfig,
    registry: ClientRegistry,
    secret: Scalar,
    maintenance: Maintenance,
    upstream: Box<dyn Upstream + Send>,
    conns: BTreeMap<ConnId, Conn>,
    by_client: HashMap<ClientId, ConnId>,
    round: Option<ActiveRound>,
    last_t: u64,
    next_round_at: Option<u64>,
    book: RecordBook,
    tracker: MisbehaviorTracker,
    history: Vec<RoundSummary>,
    stats: HubStats,
    last_error: Option<String>,
}

impl ServerHub {
    pub fn new(
        config: HubConfig,
        registry: ClientRegistry,
        secret: Scalar,
        upstream: Box<dyn Upstream + Send>,
    ) -> Result<Self, MaintenanceError> {
        let maintenance = Maintenance::new(config.maintenance.clone())?;
        let window = config.report_window_rounds.saturating_mul(config.maintenance.t_refresh_secs);
        Ok(Self {
            tracker: MisbehaviorTracker::new(config.report_threshold, window),
            config,
            registry,
            secret,
            maintenance,
            upstream,
            conns: BTreeMap::new(),
            by_client: HashMap::new(),
            round: None,
            last_t: 0,
            next_round_at: None,
            book: RecordBook::default(),
            history: Vec::new(),
            stats: HubStats::default(),
            last_error: None,
        })
    }

    pub fn maintenance(&self) -> &Maintenance {
        &self.maintenance
    }

    pub fn maintenance_stats(&self) -> MaintenanceStats {
        self.maintenance.stats()
    }

    pub fn stats(&self) -> &HubStats {
        &self.stats
    }

    pub fn history(&self) -> &[RoundSummary] {
        &self.history
    }

    pub fn flagged_shufflers(&self) -> Vec<usize> {
        self.tracker.flagged(self.last_t)
    }

    pub fn round_in_progress(&self) -> bool {
        self.round.is_some()
    }

    pub fn session_count(&self) -> usize {
        self.by_client.len()
    }

    /// Generation last sent to each synced client.
    pub fn client_generations(&self) -> BTreeMap<ClientId, u64> {
        self.conns.values().filter(|c| c.synced).filter_map(|c| Some((c.client?, c.generation))).collect()
    }

    pub fn welcome(&self) -> Welcome {
        Welcome {
            server_key: self.secret.public(),
            quota: self.config.quota,
            n_shuffle: self.config.n_shuffle,
            directory: self.registry.directory(),
        }
    }

    pub fn connect(&mut self, conn: ConnId) {
        self.conns.insert(conn, Conn::default());
    }

    pub fn disconnect(&mut self, conn: ConnId, now: u64) -> Vec<Action> {
        if let Some(Conn { client: Some(id), .. }) = self.conns.remove(&conn) {
            if self.by_client.get(&id) == Some(&conn) {
                self.by_client.remove(&id);
            }
        }
        let mut out = Vec::new();
        self.progress(now, &mut out);
        out
    }

    fn authenticated(&self) -> Vec<ConnId> {
        self.conns.iter().filter(|(_, c)| c.client.is_some()).map(|(&id, _)| id).collect()
    }

    fn synced(&self) -> Vec<ConnId> {
        self.conns.iter().filter(|(_, c)| c.synced).map(|(&id, _)| id).collect()
    }

    fn violation(&mut self, conn: ConnId, code: u8, reason: &str, out: &mut Vec<Action>) {
        if code == error_code::AUTH {
            self.stats.auth_failures += 1;
        } else {
            self.stats.protocol_violations += 1;
        }
        out.push(Action::Send { to: vec![conn], message: Message::Error { code, message: reason.to_owned() } });
        out.push(Action::Close { conn, reason: reason.to_owned() });
        if let Some(Conn { client: Some(id), .. }) = self.conns.remove(&conn) {
            self.by_client.remove(&id);
        }
    }

    pub fn handle(&mut self, conn: ConnId, message: Message, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(state) = self.conns.get(&conn) else { return out };
        let Some(client) = state.client else {
            match message {
                Message::Hello(hello) => {
                    let ok = self
                        .registry
                        .get(hello.client)
                        .is_some_and(|r| hello.verify(&r.key, now, self.config.hello_skew_secs));
                    if !ok {
                        self.violation(conn, error_code::AUTH, "authentication failed", &mut out);
                        return out;
                    }
                    if let Some(old) = self.by_client.insert(hello.client, conn) {
                        self.conns.remove(&old);
                        out.push(Action::Close { conn: old, reason: "superseded by a newer session".into() });
                    }
                    let c = self.conns.get_mut(&conn).expect("present");
                    c.client = Some(hello.client);
                    // A session opened mid-round sits that round out.
                    c.submitted = self.round.is_some();
                    self.stats.sessions_opened += 1;
                    out.push(Action::Send { to: vec![conn], message: Message::Welcome(self.welcome()) });
                }
                _ => self.violation(conn, error_code::AUTH, "not authenticated", &mut out),
            }
            return out;
        };
        match message {
            Message::ListRequest => {
                let list = self.maintenance.list();
                let snapshot = Message::ListSnapshot { generation: list.generation(), list: list.serialize(true) };
                let c = self.conns.get_mut(&conn).expect("present");
                c.synced = true;
                c.generation = list.generation();
                self.stats.snapshots_sent += 1;
                out.push(Action::Send { to: vec![conn], message: snapshot });
            }
            Message::VoteBatch { packets, .. } => self.on_votes(conn, client, packets, now, &mut out),
            Message::AckBatch { packets, .. } => self.on_acks(client, packets, now, &mut out),
            Message::MisbehaviorReport(report) => {
                if self.tracker.record(client, &report, self.last_t) {
                    self.stats.reports += 1;
                }
            }
            Message::Hello(_) => self.violation(conn, error_code::PROTOCOL, "repeated hello", &mut out),
            Message::Error { .. } => {}
            _ => self.violation(conn, error_code::PROTOCOL, "unexpected message from client", &mut out),
        }
        out
    }

    /// The first VOTE_BATCH of a round from a session is its submission;
    /// later ones are shuffler output for the hop in progress.
    fn on_votes(&mut self, conn: ConnId, client: ClientId, packets: Vec<MixPacket>, now: u64, out: &mut Vec<Action>) {
        let Some(round) = self.round.as_mut() else { return };
        let c = self.conns.get_mut(&conn).expect("present");
        if !c.submitted {
            c.submitted = true;
            if round.stage == Stage::Collecting {
                // Quota is enforced inside the round across all submissions.
                let _ = round.server.submit(client, packets);
                round.expected.remove(&client);
            }
        } else if round.stage == Stage::Votes {
            if let Some(j) = self.registry.shuffler_index(client) {
                let _ = round.server.receive_votes(j, packets);
            }
        }
        self.progress(now, out);
    }

    fn on_acks(&mut self, client: ClientId, packets: Vec<MixPacket>, now: u64, out: &mut Vec<Action>) {
        let Some(round) = self.round.as_mut() else { return };
        if round.stage == Stage::Acks {
            if let Some(j) = self.registry.shuffler_index(client) {
                let _ = round.server.receive_acks(j, packets);
            }
        }
        self.progress(now, out);
    }

    /// Starts rounds on schedule, re-queries due records, publishes updates
    /// and expires stragglers.
    pub fn tick(&mut self, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        let at = Duration::from_secs(now);
        self.maintenance.requery_due(at, self.upstream.as_mut());
        match self.maintenance.flush(at) {
            Ok(msgs) => self.broadcast_updates(msgs, &mut out),
            Err(e) => self.maintenance_error(e),
        }
        let due = *self.next_round_at.get_or_insert(now);
        if self.round.is_none() && now >= due {
            self.next_round_at = Some(due + self.config.maintenance.t_refresh_secs);
            self.start_round(now, &mut out);
        }
        if let Some(round) = &self.round {
            if now >= round.deadline {
                self.advance(now, &mut out);
            }
        }
        out
    }

    /// Opens a round immediately, outside the schedule.
    pub fn force_round(&mut self, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        if self.round.is_none() {
            self.start_round(now, &mut out);
        }
        out
    }

    /// Applies pending re-query results right away, ignoring the timer.
    pub fn refresh_now(&mut self, now: u64) -> Vec<Action> {
        let mut out = Vec::new();
        match self.maintenance.refresh(Duration::from_secs(now), self.upstream.as_mut()) {
            Ok(msgs) => self.broadcast_updates(msgs, &mut out),
            Err(e) => self.maintenance_error(e),
        }
        out
    }

    fn maintenance_error(&mut self, e: MaintenanceError) {
        self.stats.maintenance_errors += 1;
        self.last_error = Some(e.to_string());
    }

    pub fn last_error(&self) -> Option<&str> {
        self.last_error.as_deref()
    }

    fn broadcast_updates(&mut self, msgs: Vec<UpdateMessage>, out: &mut Vec<Action>) {
        if msgs.is_empty() {
            return;
        }
        let generation = self.maintenance.list().generation();
        let to = self.synced();
        for id in &to {
            self.conns.get_mut(id).expect("present").generation = generation;
        }
        for m in msgs {
            let message = match m {
                UpdateMessage::Membership { body, .. } => Message::MembershipUpdate(body),
                UpdateMessage::LbBatch { updates, .. } => Message::LbUpdateBatch(updates),
            };
            out.push(Action::Send { to: to.clone(), message });
        }
    }

    fn start_round(&mut self, now: u64, out: &mut Vec<Action>) {
        let t = now.max(self.last_t + 1);
        self.last_t = t;
        let shufflers = self.registry.shufflers();
        let count = self.config.assigned_shufflers.unwrap_or(shufflers.len());
        let assigned = select_shufflers(t, &self.registry.digest(), shufflers.len(), count);
        let availability: Vec<bool> = (0..shufflers.len())
            .map(|j| assigned.binary_search(&j).is_ok() && self.by_client.contains_key(&shufflers[j]))
            .collect();
        let ctx = RoundContext::new(t, self.config.n_shuffle, availability);
        let server = match ServerRound::new(ctx.clone(), self.config.quota.into(), self.secret) {
            Ok(s) => s,
            Err(_) => {
                self.stats.rounds_skipped += 1;
                self.close_voting_window(now, out);
                return;
            }
        };
        let to = self.authenticated();
        let mut expected = BTreeSet::new();
        for id in &to {
            let c = self.conns.get_mut(id).expect("present");
            c.submitted = false;
            expected.insert(c.client.expect("authenticated"));
        }
        self.round = Some(ActiveRound {
            server,
            stage: Stage::Collecting,
            deadline: now + self.config.straggler_timeout_secs,
            expected,
        });
        out.push(Action::Send { to, message: Message::RoundStart(ctx) });
        self.progress(now, out);
    }

    /// Advances while the stage in progress has nothing left to wait for.
    fn progress(&mut self, now: u64, out: &mut Vec<Action>) {
        while let Some(round) = &self.round {
            let waiting = match round.stage {
                Stage::Collecting => round.expected.iter().any(|c| self.by_client.contains_key(c)),
                Stage::Votes | Stage::Acks => {
                    round.server.awaiting().iter().any(|&j| self.by_client.contains_key(&self.registry.shufflers()[j]))
                }
            };
            if waiting {
                return;
            }
            self.advance(now, out);
        }
    }

    fn send_batches(&mut self, batches: BTreeMap<usize, Vec<MixPacket>>, votes: bool, out: &mut Vec<Action>) {
        for (j, packets) in batches {
            let Some(&conn) = self.by_client.get(&self.registry.shufflers()[j]) else { continue };
            let message = if votes {
                Message::VoteBatch { packets, invalid: 0 }
            } else {
                Message::AckBatch { packets, invalid: 0 }
            };
            out.push(Action::Send { to: vec![conn], message });
        }
    }

    /// Closes the current stage, stragglers counting as silent.
    fn advance(&mut self, now: u64, out: &mut Vec<Action>) {
        let Some(mut round) = self.round.take() else { return };
        let deadline = now + self.config.straggler_timeout_secs;
        let step = match round.stage {
            Stage::Collecting => round.server.begin_vote_hop(),
            Stage::Votes => round.server.end_vote_hop(),
            Stage::Acks => round.server.end_ack_hop(),
        };
        let batches = step.expect("stage matches the round phase");
        round.deadline = deadline;
        match round.stage {
            Stage::Collecting | Stage::Votes if !round.server.is_tallied() => {
                round.stage = Stage::Votes;
                self.send_batches(batches, true, out);
            }
            Stage::Collecting | Stage::Votes => {
                self.on_tallied(&round.server, now, out);
                let batches = round.server.begin_ack_hop().expect("tallied");
                round.stage = Stage::Acks;
                self.send_batches(batches, false, out);
            }
            Stage::Acks => self.send_batches(batches, false, out),
        }
        if round.server.is_done() {
            self.finish(round, out);
        } else {
            self.round = Some(round);
        }
    }

    fn on_tallied(&mut self, server: &ServerRound, now: u64, out: &mut Vec<Action>) {
        let outcome = tally_payloads(&server.tally(), &mut self.book);
        for key in &outcome.votes {
            self.maintenance.record_vote(key);
        }
        self.stats.votes_tallied += outcome.votes.len() as u64;
        self.history.push(RoundSummary {
            t_timestamp: server.context().t_timestamp,
            submitters: server.submitters().count(),
            tallied_votes: outcome.votes.len(),
            dummies: outcome.dummies,
            discrepancies: 0,
            server: ServerRoundStats::default(),
        });
        self.close_voting_window(now, out);
    }

    fn close_voting_window(&mut self, now: u64, out: &mut Vec<Action>) {
        out.extend(self.refresh_now(now));
        let unresolved: Vec<_> = self.book.unresolved().copied().collect();
        if !unresolved.is_empty() {
            let to = self.authenticated();
            for chunk in unresolved.chunks(usize::from(u16::MAX)) {
                out.push(Action::Send { to: to.clone(), message: Message::HashRequest(chunk.to_vec()) });
            }
        }
    }

    fn finish(&mut self, mut round: ActiveRound, out: &mut Vec<Action>) {
        let mut acks = round.server.take_client_acks();
        let submitters: Vec<ClientId> = round.server.submitters().map(|(c, _)| c).collect();
        for client in submitters {
            let Some(&conn) = self.by_client.get(&client) else { continue };
            let packets = acks.remove(&client).unwrap_or_default();
            out.push(Action::Send { to: vec![conn], message: Message::AckBatch { packets, invalid: 0 } });
        }
        if let Some(last) = self.history.last_mut() {
            last.discrepancies = round.server.discrepancies().len();
            last.server = round.server.stats();
        }
        self.stats.rounds_completed += 1;
    }
}
