//! Sans-IO client side of a server session: list sync, vote submission,
//! shuffler duty and acknowledgment checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use super::{error_code, Hello, Message, Welcome};
use crate::dns::RecordKey;
use crate::list::{decode_membership, PopularityList};
use crate::mixnet::round::{directory_digest, select_shufflers};
use crate::mixnet::{client_submit, AckReport, ClientId, MixNode, RoundContext, Scalar, ShufflerNode, Submission};
use crate::resolver::VoteBuffer;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("server rejected the session: {0}")]
    Rejected(String),
    #[error("unexpected {0:?} from server")]
    Unexpected(super::FrameType),
    #[error("snapshot could not be decoded")]
    BadSnapshot,
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub voting_rate: f64,
    /// Shufflers assigned per round, mirroring the server setting.
    pub assigned_shufflers: Option<usize>,
    /// Real votes per round; the rest of the quota is dummies.
    pub max_votes: Option<usize>,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { voting_rate: 0.3, assigned_shufflers: None, max_votes: None, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SessionStats {
    pub snapshots: u64,
    pub updates_applied: u64,
    pub resyncs: u64,
    pub rounds: u64,
    pub rounds_shuffled: u64,
    pub acks_verified: u64,
    pub acks_failed: u64,
    pub acks_missing: u64,
    pub reports_sent: u64,
}

#[derive(Clone, Debug)]
struct ClientRound {
    ctx: RoundContext,
    submission: Option<Submission>,
    shuffling: bool,
    vote_hops: usize,
    ack_hops: usize,
}

pub struct ClientSession {
    id: ClientId,
    secret: Scalar,
    config: SessionConfig,
    rng: ChaCha20Rng,
    list: PopularityList,
    synced: bool,
    welcome: Option<Welcome>,
    node: Option<ShufflerNode>,
    votes: VoteBuffer,
    round: Option<ClientRound>,
    last_report: Option<AckReport>,
    stats: SessionStats,
}

impl ClientSession {
    pub fn new(id: ClientId, secret: Scalar, config: SessionConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let votes = VoteBuffer::new(config.voting_rate, rng.random());
        Self {
            id,
            secret,
            config,
            rng,
            list: PopularityList::new(),
            synced: false,
            welcome: None,
            node: None,
            votes,
            round: None,
            last_report: None,
            stats: SessionStats::default(),
        }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn hello(&self, now: u64) -> Message {
        Message::Hello(Hello::new(self.id, now, &self.secret))
    }

    pub fn list(&self) -> &PopularityList {
        &self.list
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    pub fn generation(&self) -> u64 {
        self.list.generation()
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn last_report(&self) -> Option<&AckReport> {
        self.last_report.as_ref()
    }

    pub fn shuffler_index(&self) -> Option<usize> {
        self.node.as_ref().map(MixNode::index)
    }

    pub fn votes(&self) -> &VoteBuffer {
        &self.votes
    }

    /// Offers a resolved query to the vote buffer.
    pub fn offer_vote(&mut self, key: &RecordKey) -> bool {
        self.votes.offer(key)
    }

    fn resync(&mut self) -> Vec<Message> {
        self.synced = false;
        self.stats.resyncs += 1;
        vec![Message::ListRequest]
    }

    pub fn handle(&mut self, message: Message) -> Result<Vec<Message>, SessionError> {
        match message {
            Message::Welcome(w) => {
                let me = self.secret.public();
                self.node = match w.directory.iter().position(|k| *k == me) {
                    Some(j) => Some(ShufflerNode::new(j, self.secret, self.rng.random())),
                    _ => None,
                };
                self.welcome = Some(w);
                Ok(vec![Message::ListRequest])
            }
            Message::ListSnapshot { generation, list } => {
                let mut list = PopularityList::deserialize(&list).map_err(|_| SessionError::BadSnapshot)?;
                list.set_generation(generation);
                self.list = list;
                self.synced = true;
                self.stats.snapshots += 1;
                Ok(vec![])
            }
            Message::LbUpdateBatch(updates) => {
                if !self.synced {
                    return Ok(vec![]);
                }
                let before = self.list.clone();
                for u in updates {
                    if self.list.apply_lb_update(u.entry as usize, i64::from(u.offset)).is_err() {
                        self.list = before;
                        return Ok(self.resync());
                    }
                }
                self.stats.updates_applied += 1;
                Ok(vec![])
            }
            Message::MembershipUpdate(body) => {
                if !self.synced {
                    return Ok(vec![]);
                }
                let applied = decode_membership(&self.list, &body)
                    .ok()
                    .is_some_and(|update| self.list.apply_membership_update(&update).is_ok());
                if !applied {
                    return Ok(self.resync());
                }
                self.stats.updates_applied += 1;
                Ok(vec![])
            }
            Message::RoundStart(ctx) => Ok(self.on_round_start(ctx)),
            Message::VoteBatch { packets, .. } => {
                let round = self.round.as_mut().ok_or(SessionError::Unexpected(super::FrameType::VoteBatch))?;
                let node = self.node.as_mut().filter(|_| round.shuffling);
                let Some(node) = node.filter(|_| round.vote_hops < usize::from(round.ctx.n_shuffle)) else {
                    return Err(SessionError::Unexpected(super::FrameType::VoteBatch));
                };
                round.vote_hops += 1;
                let out = node.process_votes(round.vote_hops, packets, &round.ctx);
                Ok(vec![Message::VoteBatch { packets: out, invalid: 0 }])
            }
            Message::AckBatch { packets, .. } => {
                let round = self.round.as_mut().ok_or(SessionError::Unexpected(super::FrameType::AckBatch))?;
                let n = usize::from(round.ctx.n_shuffle);
                if round.shuffling && round.ack_hops < n {
                    let node = self.node.as_mut().expect("shuffling implies a node");
                    let hop = n - round.ack_hops;
                    round.ack_hops += 1;
                    let out = node.process_acks(hop, packets, &round.ctx);
                    return Ok(vec![Message::AckBatch { packets: out, invalid: 0 }]);
                }
                let round = self.round.take().expect("checked");
                let Some(sub) = round.submission else { return Ok(vec![]) };
                let report = sub.verify(&packets);
                self.stats.acks_verified += report.verified as u64;
                self.stats.acks_failed += report.failed.len() as u64;
                self.stats.acks_missing += report.missing.len() as u64;
                let out: Vec<Message> = report.reports().cloned().map(Message::MisbehaviorReport).collect();
                self.stats.reports_sent += out.len() as u64;
                self.last_report = Some(report);
                Ok(out)
            }
            Message::HashRequest(digests) => {
                self.votes.request_cleartext(&digests);
                Ok(vec![])
            }
            Message::Error { code: error_code::AUTH, message } => Err(SessionError::Rejected(message)),
            Message::Error { .. } => Ok(vec![]),
            other => Err(SessionError::Unexpected(other.frame_type())),
        }
    }

    /// Always answers with exactly one VOTE_BATCH, empty when no valid
    /// submission can be built.
    fn on_round_start(&mut self, ctx: RoundContext) -> Vec<Message> {
        self.stats.rounds += 1;
        let Some(w) = &self.welcome else {
            return vec![Message::VoteBatch { packets: vec![], invalid: 0 }];
        };
        let digest = directory_digest(w.directory.iter().map(|k| *k.as_bytes()));
        let count = self.config.assigned_shufflers.unwrap_or(w.directory.len());
        let assigned = select_shufflers(ctx.t_timestamp, &digest, w.directory.len(), count);
        let valid = ctx.availability().len() == w.directory.len()
            && ctx.check_assignment(&assigned).is_ok()
            && ctx.n_shuffle == w.n_shuffle;
        let shuffling = self.node.as_ref().is_some_and(|n| ctx.is_active(n.index()));
        if shuffling {
            self.stats.rounds_shuffled += 1;
        }
        let submission = if valid {
            let quota = usize::from(w.quota);
            let real = self.config.max_votes.map_or(quota, |m| m.min(quota));
            let payloads = self.votes.take_round(Some(real));
            client_submit(&mut self.rng, &payloads, &ctx, quota, &w.directory, &w.server_key).ok()
        } else {
            None
        };
        let packets = submission.as_ref().map(|s| s.packets.clone()).unwrap_or_default();
        self.round = Some(ClientRound { ctx, submission, shuffling, vote_hops: 0, ack_hops: 0 });
        vec![Message::VoteBatch { packets, invalid: 0 }]
    }
}
