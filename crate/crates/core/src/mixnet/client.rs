use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::{CryptoRng, RngCore};

use super::crypto::{build_routed_plan, KeyElement, MixPayload, NextHopHash, SenderPathPlan, ELEMENT_LEN};
use super::packet::MixPacket;
use super::payload::VotePayload;
use super::round::{RoundContext, RoundError};

/// A submitted vote, kept by its sender until the acknowledgment arrives.
#[derive(Clone, Debug)]
pub struct SentVote {
    pub payload: VotePayload,
    pub d: MixPayload,
    pub plan: SenderPathPlan,
}

/// Nodes on the path of a vote whose acknowledgment failed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MisbehaviorReport {
    pub t_timestamp: u64,
    pub path: Vec<usize>,
}

impl MisbehaviorReport {
    /// t u64 || path length u8 || u24 shuffler indices.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.t_timestamp.to_be_bytes().to_vec();
        out.push(self.path.len() as u8);
        for &j in &self.path {
            out.extend_from_slice(&(j as u32).to_be_bytes()[1..]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let (t, rest) = bytes.split_first_chunk::<8>()?;
        let (&len, rest) = rest.split_first()?;
        if rest.len() != usize::from(len) * 3 {
            return None;
        }
        let path = rest.chunks_exact(3).map(|c| u32::from_be_bytes([0, c[0], c[1], c[2]]) as usize).collect();
        Some(Self { t_timestamp: u64::from_be_bytes(*t), path })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AckReport {
    pub verified: usize,
    pub failed: Vec<MisbehaviorReport>,
    pub missing: Vec<MisbehaviorReport>,
    pub unknown: usize,
}

impl AckReport {
    pub fn all_verified(&self) -> bool {
        self.failed.is_empty() && self.missing.is_empty()
    }

    pub fn reports(&self) -> impl Iterator<Item = &MisbehaviorReport> {
        self.failed.iter().chain(&self.missing)
    }
}

/// Exactly `quota` packets for one round: real payloads (uniformly sampled
/// down to the quota) padded with dummies, in random order.
#[derive(Clone, Debug)]
pub struct Submission {
    pub packets: Vec<MixPacket>,
    pub sent: Vec<SentVote>,
}

impl Submission {
    pub fn real_count(&self) -> usize {
        self.sent.iter().filter(|v| !v.payload.is_dummy()).count()
    }

    /// Matches returned acks to sent votes by their first-hop identifiers.
    pub fn verify(&self, acks: &[MixPacket]) -> AckReport {
        let mut pending: HashMap<([u8; ELEMENT_LEN], NextHopHash), &SentVote> =
            self.sent.iter().map(|v| ((*v.plan.first().p.as_bytes(), v.plan.first().h), v)).collect();
        let mut report = AckReport::default();
        for ack in acks {
            let Some(vote) = pending.remove(&ack.flow_id()) else {
                report.unknown += 1;
                continue;
            };
            if vote.plan.verify_ack(&vote.d, &ack.d) {
                report.verified += 1;
            } else {
                report.failed.push(path_report(&vote.plan));
            }
        }
        report.missing = pending.values().map(|v| path_report(&v.plan)).collect();
        report.missing.sort_by(|a, b| a.path.cmp(&b.path));
        report
    }
}

fn path_report(plan: &SenderPathPlan) -> MisbehaviorReport {
    MisbehaviorReport { t_timestamp: plan.t_timestamp, path: plan.node_path() }
}

pub fn client_submit<R: RngCore + CryptoRng>(
    rng: &mut R,
    real: &[VotePayload],
    ctx: &RoundContext,
    quota: usize,
    directory: &[KeyElement],
    server_key: &KeyElement,
) -> Result<Submission, RoundError> {
    ctx.check_runnable()?;
    let mut payloads: Vec<VotePayload> = if real.len() > quota {
        index::sample(rng, real.len(), quota).into_iter().map(|i| real[i].clone()).collect()
    } else {
        real.to_vec()
    };
    payloads.resize(quota, VotePayload::Dummy);
    payloads.shuffle(rng);
    let mut packets = Vec::with_capacity(quota);
    let mut sent = Vec::with_capacity(quota);
    for payload in payloads {
        let plan = build_routed_plan(rng, ctx.t_timestamp, ctx.n_shuffle.into(), server_key, |h| {
            let j = ctx.hash_to_node(h)?;
            directory.get(j).map(|k| (j, *k))
        })
        .map_err(|_| RoundError::Malformed("directory lacks a routed shuffler key"))?;
        let d = payload.encode(rng);
        packets.push(MixPacket { p: plan.first().p, h: plan.first().h, d: plan.wrap(&d) });
        sent.push(SentVote { payload, d, plan });
    }
    Ok(Submission { packets, sent })
}
