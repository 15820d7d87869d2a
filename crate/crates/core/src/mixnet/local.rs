//! In-process round driver: server, shufflers and senders exchanging
//! encoded batches, with optional fault injection at the shufflers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::client::{client_submit, AckReport, Submission};
use super::crypto::{KeyElement, MixPayload, NextHopHash, Scalar};
use super::node::{MixNode, ShufflerNode};
use super::packet::{decode_batch, encode_batch, MixPacket, PACKET_LEN};
use super::payload::VotePayload;
use super::round::{RoundContext, RoundError};
use super::server::{ClientId, Discrepancy, ServerRound, ServerRoundStats};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Replaces the payload of `count` outgoing votes at `hop`.
    ReplacePayload {
        hop: usize,
        count: usize,
    },
    DropVotes {
        hop: usize,
        count: usize,
    },
    /// Drops `count` acknowledgments the node should return at `hop`.
    DropAcks {
        hop: usize,
        count: usize,
    },
}

/// A shuffler that misbehaves per `fault`. `victims` lists the inbound h of
/// each vote it harmed, which identifies the hop on the sender's plan.
#[derive(Clone, Debug)]
pub struct FaultyNode {
    inner: ShufflerNode,
    pub fault: Fault,
    pub victims: Vec<(usize, NextHopHash)>,
    rng: ChaCha20Rng,
}

impl FaultyNode {
    pub fn new(inner: ShufflerNode, seed: u64) -> Self {
        Self { inner, fault: Fault::None, victims: Vec::new(), rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn inner(&self) -> &ShufflerNode {
        &self.inner
    }
}

impl MixNode for FaultyNode {
    fn index(&self) -> usize {
        self.inner.index()
    }

    fn process_votes(&mut self, hop: usize, batch: Vec<MixPacket>, ctx: &RoundContext) -> Vec<MixPacket> {
        let t = ctx.t_timestamp;
        let (harm, drop) = match self.fault {
            Fault::ReplacePayload { hop: h, count } if h == hop => (count, false),
            Fault::DropVotes { hop: h, count } if h == hop => (count, true),
            _ => return self.inner.process_votes(hop, batch, ctx),
        };
        let targets: Vec<MixPacket> = batch.iter().take(harm).copied().collect();
        let mut out = self.inner.process_votes(hop, batch, ctx);
        for target in targets {
            let (next, _) = self.inner.transform(&target, t).expect("valid");
            let pos = out.iter().position(|p| *p == next).expect("transformed");
            if drop {
                out.remove(pos);
            } else {
                out[pos].d = MixPayload::random(&mut self.rng);
            }
            self.victims.push((hop, target.h));
        }
        out
    }

    fn process_acks(&mut self, hop: usize, batch: Vec<MixPacket>, ctx: &RoundContext) -> Vec<MixPacket> {
        let mut out = self.inner.process_acks(hop, batch, ctx);
        if let Fault::DropAcks { hop: h, count } = self.fault {
            if h == hop {
                out.shuffle(&mut self.rng);
                for ack in out.drain(..count.min(out.len())) {
                    self.victims.push((hop, ack.h));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WireStats {
    pub batches: usize,
    pub packets: usize,
    pub bytes: usize,
    /// Every batch was exactly 2 + 80 * count bytes.
    pub fixed_size: bool,
}

impl WireStats {
    fn carry(&mut self, packets: &[MixPacket]) -> Vec<MixPacket> {
        let bytes = encode_batch(packets).expect("batch fits");
        self.batches += 1;
        self.packets += packets.len();
        self.bytes += bytes.len();
        self.fixed_size &= bytes.len() == 2 + PACKET_LEN * packets.len();
        let (decoded, invalid) = decode_batch(&bytes).expect("own encoding");
        assert_eq!(invalid, 0);
        decoded
    }
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub submissions: Vec<Submission>,
    pub tally: Vec<MixPayload>,
    pub reports: Vec<AckReport>,
    pub discrepancies: Vec<Discrepancy>,
    pub server: ServerRoundStats,
    pub wire: WireStats,
}

/// Server key, shufflers and a client population in one process.
#[derive(Clone, Debug)]
pub struct LocalNetwork {
    pub server_secret: Scalar,
    pub nodes: Vec<FaultyNode>,
    pub n_shuffle: u8,
    pub quota: usize,
    rng: ChaCha20Rng,
}

impl LocalNetwork {
    pub fn new(seed: u64, shufflers: usize, n_shuffle: u8, quota: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let server_secret = Scalar::random(&mut rng);
        let nodes = (0..shufflers)
            .map(|j| {
                let node = ShufflerNode::new(j, Scalar::random(&mut rng), seed ^ (j as u64 + 1) << 20);
                FaultyNode::new(node, seed.wrapping_add(j as u64))
            })
            .collect();
        Self { server_secret, nodes, n_shuffle, quota, rng }
    }

    pub fn directory(&self) -> Vec<KeyElement> {
        self.nodes.iter().map(|n| n.inner.public()).collect()
    }

    pub fn clear_faults(&mut self) {
        for n in &mut self.nodes {
            n.fault = Fault::None;
            n.victims.clear();
        }
    }

    /// Runs one full round. Client i submits `votes[i]`; `extra` packets are
    /// injected verbatim after the honest submissions.
    pub fn run(
        &mut self,
        t: u64,
        votes: &[Vec<VotePayload>],
        extra: Vec<(ClientId, Vec<MixPacket>)>,
    ) -> Result<RoundOutcome, RoundError> {
        let ctx = RoundContext::new(t, self.n_shuffle, vec![true; self.nodes.len()]);
        let directory = self.directory();
        let server_key = self.server_secret.public();
        let mut server = ServerRound::new(ctx.clone(), self.quota, self.server_secret)?;
        let mut wire = WireStats { fixed_size: true, ..WireStats::default() };
        let mut submissions = Vec::with_capacity(votes.len());
        for (c, real) in votes.iter().enumerate() {
            let sub = client_submit(&mut self.rng, real, &ctx, self.quota, &directory, &server_key)?;
            server.submit(c as ClientId, wire.carry(&sub.packets))?;
            submissions.push(sub);
        }
        for (c, packets) in extra {
            server.submit(c, wire.carry(&packets))?;
        }
        let mut batches = server.begin_vote_hop()?;
        for hop in 1..=ctx.n_shuffle as usize {
            for (j, batch) in batches {
                let out = self.nodes[j].process_votes(hop, wire.carry(&batch), &ctx);
                server.receive_votes(j, wire.carry(&out))?;
            }
            batches = server.end_vote_hop()?;
        }
        let tally = server.tally();
        let mut batches = server.begin_ack_hop()?;
        for hop in (1..=ctx.n_shuffle as usize).rev() {
            for (j, batch) in batches {
                let out = self.nodes[j].process_acks(hop, wire.carry(&batch), &ctx);
                server.receive_acks(j, wire.carry(&out))?;
            }
            batches = server.end_ack_hop()?;
        }
        debug_assert!(server.is_done());
        let mut acks = server.take_client_acks();
        let reports = submissions
            .iter()
            .enumerate()
            .map(|(c, sub)| {
                let mine = acks.remove(&(c as ClientId)).unwrap_or_default();
                sub.verify(&wire.carry(&mine))
            })
            .collect();
        Ok(RoundOutcome {
            submissions,
            tally,
            reports,
            discrepancies: server.discrepancies().to_vec(),
            server: server.stats(),
            wire,
        })
    }

    /// Senders (client index) whose vote passed node j's hop with inbound h.
    pub fn victims(&self, outcome: &RoundOutcome) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for node in &self.nodes {
            for (hop, h) in &node.victims {
                for (c, sub) in outcome.submissions.iter().enumerate() {
                    if sub.sent.iter().any(|v| v.plan.hops[hop - 1].h == *h) {
                        *out.entry(c).or_default() += 1;
                    }
                }
            }
        }
        out
    }
}
