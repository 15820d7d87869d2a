use std::collections::{BTreeMap, HashMap, HashSet};

use super::crypto::{ack_tag, apply_layer, derive_shared, peel, LayerRole, MixPayload, NextHopHash, Scalar, SymKey};
use super::packet::MixPacket;
use super::round::{RoundContext, RoundError};

pub type ClientId = u32;

/// Who handed the server a packet carrying a given h.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Client(ClientId),
    Node(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Vote,
    Ack,
}

/// A node returned a different number of packets than it owed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Discrepancy {
    pub direction: Direction,
    pub hop: usize,
    pub node: usize,
    pub expected: usize,
    pub returned: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Collecting,
    Votes(usize),
    Tallied,
    Acks(usize),
    Done,
}

#[derive(Clone, Debug)]
struct Exit {
    packet: MixPacket,
    s: SymKey,
    d: MixPayload,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServerRoundStats {
    pub accepted: usize,
    pub over_quota: usize,
    pub replays: usize,
    pub invalid: usize,
    pub forged_acks: usize,
}

/// Server side of one vote round and its acknowledgment phase.
///
/// Drive it as: `submit`* then, per hop, `begin_vote_hop`, `receive_votes`*,
/// `end_vote_hop`; then `tally`; then per hop `begin_ack_hop`,
/// `receive_acks`*, `end_ack_hop`; finally `take_client_acks`.
#[derive(Clone, Debug)]
pub struct ServerRound {
    ctx: RoundContext,
    quota: usize,
    secret: Scalar,
    phase: Phase,
    accepted: HashMap<ClientId, usize>,
    /// routes[i - 1] maps h_i to the party that sent it.
    routes: Vec<HashMap<NextHopHash, Origin>>,
    staged: Vec<MixPacket>,
    owed: BTreeMap<usize, usize>,
    returned: BTreeMap<usize, usize>,
    /// emitted[i - 1][node]: packets the node produced at vote hop i.
    emitted: Vec<BTreeMap<usize, usize>>,
    exits: Vec<Exit>,
    client_acks: BTreeMap<ClientId, Vec<MixPacket>>,
    answered: HashSet<NextHopHash>,
    discrepancies: Vec<Discrepancy>,
    stats: ServerRoundStats,
}

impl ServerRound {
    pub fn new(ctx: RoundContext, quota: usize, secret: Scalar) -> Result<Self, RoundError> {
        ctx.check_runnable()?;
        let levels = usize::from(ctx.n_shuffle) + 1;
        Ok(Self {
            ctx,
            quota,
            secret,
            phase: Phase::Collecting,
            accepted: HashMap::new(),
            routes: vec![HashMap::new(); levels],
            staged: Vec::new(),
            owed: BTreeMap::new(),
            returned: BTreeMap::new(),
            emitted: vec![BTreeMap::new(); levels],
            exits: Vec::new(),
            client_acks: BTreeMap::new(),
            answered: HashSet::new(),
            discrepancies: Vec::new(),
            stats: ServerRoundStats::default(),
        })
    }

    pub fn context(&self) -> &RoundContext {
        &self.ctx
    }

    pub fn stats(&self) -> ServerRoundStats {
        self.stats
    }

    pub fn discrepancies(&self) -> &[Discrepancy] {
        &self.discrepancies
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn is_tallied(&self) -> bool {
        matches!(self.phase, Phase::Tallied | Phase::Acks(_) | Phase::Done)
    }

    pub fn n_shuffle(&self) -> usize {
        self.ctx.n_shuffle.into()
    }

    /// Accepts at most `quota` packets per client over the whole round.
    pub fn submit(&mut self, client: ClientId, packets: Vec<MixPacket>) -> Result<usize, RoundError> {
        if self.phase != Phase::Collecting {
            return Err(RoundError::RoundClosed);
        }
        let used = self.accepted.entry(client).or_default();
        let room = self.quota.saturating_sub(*used);
        self.stats.over_quota += packets.len().saturating_sub(room);
        let mut taken = 0;
        for packet in packets.into_iter().take(room) {
            if self.routes[0].insert(packet.h, Origin::Client(client)).is_some() {
                self.stats.replays += 1;
                continue;
            }
            self.staged.push(packet);
            taken += 1;
        }
        *used += taken;
        self.stats.accepted += taken;
        Ok(taken)
    }

    /// Sorts staged packets into per-node batches; every active shuffler gets
    /// a batch, possibly empty. With zero hops the round goes straight to the tally.
    pub fn begin_vote_hop(&mut self) -> Result<BTreeMap<usize, Vec<MixPacket>>, RoundError> {
        let hop = match self.phase {
            Phase::Collecting => 1,
            _ => return Err(RoundError::WrongPhase),
        };
        if self.n_shuffle() == 0 {
            self.finish_votes();
            return Ok(BTreeMap::new());
        }
        Ok(self.dispatch_votes(hop))
    }

    fn dispatch_votes(&mut self, hop: usize) -> BTreeMap<usize, Vec<MixPacket>> {
        let mut out: BTreeMap<usize, Vec<MixPacket>> = self.ctx.active().iter().map(|&j| (j, Vec::new())).collect();
        for packet in std::mem::take(&mut self.staged) {
            let node = self.ctx.hash_to_node(&packet.h).expect("runnable round has active shufflers");
            out.get_mut(&node).expect("active").push(packet);
        }
        for batch in out.values_mut() {
            batch.sort_by_key(MixPacket::to_bytes);
        }
        self.owed = out.iter().map(|(&j, b)| (j, b.len())).collect();
        self.returned.clear();
        self.phase = Phase::Votes(hop);
        out
    }

    pub fn receive_votes(&mut self, node: usize, packets: Vec<MixPacket>) -> Result<(), RoundError> {
        let Phase::Votes(hop) = self.phase else { return Err(RoundError::WrongPhase) };
        let owed = *self.owed.get(&node).ok_or(RoundError::UnexpectedNode(node))?;
        if self.returned.contains_key(&node) {
            return Err(RoundError::UnexpectedNode(node));
        }
        let got = packets.len();
        let mut kept = 0;
        for packet in packets.into_iter().take(owed) {
            if self.routes[hop].insert(packet.h, Origin::Node(node)).is_some() {
                self.stats.replays += 1;
                continue;
            }
            self.staged.push(packet);
            kept += 1;
        }
        self.returned.insert(node, got);
        self.emitted[hop - 1].insert(node, kept);
        Ok(())
    }

    pub fn awaiting(&self) -> Vec<usize> {
        self.owed.keys().filter(|j| !self.returned.contains_key(j)).copied().collect()
    }

    /// Closes the hop; silent nodes count as returning nothing. Returns the
    /// next hop's batches, or an empty map once the tally is ready.
    pub fn end_vote_hop(&mut self) -> Result<BTreeMap<usize, Vec<MixPacket>>, RoundError> {
        let Phase::Votes(hop) = self.phase else { return Err(RoundError::WrongPhase) };
        self.log(Direction::Vote, hop);
        if hop == self.n_shuffle() {
            self.finish_votes();
            return Ok(BTreeMap::new());
        }
        Ok(self.dispatch_votes(hop + 1))
    }

    fn log(&mut self, direction: Direction, hop: usize) {
        for (&node, &expected) in &self.owed {
            let returned = self.returned.get(&node).copied().unwrap_or(0);
            if returned != expected {
                self.discrepancies.push(Discrepancy { direction, hop, node, expected, returned });
            }
        }
    }

    fn finish_votes(&mut self) {
        let t = self.ctx.t_timestamp;
        for packet in std::mem::take(&mut self.staged) {
            let s = derive_shared(&packet.p, &self.secret);
            let d = peel(&packet.d, &s, LayerRole::Vote, t);
            self.exits.push(Exit { packet, s, d });
        }
        self.exits.sort_by_key(|e| e.d);
        self.phase = Phase::Tallied;
    }

    /// Decrypted payloads in sorted order.
    pub fn tally(&self) -> Vec<MixPayload> {
        self.exits.iter().map(|e| e.d).collect()
    }

    /// Starts the acknowledgment phase at the last hop, or continues it.
    pub fn begin_ack_hop(&mut self) -> Result<BTreeMap<usize, Vec<MixPacket>>, RoundError> {
        if self.phase != Phase::Tallied {
            return Err(RoundError::WrongPhase);
        }
        let t = self.ctx.t_timestamp;
        self.staged = self
            .exits
            .iter()
            .map(|e| MixPacket {
                p: e.packet.p,
                h: e.packet.h,
                d: apply_layer(&ack_tag(&e.d, &e.s, t), &e.s, LayerRole::Ack, t),
            })
            .collect();
        Ok(self.route_acks(self.n_shuffle() + 1))
    }

    /// Routes packets carrying h at `level` to whoever sent them.
    fn route_acks(&mut self, level: usize) -> BTreeMap<usize, Vec<MixPacket>> {
        let mut out = BTreeMap::new();
        for packet in std::mem::take(&mut self.staged) {
            match self.routes[level - 1].get(&packet.h) {
                Some(Origin::Node(j)) => out.entry(*j).or_insert_with(Vec::new).push(packet),
                Some(Origin::Client(c)) => self.client_acks.entry(*c).or_default().push(packet),
                None => self.stats.forged_acks += 1,
            }
        }
        if level == 1 {
            self.phase = Phase::Done;
            return BTreeMap::new();
        }
        let hop = level - 1;
        // Every active node gets a batch each hop so it can count hops.
        for &j in self.ctx.active() {
            out.entry(j).or_default();
        }
        for batch in out.values_mut() {
            batch.sort_by_key(MixPacket::to_bytes);
        }
        self.owed =
            self.ctx.active().iter().map(|&j| (j, self.emitted[hop - 1].get(&j).copied().unwrap_or(0))).collect();
        self.returned.clear();
        self.phase = Phase::Acks(hop);
        out
    }

    pub fn receive_acks(&mut self, node: usize, packets: Vec<MixPacket>) -> Result<(), RoundError> {
        let Phase::Acks(hop) = self.phase else { return Err(RoundError::WrongPhase) };
        if !self.owed.contains_key(&node) || self.returned.contains_key(&node) {
            return Err(RoundError::UnexpectedNode(node));
        }
        self.returned.insert(node, packets.len());
        for packet in packets {
            // A node may only answer once for each flow that entered it.
            let entered =
                self.routes[hop - 1].contains_key(&packet.h) && self.ctx.hash_to_node(&packet.h) == Some(node);
            if entered && self.answered.insert(packet.h) {
                self.staged.push(packet);
            } else {
                self.stats.forged_acks += 1;
            }
        }
        Ok(())
    }

    pub fn end_ack_hop(&mut self) -> Result<BTreeMap<usize, Vec<MixPacket>>, RoundError> {
        let Phase::Acks(hop) = self.phase else { return Err(RoundError::WrongPhase) };
        self.log(Direction::Ack, hop);
        Ok(self.route_acks(hop))
    }

    /// Final acknowledgments per submitting client.
    pub fn take_client_acks(&mut self) -> BTreeMap<ClientId, Vec<MixPacket>> {
        let mut out = std::mem::take(&mut self.client_acks);
        for acks in out.values_mut() {
            acks.sort_by_key(MixPacket::to_bytes);
        }
        out
    }

    /// Clients that submitted this round with their accepted counts.
    pub fn submitters(&self) -> impl Iterator<Item = (ClientId, usize)> + '_ {
        self.accepted.iter().map(|(&c, &n)| (c, n))
    }
}
