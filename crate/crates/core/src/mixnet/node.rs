use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::crypto::{
    apply_layer, blind, derive_shared, next_hash, peel, KeyElement, LayerRole, MixPayload, NextHopHash, Scalar, SymKey,
    ELEMENT_LEN,
};
use super::packet::MixPacket;
use super::round::RoundContext;

/// A party that transforms vote batches forward and acknowledgment batches
/// backward. Hops are numbered from 1.
pub trait MixNode {
    fn index(&self) -> usize;
    fn process_votes(&mut self, hop: usize, batch: Vec<MixPacket>, ctx: &RoundContext) -> Vec<MixPacket>;
    fn process_acks(&mut self, hop: usize, batch: Vec<MixPacket>, ctx: &RoundContext) -> Vec<MixPacket>;
}

#[derive(Clone, Debug)]
struct Flow {
    hop: usize,
    p_in: KeyElement,
    h_in: NextHopHash,
    s: SymKey,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub processed: u64,
    pub invalid: u64,
    pub acks_forwarded: u64,
    pub cover_acks: u64,
    pub unknown_acks: u64,
}

/// An honest shuffler: unwraps one layer, blinds, rehashes and permutes.
#[derive(Clone, Debug)]
pub struct ShufflerNode {
    index: usize,
    secret: Scalar,
    rng: ChaCha20Rng,
    round: Option<u64>,
    flows: HashMap<([u8; ELEMENT_LEN], NextHopHash), Flow>,
    stats: NodeStats,
}

impl ShufflerNode {
    pub fn new(index: usize, secret: Scalar, seed: u64) -> Self {
        Self {
            index,
            secret,
            rng: ChaCha20Rng::seed_from_u64(seed),
            round: None,
            flows: HashMap::new(),
            stats: NodeStats::default(),
        }
    }

    pub fn public(&self) -> KeyElement {
        self.secret.public()
    }

    pub fn stats(&self) -> NodeStats {
        self.stats
    }

    pub fn pending_flows(&self) -> usize {
        self.flows.len()
    }

    fn enter_round(&mut self, t: u64) {
        if self.round != Some(t) {
            self.flows.clear();
            self.round = Some(t);
        }
    }

    /// One packet forward; `None` when blinding yields an invalid element.
    pub fn transform(&self, packet: &MixPacket, t: u64) -> Option<(MixPacket, SymKey)> {
        let s = derive_shared(&packet.p, &self.secret);
        let (_, p) = blind(&packet.p, &s).ok()?;
        let out = MixPacket { p, h: next_hash(&packet.h, &s, t), d: peel(&packet.d, &s, LayerRole::Vote, t) };
        Some((out, s))
    }
}

impl MixNode for ShufflerNode {
    fn index(&self) -> usize {
        self.index
    }

    fn process_votes(&mut self, hop: usize, batch: Vec<MixPacket>, ctx: &RoundContext) -> Vec<MixPacket> {
        self.enter_round(ctx.t_timestamp);
        let mut out = Vec::with_capacity(batch.len());
        for packet in batch {
            let Some((next, s)) = self.transform(&packet, ctx.t_timestamp) else {
                self.stats.invalid += 1;
                continue;
            };
            self.flows.insert(next.flow_id(), Flow { hop, p_in: packet.p, h_in: packet.h, s });
            self.stats.processed += 1;
            out.push(next);
        }
        out.shuffle(&mut self.rng);
        out
    }

    /// Encrypts each ack with the saved key and restores the inbound flow
    /// identifiers; missing acks for this hop are replaced by cover acks.
    fn process_acks(&mut self, hop: usize, batch: Vec<MixPacket>, ctx: &RoundContext) -> Vec<MixPacket> {
        self.enter_round(ctx.t_timestamp);
        let t = ctx.t_timestamp;
        let mut out = Vec::with_capacity(batch.len());
        for ack in batch {
            match self.flows.get(&ack.flow_id()) {
                Some(flow) if flow.hop == hop => {
                    let flow = self.flows.remove(&ack.flow_id()).expect("present");
                    out.push(MixPacket {
                        p: flow.p_in,
                        h: flow.h_in,
                        d: apply_layer(&ack.d, &flow.s, LayerRole::Ack, t),
                    });
                    self.stats.acks_forwarded += 1;
                }
                _ => self.stats.unknown_acks += 1,
            }
        }
        let missing: Vec<_> = self.flows.iter().filter(|(_, f)| f.hop == hop).map(|(k, _)| *k).collect();
        for key in missing {
            let flow = self.flows.remove(&key).expect("present");
            out.push(MixPacket { p: flow.p_in, h: flow.h_in, d: MixPayload::random(&mut self.rng) });
            self.stats.cover_acks += 1;
        }
        out.shuffle(&mut self.rng);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixnet::crypto::build_path_plan;
    use rand::SeedableRng;

    #[test]
    fn single_packet_matches_plan_row() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let node_key = Scalar::random(&mut rng);
        let server = Scalar::random(&mut rng).public();
        let plan = build_path_plan(&mut rng, &[node_key.public()], &server, 3).unwrap();
        let d = MixPayload([5; 32]);
        let first = MixPacket { p: plan.hops[0].p, h: plan.hops[0].h, d: plan.wrap(&d) };
        let mut node = ShufflerNode::new(0, node_key, 1);
        let ctx = RoundContext::new(3, 1, vec![true, true]);
        let out = node.process_votes(1, vec![first], &ctx);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].p, plan.hops[1].p);
        assert_eq!(out[0].h, plan.hops[1].h);
        assert_ne!(out[0].d, first.d);
        assert_ne!(out[0].p, first.p);
        assert_ne!(out[0].h, first.h);
    }

    fn batch(rng: &mut ChaCha20Rng, n: usize) -> Vec<MixPacket> {
        (0..n)
            .map(|_| MixPacket {
                p: Scalar::random(rng).public(),
                h: NextHopHash::random(rng),
                d: MixPayload::random(rng),
            })
            .collect()
    }

    #[test]
    fn output_is_permutation_of_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut node = ShufflerNode::new(0, Scalar::random(&mut rng), 2);
        let input = batch(&mut rng, 20);
        let mut expected: Vec<[u8; 80]> = input.iter().map(|p| node.transform(p, 8).unwrap().0.to_bytes()).collect();
        let ctx = RoundContext::new(8, 1, vec![true, true]);
        let mut got: Vec<[u8; 80]> = node.process_votes(1, input, &ctx).iter().map(MixPacket::to_bytes).collect();
        expected.sort();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn four_packet_permutations_are_uniform() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut node = ShufflerNode::new(0, Scalar::random(&mut rng), 3);
        let input = batch(&mut rng, 4);
        let ctx = RoundContext::new(1, 1, vec![true, true]);
        let order: Vec<MixPacket> = input.iter().map(|p| node.transform(p, 1).unwrap().0).collect();
        let trials = 12_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..trials {
            let out = node.process_votes(1, input.clone(), &ctx);
            let perm: Vec<usize> = out.iter().map(|p| order.iter().position(|q| q == p).unwrap()).collect();
            *counts.entry(perm).or_insert(0f64) += 1.0;
        }
        assert_eq!(counts.len(), 24);
        let expected = trials as f64 / 24.0;
        let chi2: f64 = counts.values().map(|c| (c - expected).powi(2) / expected).sum();
        // 23 degrees of freedom: chi2 < 41.64 corresponds to p > 0.01.
        assert!(chi2 < 41.64, "chi2 {chi2}");
    }

    #[test]
    fn missing_acks_become_covers() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut node = ShufflerNode::new(0, Scalar::random(&mut rng), 4);
        let input = batch(&mut rng, 3);
        let ctx = RoundContext::new(1, 1, vec![true, true]);
        let out = node.process_votes(1, input.clone(), &ctx);
        let acks = node.process_acks(1, vec![out[0]], &ctx);
        assert_eq!(acks.len(), 3);
        let mut restored: Vec<_> = acks.iter().map(|a| a.flow_id()).collect();
        let mut original: Vec<_> = input.iter().map(|p| p.flow_id()).collect();
        restored.sort();
        original.sort();
        assert_eq!(restored, original);
        assert_eq!(node.stats().cover_acks, 2);
        assert_eq!(node.pending_flows(), 0);
    }
}
