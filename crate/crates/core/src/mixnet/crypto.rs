//! Group, hash and keystream primitives for the vote mix network.

use std::fmt;

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar as DalekScalar;
use curve25519_dalek::traits::IsIdentity;
use rand::{CryptoRng, Rng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const ELEMENT_LEN: usize = 32;
pub const HASH_LEN: usize = 16;
pub const PAYLOAD_LEN: usize = 32;

const KDF_TAG: &[u8] = b"LLUAD-kdf";
const BLIND_TAG: &[u8] = b"LLUAD-blind";
const HOP_TAG: &[u8] = b"LLUAD-hop";
const ACK_TAG: &[u8] = b"LLUAD-ack";
const ENC_TAG: &[u8] = b"LLUAD-enc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("invalid group element")]
    InvalidElement,
    #[error("invalid scalar")]
    InvalidScalar,
}

/// Non-identity Ristretto255 element with its canonical encoding.
#[derive(Clone, Copy)]
pub struct KeyElement {
    bytes: [u8; ELEMENT_LEN],
    point: RistrettoPoint,
}

impl KeyElement {
    pub fn from_bytes(bytes: [u8; ELEMENT_LEN]) -> Result<Self, CryptoError> {
        let point = CompressedRistretto(bytes).decompress().ok_or(CryptoError::InvalidElement)?;
        Self::from_point(point)
    }

    fn from_point(point: RistrettoPoint) -> Result<Self, CryptoError> {
        if point.is_identity() {
            return Err(CryptoError::InvalidElement);
        }
        Ok(Self { bytes: point.compress().to_bytes(), point })
    }

    pub fn as_bytes(&self) -> &[u8; ELEMENT_LEN] {
        &self.bytes
    }

    fn mul(&self, k: &Scalar) -> Result<Self, CryptoError> {
        Self::from_point(self.point * k.0)
    }
}

impl PartialEq for KeyElement {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}

impl Eq for KeyElement {}

impl std::hash::Hash for KeyElement {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bytes.hash(state);
    }
}

impl fmt::Debug for KeyElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyElement({})", hex(&self.bytes[..8]))
    }
}

/// Nonzero scalar modulo the group order.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Scalar(DalekScalar);

impl Scalar {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let mut wide = [0u8; 64];
            rng.fill_bytes(&mut wide);
            let s = DalekScalar::from_bytes_mod_order_wide(&wide);
            if s != DalekScalar::ZERO {
                return Self(s);
            }
        }
    }

    /// Accepts only canonical, nonzero encodings.
    pub fn from_bytes(bytes: [u8; 32]) -> Result<Self, CryptoError> {
        let s: Option<DalekScalar> = DalekScalar::from_canonical_bytes(bytes).into();
        match s {
            Some(s) if s != DalekScalar::ZERO => Ok(Self(s)),
            _ => Err(CryptoError::InvalidScalar),
        }
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn public(&self) -> KeyElement {
        KeyElement::from_point(RistrettoPoint::mul_base(&self.0)).expect("nonzero scalar")
    }

    pub(crate) fn inner(&self) -> DalekScalar {
        self.0
    }

    pub(crate) fn from_inner(s: DalekScalar) -> Option<Self> {
        (s != DalekScalar::ZERO).then_some(Self(s))
    }
}

impl std::ops::Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        // Product of nonzero residues modulo a prime is nonzero.
        Scalar(self.0 * rhs.0)
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Scalar(..)")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymKey(pub [u8; 32]);

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymKey({})", hex(&self.0[..4]))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NextHopHash(pub [u8; HASH_LEN]);

impl NextHopHash {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.random())
    }

    pub fn as_u128(&self) -> u128 {
        u128::from_be_bytes(self.0)
    }
}

impl fmt::Debug for NextHopHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NextHopHash({})", hex(&self.0))
    }
}

/// Fixed 32-byte payload; byte 0 is the flag field.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MixPayload(pub [u8; PAYLOAD_LEN]);

impl MixPayload {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self(rng.random())
    }
}

impl fmt::Debug for MixPayload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MixPayload({})", hex(&self.0))
    }
}

/// Separates the keystreams of the vote and acknowledgment directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerRole {
    Vote = 0,
    Ack = 1,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn kdf(point: &RistrettoPoint) -> SymKey {
    let digest = Sha256::new().chain_update(KDF_TAG).chain_update(point.compress().as_bytes()).finalize();
    SymKey(digest.into())
}

/// Node side: s = KDF(k_priv * p).
pub fn derive_shared(p: &KeyElement, k_priv: &Scalar) -> SymKey {
    kdf(&(p.point * k_priv.0))
}

/// Sender side: s = KDF((x0 * b_1 * ... * b_{i-1}) * k_pub).
pub fn derive_shared_sender(k_pub: &KeyElement, accumulated: &Scalar) -> SymKey {
    kdf(&(k_pub.point * accumulated.0))
}

/// b = H(p || s) reduced mod the group order; zero is skipped by rehashing.
pub fn blinding_factor(p: &KeyElement, s: &SymKey) -> Scalar {
    let mut counter = 0u8;
    loop {
        let digest: [u8; 32] = Sha256::new()
            .chain_update(BLIND_TAG)
            .chain_update(p.bytes)
            .chain_update(s.0)
            .chain_update([counter])
            .finalize()
            .into();
        if let Some(b) = Scalar::from_inner(DalekScalar::from_bytes_mod_order(digest)) {
            return b;
        }
        counter = counter.wrapping_add(1);
    }
}

pub fn blind(p: &KeyElement, s: &SymKey) -> Result<(Scalar, KeyElement), CryptoError> {
    let b = blinding_factor(p, s);
    Ok((b, p.mul(&b)?))
}

pub fn next_hash(h: &NextHopHash, s: &SymKey, t_timestamp: u64) -> NextHopHash {
    let digest = Sha256::new()
        .chain_update(HOP_TAG)
        .chain_update(h.0)
        .chain_update(s.0)
        .chain_update(t_timestamp.to_be_bytes())
        .finalize();
    NextHopHash(digest[..HASH_LEN].try_into().expect("16 bytes"))
}

fn keystream(s: &SymKey, role: LayerRole, t_timestamp: u64) -> [u8; PAYLOAD_LEN] {
    Sha256::new()
        .chain_update(ENC_TAG)
        .chain_update([role as u8])
        .chain_update(s.0)
        .chain_update(t_timestamp.to_be_bytes())
        .finalize()
        .into()
}

/// XOR with the per-layer keystream; its own inverse.
pub fn apply_layer(d: &MixPayload, s: &SymKey, role: LayerRole, t_timestamp: u64) -> MixPayload {
    let ks = keystream(s, role, t_timestamp);
    let mut out = d.0;
    for (o, k) in out.iter_mut().zip(ks) {
        *o ^= k;
    }
    MixPayload(out)
}

/// Encrypts with `keys` so that peeling in order keys[0], keys[1], ... restores `d`.
pub fn layer_encrypt(d: &MixPayload, keys: &[SymKey], role: LayerRole, t_timestamp: u64) -> MixPayload {
    keys.iter().rev().fold(*d, |acc, s| apply_layer(&acc, s, role, t_timestamp))
}

pub fn peel(d: &MixPayload, s: &SymKey, role: LayerRole, t_timestamp: u64) -> MixPayload {
    apply_layer(d, s, role, t_timestamp)
}

pub fn ack_tag(d: &MixPayload, s_final: &SymKey, t_timestamp: u64) -> MixPayload {
    let digest = Sha256::new()
        .chain_update(ACK_TAG)
        .chain_update(d.0)
        .chain_update(s_final.0)
        .chain_update(t_timestamp.to_be_bytes())
        .finalize();
    MixPayload(digest.into())
}

/// One hop of a sender's plan. `node` is `None` for the server hop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopPlan {
    pub node: Option<usize>,
    pub h: NextHopHash,
    pub p: KeyElement,
    pub s: SymKey,
    pub b: Scalar,
}

/// Every per-hop value a sender derives for one vote.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SenderPathPlan {
    pub t_timestamp: u64,
    pub hops: Vec<HopPlan>,
}

impl SenderPathPlan {
    pub fn n_shuffle(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn first(&self) -> &HopPlan {
        &self.hops[0]
    }

    pub fn server_key(&self) -> &SymKey {
        &self.hops.last().expect("at least the server hop").s
    }

    pub fn node_path(&self) -> Vec<usize> {
        self.hops.iter().filter_map(|h| h.node).collect()
    }

    pub fn keys(&self) -> Vec<SymKey> {
        self.hops.iter().map(|h| h.s).collect()
    }

    /// d_1: the payload wrapped for every hop, the server's layer innermost.
    pub fn wrap(&self, d: &MixPayload) -> MixPayload {
        layer_encrypt(d, &self.keys(), LayerRole::Vote, self.t_timestamp)
    }

    /// Removes the server's and every node's acknowledgment layer.
    pub fn unwrap_ack(&self, r1: &MixPayload) -> MixPayload {
        self.hops.iter().fold(*r1, |acc, hop| apply_layer(&acc, &hop.s, LayerRole::Ack, self.t_timestamp))
    }

    pub fn verify_ack(&self, d: &MixPayload, r1: &MixPayload) -> bool {
        self.unwrap_ack(r1) == ack_tag(d, self.server_key(), self.t_timestamp)
    }
}

/// Builds a plan whose node at each hop is chosen by `route` from the hop's
/// hash. `route` returns the node index and its public key.
pub fn build_routed_plan<R, F>(
    rng: &mut R,
    t_timestamp: u64,
    n_shuffle: usize,
    server_key: &KeyElement,
    mut route: F,
) -> Result<SenderPathPlan, CryptoError>
where
    R: RngCore + CryptoRng,
    F: FnMut(&NextHopHash) -> Option<(usize, KeyElement)>,
{
    let x0 = Scalar::random(rng);
    let mut acc = x0;
    let mut p = x0.public();
    let mut h = NextHopHash::random(rng);
    let mut hops = Vec::with_capacity(n_shuffle + 1);
    for i in 0..=n_shuffle {
        let (node, k_pub) = if i < n_shuffle {
            let (idx, key) = route(&h).ok_or(CryptoError::InvalidElement)?;
            (Some(idx), key)
        } else {
            (None, *server_key)
        };
        let s = derive_shared_sender(&k_pub, &acc);
        let (b, p_next) = blind(&p, &s)?;
        hops.push(HopPlan { node, h, p, s, b });
        acc = acc * b;
        p = p_next;
        h = next_hash(&h, &s, t_timestamp);
    }
    Ok(SenderPathPlan { t_timestamp, hops })
}

/// Plan over a fixed key sequence; node indices are positions in `path`.
pub fn build_path_plan<R: RngCore + CryptoRng>(
    rng: &mut R,
    path: &[KeyElement],
    server_key: &KeyElement,
    t_timestamp: u64,
) -> Result<SenderPathPlan, CryptoError> {
    let mut hop = 0;
    build_routed_plan(rng, t_timestamp, path.len(), server_key, |_| {
        let r = (hop, path[hop]);
        hop += 1;
        Some(r)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_is_rejected() {
        assert_eq!(KeyElement::from_bytes([0; 32]), Err(CryptoError::InvalidElement));
        assert_eq!(KeyElement::from_bytes([0xff; 32]), Err(CryptoError::InvalidElement));
        assert_eq!(Scalar::from_bytes([0; 32]), Err(CryptoError::InvalidScalar));
    }

    #[test]
    fn dh_is_symmetric() {
        let mut r = rng(1);
        let a = Scalar::random(&mut r);
        let b = Scalar::random(&mut r);
        assert_eq!(derive_shared(&a.public(), &b), derive_shared(&b.public(), &a));
        assert_eq!(derive_shared_sender(&b.public(), &a), derive_shared(&a.public(), &b));
    }

    #[test]
    fn golden_shared_key() {
        let mut one = [0u8; 32];
        one[0] = 7;
        let k = Scalar::from_bytes(one).unwrap();
        let mut two = [0u8; 32];
        two[0] = 11;
        let p = Scalar::from_bytes(two).unwrap().public();
        let s = derive_shared(&p, &k);
        assert_eq!(hex(&s.0), GOLDEN_SHARED);
        assert_eq!(derive_shared(&p, &k), s);
    }

    // Frozen from the first run.
    const GOLDEN_SHARED: &str = "7beba57f305889624370a28f79639e8687ea0ee3fb1b73429c972dbca0e45303";

    #[test]
    fn blinding_changes_element_and_depends_on_key() {
        let mut r = rng(2);
        for _ in 0..10_000 {
            let p = Scalar::random(&mut r).public();
            let s = SymKey(r.random());
            let (_, next) = blind(&p, &s).unwrap();
            assert_ne!(next, p);
            let (_, other) = blind(&p, &SymKey(r.random())).unwrap();
            assert_ne!(next, other);
        }
    }

    #[test]
    fn next_hash_separates_rounds() {
        let h = NextHopHash([3; 16]);
        let s = SymKey([9; 32]);
        assert_eq!(next_hash(&h, &s, 5), next_hash(&h, &s, 5));
        let outs: std::collections::HashSet<_> = (0..100_000u64).map(|t| next_hash(&h, &s, t)).collect();
        assert_eq!(outs.len(), 100_000);
    }

    #[test]
    fn layers_round_trip() {
        let mut r = rng(3);
        let d = MixPayload::random(&mut r);
        assert_eq!(layer_encrypt(&d, &[], LayerRole::Vote, 1), d);
        let s = SymKey(r.random());
        assert_eq!(peel(&layer_encrypt(&d, &[s], LayerRole::Vote, 1), &s, LayerRole::Vote, 1), d);
        assert_ne!(apply_layer(&d, &s, LayerRole::Vote, 1), apply_layer(&d, &s, LayerRole::Ack, 1));
        let keys: Vec<SymKey> = (0..11).map(|_| SymKey(r.random())).collect();
        let wrapped = layer_encrypt(&d, &keys, LayerRole::Vote, 9);
        let back = keys.iter().fold(wrapped, |acc, s| peel(&acc, s, LayerRole::Vote, 9));
        assert_eq!(back, d);
    }

    /// Walks a plan the way nodes would, using only node secrets.
    fn node_walk(plan: &SenderPathPlan, secrets: &[Scalar], server: &Scalar, d: &MixPayload) -> MixPayload {
        let t = plan.t_timestamp;
        let mut p = plan.first().p;
        let mut h = plan.first().h;
        let mut payload = plan.wrap(d);
        for (i, hop) in plan.hops.iter().enumerate() {
            let k = hop.node.map_or(server, |n| &secrets[n]);
            let s = derive_shared(&p, k);
            assert_eq!(s, hop.s, "hop {i}");
            assert_eq!(h, hop.h);
            payload = peel(&payload, &s, LayerRole::Vote, t);
            h = next_hash(&h, &s, t);
            p = blind(&p, &s).unwrap().1;
        }
        payload
    }

    #[test]
    fn sender_and_nodes_agree_over_random_paths() {
        let mut r = rng(4);
        let server = Scalar::random(&mut r);
        for len in 1..=12 {
            for _ in 0..20 {
                let secrets: Vec<Scalar> = (0..len).map(|_| Scalar::random(&mut r)).collect();
                let path: Vec<KeyElement> = secrets.iter().map(Scalar::public).collect();
                let plan = build_path_plan(&mut r, &path, &server.public(), 77).unwrap();
                assert_eq!(plan.hops.len(), len + 1);
                let d = MixPayload::random(&mut r);
                assert_eq!(node_walk(&plan, &secrets, &server, &d), d);
            }
        }
    }

    #[test]
    fn smallest_plan() {
        let mut r = rng(5);
        let node = Scalar::random(&mut r);
        let server = Scalar::random(&mut r);
        let plan = build_path_plan(&mut r, &[node.public()], &server.public(), 1).unwrap();
        assert_eq!(plan.hops.len(), 2);
        let d = MixPayload([42; 32]);
        assert_eq!(node_walk(&plan, &[node], &server, &d), d);
    }

    #[test]
    fn two_votes_share_nothing() {
        let mut r = rng(6);
        let secrets: Vec<Scalar> = (0..5).map(|_| Scalar::random(&mut r)).collect();
        let path: Vec<KeyElement> = secrets.iter().map(Scalar::public).collect();
        let server = Scalar::random(&mut r).public();
        let a = build_path_plan(&mut r, &path, &server, 3).unwrap();
        let b = build_path_plan(&mut r, &path, &server, 3).unwrap();
        for x in &a.hops {
            for y in &b.hops {
                assert_ne!(x.s, y.s);
                assert_ne!(x.h, y.h);
                assert_ne!(x.p, y.p);
            }
        }
    }

    #[test]
    fn ack_verification() {
        let mut r = rng(7);
        let d = MixPayload::random(&mut r);
        let s = SymKey(r.random());
        assert_eq!(ack_tag(&d, &s, 4), ack_tag(&d, &s, 4));
        assert_ne!(ack_tag(&d, &s, 4), ack_tag(&d, &SymKey(r.random()), 4));
        let path: Vec<KeyElement> = (0..3).map(|_| Scalar::random(&mut r).public()).collect();
        let server = Scalar::random(&mut r).public();
        let plan = build_path_plan(&mut r, &path, &server, 4).unwrap();
        let r1 = layer_encrypt(&ack_tag(&d, plan.server_key(), 4), &plan.keys(), LayerRole::Ack, 4);
        assert!(plan.verify_ack(&d, &r1));
        let false_accepts = (0..10_000).filter(|_| plan.verify_ack(&d, &MixPayload::random(&mut r))).count();
        assert_eq!(false_accepts, 0);
    }
}
