use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::crypto::NextHopHash;

pub const DEFAULT_N_SHUFFLE: u8 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoundError {
    #[error("{active} active shufflers cannot serve {n_shuffle} hops")]
    InsufficientShufflers { active: usize, n_shuffle: usize },
    #[error("round is closed for submissions")]
    RoundClosed,
    #[error("operation not valid in the current phase")]
    WrongPhase,
    #[error("node {0} is not expected in this hop")]
    UnexpectedNode(usize),
    #[error("malformed round start: {0}")]
    Malformed(&'static str),
    #[error("availability marks shuffler {0} that the public assignment did not select")]
    UnassignedShuffler(usize),
}

/// Shared per-round state broadcast in ROUND_START.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundContext {
    pub t_timestamp: u64,
    pub n_shuffle: u8,
    availability: Vec<bool>,
    active: Vec<usize>,
}

impl RoundContext {
    pub fn new(t_timestamp: u64, n_shuffle: u8, availability: Vec<bool>) -> Self {
        let active = availability.iter().enumerate().filter(|(_, &on)| on).map(|(i, _)| i).collect();
        Self { t_timestamp, n_shuffle, availability, active }
    }

    pub fn availability(&self) -> &[bool] {
        &self.availability
    }

    /// Online shufflers in directory order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, shuffler: usize) -> bool {
        self.availability.get(shuffler).copied().unwrap_or(false)
    }

    pub fn check_runnable(&self) -> Result<(), RoundError> {
        let need = usize::from(self.n_shuffle) + 1;
        if self.n_shuffle > 0 && self.active.len() < need {
            return Err(RoundError::InsufficientShufflers {
                active: self.active.len(),
                n_shuffle: self.n_shuffle.into(),
            });
        }
        Ok(())
    }

    /// Big-endian h modulo the active count, mapped to the j-th online shuffler.
    pub fn hash_to_node(&self, h: &NextHopHash) -> Option<usize> {
        if self.active.is_empty() {
            return None;
        }
        let j = h.as_u128() % self.active.len() as u128;
        Some(self.active[j as usize])
    }

    /// t u64 || n_shuffle u8 || bit count u32 || bits, first shuffler in the MSB.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.availability.len().div_ceil(8));
        out.extend_from_slice(&self.t_timestamp.to_be_bytes());
        out.push(self.n_shuffle);
        out.extend_from_slice(&(self.availability.len() as u32).to_be_bytes());
        out.extend(pack_bits(&self.availability));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RoundError> {
        if bytes.len() < 13 {
            return Err(RoundError::Malformed("truncated header"));
        }
        let t = u64::from_be_bytes(bytes[..8].try_into().expect("8"));
        let n_shuffle = bytes[8];
        let bits = u32::from_be_bytes(bytes[9..13].try_into().expect("4")) as usize;
        let packed = &bytes[13..];
        if packed.len() != bits.div_ceil(8) {
            return Err(RoundError::Malformed("bitstream length"));
        }
        let availability = unpack_bits(packed, bits).ok_or(RoundError::Malformed("nonzero tail bits"))?;
        Ok(Self::new(t, n_shuffle, availability))
    }

    /// Rejects availability bits the public assignment does not allow.
    pub fn check_assignment(&self, assigned: &[usize]) -> Result<(), RoundError> {
        match self.active.iter().find(|a| assigned.binary_search(a).is_err()) {
            Some(&j) => Err(RoundError::UnassignedShuffler(j)),
            None => Ok(()),
        }
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

fn unpack_bits(packed: &[u8], bits: usize) -> Option<Vec<bool>> {
    let out: Vec<bool> = (0..bits).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    (pack_bits(&out) == packed).then_some(out)
}

/// Digest of the shuffler directory that seeds role assignment.
pub fn directory_digest<I, B>(keys: I) -> [u8; 32]
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut h = Sha256::new().chain_update(b"LLUAD-directory");
    for k in keys {
        h.update(k.as_ref());
    }
    h.finalize().into()
}

/// Public, server-independent choice of `count` shufflers out of `eligible`
/// for epoch `t`. Sorted ascending.
pub fn select_shufflers(t: u64, directory: &[u8; 32], eligible: usize, count: usize) -> Vec<usize> {
    let seed: [u8; 32] = Sha256::new()
        .chain_update(b"LLUAD-assign")
        .chain_update(t.to_be_bytes())
        .chain_update(directory)
        .finalize()
        .into();
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut out = index::sample(&mut rng, eligible, count.min(eligible)).into_vec();
    out.sort_unstable();
    out
}
