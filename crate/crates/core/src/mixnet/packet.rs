use thiserror::Error;

use super::crypto::{CryptoError, KeyElement, MixPayload, NextHopHash, ELEMENT_LEN, HASH_LEN, PAYLOAD_LEN};

pub const PACKET_LEN: usize = ELEMENT_LEN + HASH_LEN + PAYLOAD_LEN;
pub const MAX_BATCH: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BatchError {
    #[error("batch truncated")]
    Truncated,
    #[error("batch has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("batch of {0} packets exceeds the u16 count")]
    TooLarge(usize),
}

/// (p, h, d): 80 bytes on the wire regardless of hop count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MixPacket {
    pub p: KeyElement,
    pub h: NextHopHash,
    pub d: MixPayload,
}

impl MixPacket {
    pub fn to_bytes(&self) -> [u8; PACKET_LEN] {
        let mut out = [0u8; PACKET_LEN];
        out[..ELEMENT_LEN].copy_from_slice(self.p.as_bytes());
        out[ELEMENT_LEN..ELEMENT_LEN + HASH_LEN].copy_from_slice(&self.h.0);
        out[ELEMENT_LEN + HASH_LEN..].copy_from_slice(&self.d.0);
        out
    }

    pub fn from_bytes(bytes: &[u8; PACKET_LEN]) -> Result<Self, CryptoError> {
        let p = KeyElement::from_bytes(bytes[..ELEMENT_LEN].try_into().expect("32"))?;
        let h = NextHopHash(bytes[ELEMENT_LEN..ELEMENT_LEN + HASH_LEN].try_into().expect("16"));
        let d = MixPayload(bytes[ELEMENT_LEN + HASH_LEN..].try_into().expect("32"));
        Ok(Self { p, h, d })
    }

    /// Flow identifier used by nodes and the server to route acknowledgments.
    pub fn flow_id(&self) -> ([u8; ELEMENT_LEN], NextHopHash) {
        (*self.p.as_bytes(), self.h)
    }
}

/// count u16 || count x 80-byte packets.
pub fn encode_batch(packets: &[MixPacket]) -> Result<Vec<u8>, BatchError> {
    if packets.len() > MAX_BATCH {
        return Err(BatchError::TooLarge(packets.len()));
    }
    let mut out = Vec::with_capacity(2 + packets.len() * PACKET_LEN);
    out.extend_from_slice(&(packets.len() as u16).to_be_bytes());
    for p in packets {
        out.extend_from_slice(&p.to_bytes());
    }
    Ok(out)
}

/// Packets with invalid elements are dropped and counted.
pub fn decode_batch(bytes: &[u8]) -> Result<(Vec<MixPacket>, usize), BatchError> {
    let (count, rest) = bytes.split_first_chunk::<2>().ok_or(BatchError::Truncated)?;
    let count = u16::from_be_bytes(*count) as usize;
    let need = count * PACKET_LEN;
    if rest.len() < need {
        return Err(BatchError::Truncated);
    }
    if rest.len() > need {
        return Err(BatchError::TrailingBytes(rest.len() - need));
    }
    let mut packets = Vec::with_capacity(count);
    let mut invalid = 0;
    for chunk in rest.chunks_exact(PACKET_LEN) {
        match MixPacket::from_bytes(chunk.try_into().expect("80")) {
            Ok(p) => packets.push(p),
            Err(_) => invalid += 1,
        }
    }
    Ok((packets, invalid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixnet::crypto::Scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn batch_round_trip_and_invalid_elements() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let packets: Vec<MixPacket> = (0..3)
            .map(|_| MixPacket {
                p: Scalar::random(&mut rng).public(),
                h: NextHopHash::random(&mut rng),
                d: MixPayload::random(&mut rng),
            })
            .collect();
        let mut bytes = encode_batch(&packets).unwrap();
        assert_eq!(bytes.len(), 2 + 3 * PACKET_LEN);
        assert_eq!(decode_batch(&bytes).unwrap(), (packets.clone(), 0));
        bytes[2 + PACKET_LEN..2 + PACKET_LEN + 32].fill(0);
        let (decoded, invalid) = decode_batch(&bytes).unwrap();
        assert_eq!((decoded.len(), invalid), (2, 1));
        assert_eq!(decode_batch(&bytes[..bytes.len() - 1]), Err(BatchError::Truncated));
        bytes.push(0);
        assert_eq!(decode_batch(&bytes), Err(BatchError::TrailingBytes(1)));
    }
}
