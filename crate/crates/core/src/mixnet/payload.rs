//! Vote payload content carried in the 32-byte mix payload.

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::crypto::{MixPayload, PAYLOAD_LEN};
use crate::dns::{DomainName, RecordKey, RecordType};

pub const FLAG_HASHED: u8 = 0x01;
pub const FLAG_FRAGMENT: u8 = 0x02;
pub const FLAG_DUMMY: u8 = 0x04;

pub const BODY_LEN: usize = PAYLOAD_LEN - 1;
/// Room for the dotted name after the type field.
pub const PLAIN_NAME_CAPACITY: usize = BODY_LEN - 2;
pub const DIGEST_LEN: usize = BODY_LEN - 2;
pub const FRAGMENT_DATA_LEN: usize = BODY_LEN - 4;
pub const MAX_FRAGMENTS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("unknown flag combination {0:#04x}")]
    UnknownFlags(u8),
    #[error("nonzero padding")]
    Padding,
    #[error("invalid record name")]
    Name,
    #[error("invalid fragment header")]
    Fragment,
    #[error("record too long to fragment")]
    TooLong,
}

/// Truncated hash of `type || dotted name`, keeping the type in the clear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordDigest {
    pub rtype: RecordType,
    pub digest: [u8; DIGEST_LEN],
}

impl RecordDigest {
    pub fn of(key: &RecordKey) -> Self {
        let digest = Sha256::new().chain_update(record_cleartext(key)).finalize();
        Self { rtype: key.rtype, digest: digest[..DIGEST_LEN].try_into().expect("29") }
    }

    pub fn to_bytes(&self) -> [u8; BODY_LEN] {
        let mut out = [0u8; BODY_LEN];
        out[..2].copy_from_slice(&self.rtype.code().to_be_bytes());
        out[2..].copy_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(bytes: &[u8; BODY_LEN]) -> Self {
        Self { rtype: RecordType(u16::from_be_bytes([bytes[0], bytes[1]])), digest: bytes[2..].try_into().expect("29") }
    }
}

/// type u16 || dotted name.
pub fn record_cleartext(key: &RecordKey) -> Vec<u8> {
    let mut out = key.rtype.code().to_be_bytes().to_vec();
    out.extend(key.name.dotted_bytes());
    out
}

pub fn parse_cleartext(bytes: &[u8]) -> Result<RecordKey, PayloadError> {
    let (rtype, name) = bytes.split_first_chunk::<2>().ok_or(PayloadError::Name)?;
    let name = std::str::from_utf8(name).map_err(|_| PayloadError::Name)?;
    if name.ends_with('.') {
        return Err(PayloadError::Name);
    }
    let name: DomainName = name.parse().map_err(|_| PayloadError::Name)?;
    Ok(RecordKey::new(name, RecordType(u16::from_be_bytes(*rtype))))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fragment {
    pub id: u16,
    pub index: u8,
    pub total: u8,
    pub data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum VotePayload {
    Record(RecordKey),
    Hashed(RecordDigest),
    Fragment(Fragment),
    Dummy,
}

impl VotePayload {
    /// Cleartext when it fits, otherwise the truncated hash.
    pub fn for_record(key: &RecordKey) -> Self {
        if key.name.dotted_len() <= PLAIN_NAME_CAPACITY {
            Self::Record(key.clone())
        } else {
            Self::Hashed(RecordDigest::of(key))
        }
    }

    pub fn is_dummy(&self) -> bool {
        matches!(self, Self::Dummy)
    }

    /// Dummies get a random body; everything else is zero padded.
    pub fn encode<R: Rng + ?Sized>(&self, rng: &mut R) -> MixPayload {
        let mut out = [0u8; PAYLOAD_LEN];
        match self {
            Self::Record(key) => {
                let clear = record_cleartext(key);
                assert!(clear.len() <= BODY_LEN, "record too long for a plain payload");
                out[1..1 + clear.len()].copy_from_slice(&clear);
            }
            Self::Hashed(d) => {
                out[0] = FLAG_HASHED;
                out[1..].copy_from_slice(&d.to_bytes());
            }
            Self::Fragment(f) => {
                out[0] = FLAG_FRAGMENT;
                out[1..3].copy_from_slice(&f.id.to_be_bytes());
                out[3] = (f.index << 4) | f.total;
                out[4] = f.data.len() as u8;
                out[5..5 + f.data.len()].copy_from_slice(&f.data);
            }
            Self::Dummy => {
                out[0] = FLAG_DUMMY;
                rng.fill(&mut out[1..]);
            }
        }
        MixPayload(out)
    }

    pub fn decode(payload: &MixPayload) -> Result<Self, PayloadError> {
        let (flag, body) = payload.0.split_first().expect("32 bytes");
        match *flag {
            0 => {
                let end = 2 + body[2..].iter().position(|&b| b == 0).unwrap_or(BODY_LEN - 2);
                if body[end..].iter().any(|&b| b != 0) {
                    return Err(PayloadError::Padding);
                }
                parse_cleartext(&body[..end]).map(Self::Record)
            }
            FLAG_HASHED => Ok(Self::Hashed(RecordDigest::from_bytes(body.try_into().expect("31")))),
            FLAG_FRAGMENT => {
                let id = u16::from_be_bytes([body[0], body[1]]);
                let (index, total, len) = (body[2] >> 4, body[2] & 0x0f, body[3] as usize);
                if total == 0 || index >= total || len > FRAGMENT_DATA_LEN {
                    return Err(PayloadError::Fragment);
                }
                if body[4 + len..].iter().any(|&b| b != 0) {
                    return Err(PayloadError::Padding);
                }
                Ok(Self::Fragment(Fragment { id, index, total, data: body[4..4 + len].to_vec() }))
            }
            FLAG_DUMMY => Ok(Self::Dummy),
            other => Err(PayloadError::UnknownFlags(other)),
        }
    }
}

/// Splits a record's cleartext across fragments sharing a random id.
pub fn fragment_record<R: Rng + ?Sized>(key: &RecordKey, rng: &mut R) -> Result<Vec<Fragment>, PayloadError> {
    let clear = record_cleartext(key);
    let chunks: Vec<&[u8]> = clear.chunks(FRAGMENT_DATA_LEN).collect();
    if chunks.len() > MAX_FRAGMENTS {
        return Err(PayloadError::TooLong);
    }
    let id: u16 = rng.random();
    let total = chunks.len() as u8;
    Ok(chunks.into_iter().enumerate().map(|(i, c)| Fragment { id, index: i as u8, total, data: c.to_vec() }).collect())
}
