//! Framed session protocol between the server and client daemons.
//!
//! Frame: length u32 (type byte plus body) || type u8 || body.

pub mod auth;
pub mod hub;
pub mod loopback;
pub mod registry;
pub mod session;

use thiserror::Error;

use crate::list::{decode_lb_batch, encode_lb_batch, LbUpdate, ListDecodeError};
use crate::mixnet::client::MisbehaviorReport;
use crate::mixnet::payload::{RecordDigest, BODY_LEN};
use crate::mixnet::round::RoundContext;
use crate::mixnet::{decode_batch, encode_batch, BatchError, ClientId, KeyElement, MixPacket};

pub use auth::{sign, verify, Signature, SIGNATURE_LEN};
pub use hub::{Action, ConnId, HubConfig, HubStats, RoundSummary, ServerHub};
pub use registry::{ClientRegistry, RegisteredClient, RegistryError};
pub use session::{ClientSession, SessionConfig, SessionError, SessionStats};

pub const FRAME_HEADER_LEN: usize = 4;
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    ListRequest = 0x01,
    ListSnapshot = 0x02,
    LbUpdateBatch = 0x03,
    MembershipUpdate = 0x04,
    RoundStart = 0x05,
    VoteBatch = 0x06,
    AckBatch = 0x07,
    MisbehaviorReport = 0x08,
    HashRequest = 0x09,
    Error = 0x0A,
    Hello = 0x0B,
    Welcome = 0x0C,
}

impl FrameType {
    pub fn from_code(code: u8) -> Option<Self> {
        use FrameType::*;
        Some(match code {
            0x01 => ListRequest,
            0x02 => ListSnapshot,
            0x03 => LbUpdateBatch,
            0x04 => MembershipUpdate,
            0x05 => RoundStart,
            0x06 => VoteBatch,
            0x07 => AckBatch,
            0x08 => MisbehaviorReport,
            0x09 => HashRequest,
            0x0A => Error,
            0x0B => Hello,
            0x0C => Welcome,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame length {0} out of range")]
    FrameLength(usize),
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("malformed {0:?} body")]
    Body(FrameType),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    LbBatch(#[from] ListDecodeError),
}

/// Body length announced by a frame header; includes the type byte.
pub fn frame_len(header: [u8; FRAME_HEADER_LEN]) -> Result<usize, ProtocolError> {
    let len = u32::from_be_bytes(header) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameLength(len));
    }
    Ok(len)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub client: ClientId,
    pub timestamp: u64,
    pub signature: Signature,
}

impl Hello {
    pub fn signed_bytes(client: ClientId, timestamp: u64) -> Vec<u8> {
        let mut m = b"LLUAD-hello".to_vec();
        m.extend_from_slice(&client.to_be_bytes());
        m.extend_from_slice(&timestamp.to_be_bytes());
        m
    }

    pub fn new(client: ClientId, timestamp: u64, secret: &crate::mixnet::Scalar) -> Self {
        Self { client, timestamp, signature: sign(secret, &Self::signed_bytes(client, timestamp)) }
    }

    /// Valid when signed by `key` and within `skew` seconds of `now`.
    pub fn verify(&self, key: &KeyElement, now: u64, skew: u64) -> bool {
        self.timestamp.abs_diff(now) <= skew
            && verify(key, &Self::signed_bytes(self.client, self.timestamp), &self.signature)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Welcome {
    pub server_key: KeyElement,
    pub quota: u16,
    pub n_shuffle: u8,
    pub directory: Vec<KeyElement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    ListRequest,
    ListSnapshot {
        generation: u64,
        list: Vec<u8>,
    },
    LbUpdateBatch(Vec<LbUpdate>),
    /// Decoding needs the receiver's current list, so the body stays raw.
    MembershipUpdate(Vec<u8>),
    RoundStart(RoundContext),
    VoteBatch {
        packets: Vec<MixPacket>,
        invalid: usize,
    },
    AckBatch {
        packets: Vec<MixPacket>,
        invalid: usize,
    },
    MisbehaviorReport(MisbehaviorReport),
    HashRequest(Vec<RecordDigest>),
    Error {
        code: u8,
        message: String,
    },
    Hello(Hello),
    Welcome(Welcome),
}

pub mod error_code {
    pub const AUTH: u8 = 1;
    pub const PROTOCOL: u8 = 2;
    pub const ROUND_ABORTED: u8 = 3;
}

impl Message {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Self::ListRequest => FrameType::ListRequest,
            Self::ListSnapshot { .. } => FrameType::ListSnapshot,
            Self::LbUpdateBatch(_) => FrameType::LbUpdateBatch,
            Self::MembershipUpdate(_) => FrameType::MembershipUpdate,
            Self::RoundStart(_) => FrameType::RoundStart,
            Self::VoteBatch { .. } => FrameType::VoteBatch,
            Self::AckBatch { .. } => FrameType::AckBatch,
            Self::MisbehaviorReport(_) => FrameType::MisbehaviorReport,
            Self::HashRequest(_) => FrameType::HashRequest,
            Self::Error { .. } => FrameType::Error,
            Self::Hello(_) => FrameType::Hello,
            Self::Welcome(_) => FrameType::Welcome,
        }
    }

    pub fn body(&self) -> Vec<u8> {
        match self {
            Self::ListRequest => Vec::new(),
            Self::ListSnapshot { generation, list } => [&generation.to_be_bytes()[..], list].concat(),
            Self::LbUpdateBatch(u) => encode_lb_batch(u),
            Self::MembershipUpdate(b) => b.clone(),
            Self::RoundStart(ctx) => ctx.to_bytes(),
            Self::VoteBatch { packets, .. } | Self::AckBatch { packets, .. } => {
                encode_batch(packets).expect("batch within u16 count")
            }
            Self::MisbehaviorReport(r) => r.to_bytes(),
            Self::HashRequest(digests) => {
                let mut out = (digests.len() as u16).to_be_bytes().to_vec();
                for d in digests {
                    out.extend_from_slice(&d.to_bytes());
                }
                out
            }
            Self::Error { code, message } => [&[*code][..], message.as_bytes()].concat(),
            Self::Hello(h) => {
                let mut out = h.client.to_be_bytes().to_vec();
                out.extend_from_slice(&h.timestamp.to_be_bytes());
                out.extend_from_slice(&h.signature.0);
                out
            }
            Self::Welcome(w) => {
                let mut out = w.server_key.as_bytes().to_vec();
                out.extend_from_slice(&w.quota.to_be_bytes());
                out.push(w.n_shuffle);
                out.extend_from_slice(&(w.directory.len() as u32).to_be_bytes());
                for k in &w.directory {
                    out.extend_from_slice(k.as_bytes());
                }
                out
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = self.body();
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + 1 + body.len());
        out.extend_from_slice(&((body.len() + 1) as u32).to_be_bytes());
        out.push(self.frame_type() as u8);
        out.extend_from_slice(&body);
        out
    }

    /// Decodes `type || body` as read after the length prefix.
    pub fn decode(frame: &[u8]) -> Result<Self, ProtocolError> {
        let (&code, body) = frame.split_first().ok_or(ProtocolError::FrameLength(0))?;
        let kind = FrameType::from_code(code).ok_or(ProtocolError::UnknownType(code))?;
        let bad = || ProtocolError::Body(kind);
        Ok(match kind {
            FrameType::ListRequest if body.is_empty() => Self::ListRequest,
            FrameType::ListRequest => return Err(bad()),
            FrameType::ListSnapshot => {
                let (g, list) = body.split_first_chunk::<8>().ok_or_else(bad)?;
                Self::ListSnapshot { generation: u64::from_be_bytes(*g), list: list.to_vec() }
            }
            FrameType::LbUpdateBatch => Self::LbUpdateBatch(decode_lb_batch(body)?),
            FrameType::MembershipUpdate => Self::MembershipUpdate(body.to_vec()),
            FrameType::RoundStart => Self::RoundStart(RoundContext::from_bytes(body).map_err(|_| bad())?),
            FrameType::VoteBatch => {
                let (packets, invalid) = decode_batch(body)?;
                Self::VoteBatch { packets, invalid }
            }
            FrameType::AckBatch => {
                let (packets, invalid) = decode_batch(body)?;
                Self::AckBatch { packets, invalid }
            }
            FrameType::MisbehaviorReport => {
                Self::MisbehaviorReport(MisbehaviorReport::from_bytes(body).ok_or_else(bad)?)
            }
            FrameType::HashRequest => {
                let (n, rest) = body.split_first_chunk::<2>().ok_or_else(bad)?;
                let n = u16::from_be_bytes(*n) as usize;
                if rest.len() != n * BODY_LEN {
                    return Err(bad());
                }
                Self::HashRequest(
                    rest.chunks_exact(BODY_LEN).map(|c| RecordDigest::from_bytes(c.try_into().expect("31"))).collect(),
                )
            }
            FrameType::Error => {
                let (&code, msg) = body.split_first().ok_or_else(bad)?;
                Self::Error { code, message: String::from_utf8_lossy(msg).into_owned() }
            }
            FrameType::Hello => {
                if body.len() != 4 + 8 + SIGNATURE_LEN {
                    return Err(bad());
                }
                Self::Hello(Hello {
                    client: u32::from_be_bytes(body[..4].try_into().expect("4")),
                    timestamp: u64::from_be_bytes(body[4..12].try_into().expect("8")),
                    signature: Signature(body[12..].try_into().expect("64")),
                })
            }
            FrameType::Welcome => {
                if body.len() < 39 {
                    return Err(bad());
                }
                let key = |b: &[u8]| KeyElement::from_bytes(b.try_into().expect("32")).map_err(|_| bad());
                let server_key = key(&body[..32])?;
                let quota = u16::from_be_bytes([body[32], body[33]]);
                let n_shuffle = body[34];
                let n = u32::from_be_bytes(body[35..39].try_into().expect("4")) as usize;
                let rest = &body[39..];
                if rest.len() != n * 32 {
                    return Err(bad());
                }
                let directory = rest.chunks_exact(32).map(key).collect::<Result<_, _>>()?;
                Self::Welcome(Welcome { server_key, quota, n_shuffle, directory })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixnet::{MixPayload, NextHopHash, Scalar};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn round_trip(m: Message) {
        let bytes = m.encode();
        let len = frame_len(bytes[..4].try_into().unwrap()).unwrap();
        assert_eq!(len, bytes.len() - 4);
        assert_eq!(bytes[4], m.frame_type() as u8);
        assert_eq!(Message::decode(&bytes[4..]).unwrap(), m);
    }

    #[test]
    fn every_message_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let secret = Scalar::random(&mut rng);
        let packet = MixPacket { p: secret.public(), h: NextHopHash([1; 16]), d: MixPayload([2; 32]) };
        let digest = RecordDigest { rtype: crate::dns::RecordType::A, digest: [9; 29] };
        for m in [
            Message::ListRequest,
            Message::ListSnapshot { generation: 5, list: vec![1, 2, 3] },
            Message::LbUpdateBatch(vec![LbUpdate { entry: 70_000, offset: -3 }]),
            Message::MembershipUpdate(vec![0, 1]),
            Message::RoundStart(RoundContext::new(4, 10, vec![true, false, true])),
            Message::VoteBatch { packets: vec![packet; 3], invalid: 0 },
            Message::AckBatch { packets: vec![], invalid: 0 },
            Message::MisbehaviorReport(MisbehaviorReport { t_timestamp: 3, path: vec![1, 2] }),
            Message::HashRequest(vec![digest, digest]),
            Message::Error { code: error_code::AUTH, message: "no".into() },
            Message::Hello(Hello::new(7, 1000, &secret)),
            Message::Welcome(Welcome {
                server_key: secret.public(),
                quota: 10,
                n_shuffle: 10,
                directory: vec![secret.public()],
            }),
        ] {
            round_trip(m);
        }
    }

    #[test]
    fn vote_batch_frame_is_fixed_size() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = MixPacket { p: Scalar::random(&mut rng).public(), h: NextHopHash([0; 16]), d: MixPayload([0; 32]) };
        assert_eq!(Message::VoteBatch { packets: vec![p; 10], invalid: 0 }.encode().len(), 4 + 1 + 2 + 800);
    }

    #[test]
    fn hello_checks_signature_and_skew() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let secret = Scalar::random(&mut rng);
        let h = Hello::new(4, 1_000, &secret);
        assert!(h.verify(&secret.public(), 1_100, 300));
        assert!(!h.verify(&secret.public(), 2_000, 300));
        assert!(!h.verify(&Scalar::random(&mut rng).public(), 1_000, 300));
        let forged = Hello { client: 5, ..h };
        assert!(!forged.verify(&secret.public(), 1_000, 300));
    }

    #[test]
    fn bad_frames_are_rejected() {
        assert!(matches!(frame_len([0, 0, 0, 0]), Err(ProtocolError::FrameLength(0))));
        assert!(frame_len([0xff, 0, 0, 0]).is_err());
        assert!(matches!(Message::decode(&[0x42]), Err(ProtocolError::UnknownType(0x42))));
        assert!(matches!(Message::decode(&[0x01, 0]), Err(ProtocolError::Body(FrameType::ListRequest))));
        assert!(Message::decode(&[0x06, 0, 1]).is_err());
    }
}
