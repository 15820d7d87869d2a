//! Minimal RFC 1035 message codec for the local stub resolver.
//!
//! Only what the resolver needs: single-question queries and responses made
//! of A, AAAA and CNAME records in class IN. Names are written uncompressed;
//! compressed names are accepted on input.

use std::net::{Ipv4Addr, Ipv6Addr};

use thiserror::Error;

use super::name::{DomainName, NameError};
use super::record::{RecordAnswer, RecordKey, RecordType, ResourceRecord};

pub const HEADER_LEN: usize = 12;
pub const CLASS_IN: u16 = 1;

const FLAG_QR: u16 = 0x8000;
const FLAG_RD: u16 = 0x0100;
const FLAG_RA: u16 = 0x0080;
const MAX_POINTER_HOPS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DnsError {
    #[error("malformed message: {0}")]
    MalformedMessage(&'static str),
    #[error("unsupported question type {qtype} class {qclass}")]
    UnsupportedType { qtype: u16, qclass: u16 },
    #[error("invalid name: {0}")]
    InvalidName(#[from] NameError),
}

/// Response codes the resolver emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rcode {
    NoError,
    FormErr,
    ServFail,
    NxDomain,
    NotImp,
    Refused,
    Other(u8),
}

impl Rcode {
    pub fn code(self) -> u8 {
        match self {
            Self::NoError => 0,
            Self::FormErr => 1,
            Self::ServFail => 2,
            Self::NxDomain => 3,
            Self::NotImp => 4,
            Self::Refused => 5,
            Self::Other(c) => c & 0x0f,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code & 0x0f {
            0 => Self::NoError,
            1 => Self::FormErr,
            2 => Self::ServFail,
            3 => Self::NxDomain,
            4 => Self::NotImp,
            5 => Self::Refused,
            c => Self::Other(c),
        }
    }
}

/// A decoded response: only supported answer types are kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsResponse {
    pub id: u16,
    pub rcode: Rcode,
    pub question: Option<RecordKey>,
    pub answers: Vec<(ResourceRecord, u32)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DnsError> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(DnsError::MalformedMessage("truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DnsError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DnsError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads a possibly compressed name, returning wire-order labels.
    fn name(&mut self) -> Result<Vec<Vec<u8>>, DnsError> {
        let mut labels = Vec::new();
        let mut pos = self.pos;
        let mut jumped = false;
        let mut hops = 0;
        loop {
            let len = *self.buf.get(pos).ok_or(DnsError::MalformedMessage("truncated name"))?;
            match len {
                0 => {
                    pos += 1;
                    break;
                }
                l if l & 0xc0 == 0xc0 => {
                    let lo = *self.buf.get(pos + 1).ok_or(DnsError::MalformedMessage("truncated pointer"))?;
                    let target = (usize::from(l & 0x3f) << 8) | usize::from(lo);
                    if !jumped {
                        self.pos = pos + 2;
                        jumped = true;
                    }
                    hops += 1;
                    if hops > MAX_POINTER_HOPS || target >= self.buf.len() {
                        return Err(DnsError::MalformedMessage("bad compression pointer"));
                    }
                    pos = target;
                }
                l if l & 0xc0 != 0 => {
                    return Err(DnsError::MalformedMessage("reserved label type"));
                }
                l => {
                    let start = pos + 1;
                    let end = start + usize::from(l);
                    let label = self.buf.get(start..end).ok_or(DnsError::MalformedMessage("truncated label"))?;
                    labels.push(label.to_vec());
                    pos = end;
                }
            }
        }
        if !jumped {
            self.pos = pos;
        }
        Ok(labels)
    }
}

fn write_name(out: &mut Vec<u8>, name: &DomainName) {
    for label in name.labels().iter().rev() {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
}

fn write_header(out: &mut Vec<u8>, id: u16, flags: u16, counts: [u16; 4]) {
    out.extend_from_slice(&id.to_be_bytes());
    out.extend_from_slice(&flags.to_be_bytes());
    for c in counts {
        out.extend_from_slice(&c.to_be_bytes());
    }
}

fn write_question(out: &mut Vec<u8>, key: &RecordKey) {
    write_name(out, &key.name);
    out.extend_from_slice(&key.rtype.0.to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
}

/// Encodes a recursive query for `key`.
pub fn encode_query(id: u16, key: &RecordKey) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + key.name.wire_len() + 4);
    write_header(&mut out, id, FLAG_RD, [1, 0, 0, 0]);
    write_question(&mut out, key);
    out
}

/// Reads the transaction id of any message that has at least a header.
pub fn message_id(bytes: &[u8]) -> Option<u16> {
    (bytes.len() >= 2).then(|| u16::from_be_bytes([bytes[0], bytes[1]]))
}

/// Parses a single-question query.
///
/// Extra sections (for example an EDNS OPT record) are ignored; no option in
/// them is honoured.
pub fn parse_query(bytes: &[u8]) -> Result<(RecordKey, u16), DnsError> {
    let mut r = Reader::new(bytes);
    let id = r.u16()?;
    let flags = r.u16()?;
    let qdcount = r.u16()?;
    let _ancount = r.u16()?;
    let _nscount = r.u16()?;
    let _arcount = r.u16()?;
    if flags & FLAG_QR != 0 {
        return Err(DnsError::MalformedMessage("not a query"));
    }
    if (flags >> 11) & 0x0f != 0 {
        return Err(DnsError::MalformedMessage("unsupported opcode"));
    }
    if qdcount != 1 {
        return Err(DnsError::MalformedMessage("expected exactly one question"));
    }
    let labels = r.name()?;
    let qtype = r.u16()?;
    let qclass = r.u16()?;
    let name = DomainName::from_wire_labels(&labels)?;
    let rtype = RecordType(qtype);
    if qclass != CLASS_IN || !rtype.is_supported() {
        return Err(DnsError::UnsupportedType { qtype, qclass });
    }
    Ok((RecordKey::new(name, rtype), id))
}

fn response_flags(rcode: Rcode) -> u16 {
    FLAG_QR | FLAG_RD | FLAG_RA | u16::from(rcode.code())
}

/// Builds a NOERROR response carrying `answers` in order, every record with
/// the given TTL.
pub fn build_response(id: u16, key: &RecordKey, answers: &[ResourceRecord], ttl: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 64 * (answers.len() + 1));
    write_header(&mut out, id, response_flags(Rcode::NoError), [1, answers.len() as u16, 0, 0]);
    write_question(&mut out, key);
    for rr in answers {
        write_name(&mut out, &rr.name);
        out.extend_from_slice(&rr.answer.rtype().0.to_be_bytes());
        out.extend_from_slice(&CLASS_IN.to_be_bytes());
        out.extend_from_slice(&ttl.to_be_bytes());
        match &rr.answer {
            RecordAnswer::A(a) => {
                out.extend_from_slice(&4u16.to_be_bytes());
                out.extend_from_slice(&a.octets());
            }
            RecordAnswer::Aaaa(a) => {
                out.extend_from_slice(&16u16.to_be_bytes());
                out.extend_from_slice(&a.octets());
            }
            RecordAnswer::Cname(target) => {
                out.extend_from_slice(&(target.wire_len() as u16).to_be_bytes());
                write_name(&mut out, target);
            }
        }
    }
    out
}

/// Builds an answerless response with the given code (NXDOMAIN, SERVFAIL...).
pub fn build_error_response(id: u16, key: &RecordKey, rcode: Rcode) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + key.name.wire_len() + 4);
    write_header(&mut out, id, response_flags(rcode), [1, 0, 0, 0]);
    write_question(&mut out, key);
    out
}

/// FORMERR for a message whose question could not be read.
pub fn build_formerr(id: u16) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    write_header(&mut out, id, response_flags(Rcode::FormErr), [0, 0, 0, 0]);
    out
}

/// Parses a response, keeping A/AAAA/CNAME answers in class IN.
pub fn parse_response(bytes: &[u8]) -> Result<DnsResponse, DnsError> {
    let mut r = Reader::new(bytes);
    let id = r.u16()?;
    let flags = r.u16()?;
    let qdcount = r.u16()?;
    let ancount = r.u16()?;
    let _nscount = r.u16()?;
    let _arcount = r.u16()?;
    if flags & FLAG_QR == 0 {
        return Err(DnsError::MalformedMessage("not a response"));
    }
    let rcode = Rcode::from_code((flags & 0x0f) as u8);
    let mut question = None;
    for i in 0..qdcount {
        let labels = r.name()?;
        let qtype = r.u16()?;
        let _qclass = r.u16()?;
        if i == 0 {
            question = DomainName::from_wire_labels(&labels).ok().map(|n| RecordKey::new(n, RecordType(qtype)));
        }
    }
    let mut answers = Vec::new();
    for _ in 0..ancount {
        let owner = r.name()?;
        let rtype = RecordType(r.u16()?);
        let class = r.u16()?;
        let ttl = r.u32()?;
        let rdlen = usize::from(r.u16()?);
        let rdata_start = r.pos;
        let rdata = r.take(rdlen)?;
        if class != CLASS_IN {
            continue;
        }
        let answer = match rtype {
            RecordType::A if rdlen == 4 => RecordAnswer::A(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3])),
            RecordType::AAAA if rdlen == 16 => {
                let mut o = [0u8; 16];
                o.copy_from_slice(rdata);
                RecordAnswer::Aaaa(Ipv6Addr::from(o))
            }
            RecordType::CNAME => {
                let mut sub = Reader { buf: bytes, pos: rdata_start };
                let target = sub.name()?;
                if sub.pos > rdata_start + rdlen {
                    return Err(DnsError::MalformedMessage("CNAME overruns rdata"));
                }
                RecordAnswer::Cname(DomainName::from_wire_labels(&target)?)
            }
            RecordType::A | RecordType::AAAA => return Err(DnsError::MalformedMessage("bad address length")),
            _ => continue,
        };
        let owner = DomainName::from_wire_labels(&owner)?;
        answers.push((ResourceRecord::new(owner, answer), ttl));
    }
    Ok(DnsResponse { id, rcode, question, answers })
}
