use std::collections::HashSet;
use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

use super::{AnswerSlot, ListError, ListNode, ListRecord, PopularityList};
use crate::dns::{DomainName, NameError, RecordAnswer, RecordKey, RecordType};

pub const LIST_MAGIC: [u8; 4] = *b"LLPL";
pub const LIST_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;

const FLAG_COMPRESSED: u8 = 0x01;
const FLAG_FLATTENED: u8 = 0x02;
const KIND_INLINE: u8 = 0;
const KIND_POOL: u8 = 1;
const KIND_CNAME: u8 = 2;
/// Bound on inflated body size.
const MAX_BODY: u64 = 256 << 20;

#[derive(Debug, Error)]
pub enum ListDecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown flag bits {0:#04x}")]
    UnknownFlags(u8),
    #[error("truncated input")]
    Truncated,
    #[error("trailing bytes after body")]
    TrailingBytes,
    #[error("decompression failed: {0}")]
    Decompress(#[from] std::io::Error),
    #[error("invalid name: {0}")]
    Name(#[from] NameError),
    #[error("invalid reference: {0}")]
    InvalidReference(&'static str),
    #[error("invalid answer data for type {0}")]
    InvalidAnswer(u16),
    #[error("header counts disagree with the body")]
    CountMismatch,
    #[error("body is not in canonical form")]
    NonCanonical,
    #[error(transparent)]
    List(#[from] ListError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SerializeOptions {
    pub compress: bool,
    /// Collapse CNAME chains before encoding.
    pub flatten_cnames: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ListHeader {
    pub version: u8,
    pub compressed: bool,
    pub flattened: bool,
    pub record_count: u32,
    pub lb_entry_count: u32,
}

/// Reads the uncompressed list header.
pub fn peek_header(bytes: &[u8]) -> Result<ListHeader, ListDecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(ListDecodeError::Truncated);
    }
    if bytes[..4] != LIST_MAGIC {
        return Err(ListDecodeError::BadMagic);
    }
    if bytes[4] != LIST_VERSION {
        return Err(ListDecodeError::UnsupportedVersion(bytes[4]));
    }
    let flags = bytes[5];
    if flags & !(FLAG_COMPRESSED | FLAG_FLATTENED) != 0 {
        return Err(ListDecodeError::UnknownFlags(flags));
    }
    Ok(ListHeader {
        version: bytes[4],
        compressed: flags & FLAG_COMPRESSED != 0,
        flattened: flags & FLAG_FLATTENED != 0,
        record_count: u32::from_be_bytes(bytes[6..10].try_into().expect("4 bytes")),
        lb_entry_count: u32::from_be_bytes(bytes[10..14].try_into().expect("4 bytes")),
    })
}

pub(crate) fn put_u24(out: &mut Vec<u8>, v: u32) {
    debug_assert!(v < 1 << 24);
    out.extend_from_slice(&v.to_be_bytes()[1..]);
}

pub(crate) fn deflate(body: &[u8]) -> Vec<u8> {
    let mut enc = DeflateEncoder::new(Vec::with_capacity(body.len() / 2), Compression::new(6));
    enc.write_all(body).expect("in-memory write");
    enc.finish().expect("in-memory write")
}

pub(crate) fn inflate(data: &[u8]) -> Result<Vec<u8>, std::io::Error> {
    let mut out = Vec::new();
    DeflateDecoder::new(data).take(MAX_BODY).read_to_end(&mut out)?;
    Ok(out)
}

pub(crate) fn answer_data(a: &RecordAnswer) -> Vec<u8> {
    a.content_bytes()
}

impl PopularityList {
    pub fn serialize(&self, compress: bool) -> Vec<u8> {
        self.serialize_with(SerializeOptions { compress, flatten_cnames: false })
    }

    pub fn serialize_with(&self, opts: SerializeOptions) -> Vec<u8> {
        if opts.flatten_cnames {
            return self.flattened().encode(opts.compress, FLAG_FLATTENED);
        }
        self.encode(opts.compress, 0)
    }

    fn encode(&self, compress: bool, extra_flags: u8) -> Vec<u8> {
        let body = self.encode_body();
        let flags = extra_flags | if compress { FLAG_COMPRESSED } else { 0 };
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(&LIST_MAGIC);
        out.push(LIST_VERSION);
        out.push(flags);
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(&(self.lb_entry_count() as u32).to_be_bytes());
        if compress {
            out.extend_from_slice(&deflate(&body));
        } else {
            out.extend_from_slice(&body);
        }
        out
    }

    pub(crate) fn encode_body(&self) -> Vec<u8> {
        let wanted: HashSet<&DomainName> =
            self.cname_targets().chain(self.pool().groups().iter().map(|g| &g.key.name)).collect();
        let paths = self.node_paths(&wanted);
        let mut out = Vec::with_capacity(self.len() * 12 + self.pool().byte_len() * 2);
        out.push(0);
        out.push(0);
        out.extend_from_slice(&(self.roots().len() as u16).to_be_bytes());
        let mut labels = Vec::new();
        for node in self.roots() {
            self.encode_node(node, &mut labels, &paths, &mut out);
        }
        for g in self.pool().groups() {
            let owner = paths[&g.key.name].last().copied().expect("non-empty path");
            put_u24(&mut out, owner);
            out.push(g.answers.len() as u8);
            out.push(g.current);
            for a in &g.answers {
                let data = answer_data(a);
                out.push(data.len() as u8);
                out.extend_from_slice(&data);
            }
        }
        out
    }

    fn encode_node(
        &self,
        node: &ListNode,
        labels: &mut Vec<String>,
        paths: &std::collections::HashMap<DomainName, Vec<u32>>,
        out: &mut Vec<u8>,
    ) {
        let depth = labels.len();
        labels.extend(node.labels().iter().cloned());
        out.push(node.labels().len() as u8);
        for l in node.labels() {
            out.push(l.len() as u8);
            out.extend_from_slice(l.as_bytes());
        }
        out.push(node.answers().len() as u8);
        for slot in node.answers() {
            match slot {
                AnswerSlot::Inline(a) => {
                    out.push(KIND_INLINE);
                    out.extend_from_slice(&a.rtype().code().to_be_bytes());
                    let data = answer_data(a);
                    out.push(data.len() as u8);
                    out.extend_from_slice(&data);
                }
                AnswerSlot::PoolPointer(t) => {
                    out.push(KIND_POOL);
                    let key = RecordKey::new(DomainName::from_normalized(labels.clone()), *t);
                    let entry = self.pool().entry_index(&key).expect("pool group for pointer");
                    put_u24(out, entry as u32);
                }
                AnswerSlot::CnamePointer(target) => {
                    out.push(KIND_CNAME);
                    let path = &paths[target];
                    out.push(path.len() as u8);
                    for &idx in path {
                        put_u24(out, idx);
                    }
                }
            }
        }
        out.extend_from_slice(&(node.children().len() as u16).to_be_bytes());
        for child in node.children() {
            self.encode_node(child, labels, paths, out);
        }
        labels.truncate(depth);
    }

    /// Decodes canonical list bytes. Anything that would not re-encode to the
    /// same body is rejected.
    pub fn deserialize(bytes: &[u8]) -> Result<Self, ListDecodeError> {
        let header = peek_header(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        let inflated;
        let body = if header.compressed {
            inflated = inflate(payload)?;
            &inflated[..]
        } else {
            payload
        };
        let list = decode_body(body)?;
        if list.len() != header.record_count as usize || list.lb_entry_count() != header.lb_entry_count as usize {
            return Err(ListDecodeError::CountMismatch);
        }
        if list.encode_body() != body {
            return Err(ListDecodeError::NonCanonical);
        }
        Ok(list)
    }
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], ListDecodeError> {
        if self.remaining() < n {
            return Err(ListDecodeError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, ListDecodeError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, ListDecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u24(&mut self) -> Result<u32, ListDecodeError> {
        let b = self.take(3)?;
        Ok(u32::from_be_bytes([0, b[0], b[1], b[2]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, ListDecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn len_prefixed(&mut self) -> Result<&'a [u8], ListDecodeError> {
        let n = usize::from(self.u8()?);
        self.take(n)
    }

    pub(crate) fn finish(&self) -> Result<(), ListDecodeError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(ListDecodeError::TrailingBytes)
        }
    }
}

pub(crate) fn answer_from_data(rtype: RecordType, data: &[u8]) -> Result<RecordAnswer, ListDecodeError> {
    match RecordAnswer::from_address_bytes(data) {
        Some(a) if a.rtype() == rtype => Ok(a),
        _ => Err(ListDecodeError::InvalidAnswer(rtype.code())),
    }
}

enum RawSlot {
    Inline(RecordAnswer),
    Pool(u32),
    Cname(Vec<u32>),
}

struct RawNode {
    parent: Option<u32>,
    labels: Vec<String>,
    slots: Vec<RawSlot>,
}

struct RawGroup {
    owner: u32,
    answers: Vec<RecordAnswer>,
    current: u8,
}

fn decode_labels(cur: &mut Cursor<'_>, count: usize) -> Result<Vec<String>, ListDecodeError> {
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        labels.push(cur.len_prefixed()?);
    }
    // Validates and lowercases; rejects anything non-normalized via re-encode.
    Ok(DomainName::from_labels(&labels)?.labels().to_vec())
}

fn decode_body(body: &[u8]) -> Result<PopularityList, ListDecodeError> {
    let mut cur = Cursor::new(body);
    if cur.u8()? != 0 || cur.u8()? != 0 {
        return Err(ListDecodeError::NonCanonical);
    }
    let root_children = cur.u16()?;
    let mut nodes: Vec<RawNode> = Vec::new();
    // (parent, children left to read)
    let mut stack: Vec<(Option<u32>, u16)> = vec![(None, root_children)];
    while let Some(top) = stack.last_mut() {
        if top.1 == 0 {
            stack.pop();
            continue;
        }
        top.1 -= 1;
        let parent = top.0;
        let label_count = usize::from(cur.u8()?);
        if label_count == 0 {
            return Err(ListDecodeError::InvalidReference("node without labels"));
        }
        let labels = decode_labels(&mut cur, label_count)?;
        let answer_count = cur.u8()?;
        let mut slots = Vec::with_capacity(usize::from(answer_count));
        for _ in 0..answer_count {
            slots.push(match cur.u8()? {
                KIND_INLINE => {
                    let rtype = RecordType(cur.u16()?);
                    let data = cur.len_prefixed()?;
                    RawSlot::Inline(answer_from_data(rtype, data)?)
                }
                KIND_POOL => RawSlot::Pool(cur.u24()?),
                KIND_CNAME => {
                    let n = cur.u8()?;
                    let mut path = Vec::with_capacity(usize::from(n));
                    for _ in 0..n {
                        path.push(cur.u24()?);
                    }
                    RawSlot::Cname(path)
                }
                _ => return Err(ListDecodeError::InvalidReference("unknown answer kind")),
            });
        }
        let child_count = cur.u16()?;
        let idx = nodes.len() as u32;
        if nodes.len() >= 1 << 24 {
            return Err(ListDecodeError::InvalidReference("too many nodes"));
        }
        nodes.push(RawNode { parent, labels, slots });
        stack.push((Some(idx), child_count));
    }

    let mut groups = Vec::new();
    while cur.remaining() > 0 {
        let owner = cur.u24()?;
        let count = cur.u8()?;
        let current = cur.u8()?;
        let mut answers = Vec::with_capacity(usize::from(count));
        for _ in 0..count {
            let data = cur.len_prefixed()?;
            let rtype = match data.len() {
                4 => RecordType::A,
                16 => RecordType::AAAA,
                _ => return Err(ListDecodeError::InvalidAnswer(0)),
            };
            answers.push(answer_from_data(rtype, data)?);
        }
        groups.push(RawGroup { owner, answers, current });
    }
    cur.finish()?;

    let mut names: Vec<DomainName> = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let mut labels = match node.parent {
            Some(p) => names[p as usize].labels().to_vec(),
            None => Vec::new(),
        };
        labels.extend(node.labels.iter().cloned());
        names.push(DomainName::from_labels(&labels)?);
    }

    let mut records = Vec::new();
    for (idx, node) in nodes.iter().enumerate() {
        let name = &names[idx];
        for slot in &node.slots {
            records.push(match slot {
                RawSlot::Inline(a) => ListRecord::inline(name.clone(), a.clone()),
                RawSlot::Pool(entry) => {
                    let g = groups
                        .get(*entry as usize)
                        .ok_or(ListDecodeError::InvalidReference("pool entry out of range"))?;
                    if g.owner as usize != idx {
                        return Err(ListDecodeError::InvalidReference("pool group owner mismatch"));
                    }
                    let rtype = g.answers.first().ok_or(ListDecodeError::InvalidReference("empty pool group"))?.rtype();
                    ListRecord::load_balanced(RecordKey::new(name.clone(), rtype), g.answers.clone(), g.current)
                }
                RawSlot::Cname(path) => {
                    let target = resolve_path(&nodes, path)?;
                    ListRecord::cname(name.clone(), names[target].clone())
                }
            });
        }
    }
    Ok(PopularityList::build(records)?)
}

/// Checks that `path` walks parent to child from a top-level node and
/// returns the final node index.
pub(crate) fn resolve_path_with(
    parents: impl Fn(usize) -> Option<Option<u32>>,
    path: &[u32],
) -> Result<usize, ListDecodeError> {
    let mut expected_parent = None;
    for &idx in path {
        let parent = parents(idx as usize).ok_or(ListDecodeError::InvalidReference("node index out of range"))?;
        if parent != expected_parent {
            return Err(ListDecodeError::InvalidReference("path is not a parent chain"));
        }
        expected_parent = Some(idx);
    }
    expected_parent.map(|i| i as usize).ok_or(ListDecodeError::InvalidReference("empty node path"))
}

fn resolve_path(nodes: &[RawNode], path: &[u32]) -> Result<usize, ListDecodeError> {
    resolve_path_with(|i| nodes.get(i).map(|n| n.parent), path)
}
