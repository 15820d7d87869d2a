use std::collections::HashSet;

use thiserror::Error;

use super::codec::{answer_data, answer_from_data, deflate, inflate, put_u24, resolve_path_with, Cursor};
use super::{ListDecodeError, ListError, ListRecord, PopularityList, RecordContent};
use crate::dns::{DomainName, RecordKey, RecordType};

const FLAG_COMPRESSED: u8 = 0x01;
const ADD_INLINE: u8 = 0;
const ADD_CNAME: u8 = 1;
const ADD_LB: u8 = 2;

/// Records to drop and records to add, applied in that order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MembershipUpdate {
    pub removals: Vec<RecordKey>,
    pub additions: Vec<ListRecord>,
}

impl MembershipUpdate {
    pub fn is_empty(&self) -> bool {
        self.removals.is_empty() && self.additions.is_empty()
    }
}

/// Pool pointer shift: entry index (u24 on the wire) and answer-count offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LbUpdate {
    pub entry: u32,
    pub offset: i16,
}

/// Bytes per LB update on the wire.
pub const LB_UPDATE_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum UpdateDecodeError {
    #[error(transparent)]
    Decode(#[from] ListDecodeError),
    #[error("removal refers to a node without a {0} record")]
    UnknownRecord(RecordKey),
    #[error("unknown addition kind {0}")]
    UnknownKind(u8),
    #[error("unknown flag bits {0:#04x}")]
    UnknownFlags(u8),
}

fn put_name(out: &mut Vec<u8>, name: &DomainName) {
    out.push(name.label_count() as u8);
    for l in name.labels() {
        out.push(l.len() as u8);
        out.extend_from_slice(l.as_bytes());
    }
}

fn read_name(cur: &mut Cursor<'_>) -> Result<DomainName, ListDecodeError> {
    let n = cur.u8()?;
    let mut labels = Vec::with_capacity(usize::from(n));
    for _ in 0..n {
        labels.push(cur.len_prefixed()?);
    }
    Ok(DomainName::from_labels(&labels)?)
}

/// Encodes `update` against `before`, the list the receiver currently holds.
/// Removals are addressed by node-index paths into `before`.
pub fn encode_membership(
    before: &PopularityList,
    update: &MembershipUpdate,
    compress: bool,
) -> Result<Vec<u8>, ListError> {
    let wanted: HashSet<&DomainName> = update.removals.iter().map(|k| &k.name).collect();
    let paths = before.node_paths(&wanted);
    let mut body = Vec::new();
    body.extend_from_slice(&(update.removals.len() as u32).to_be_bytes());
    for key in &update.removals {
        if !before.contains(key) {
            return Err(ListError::UnknownRecord(key.clone()));
        }
        let path = &paths[&key.name];
        body.push(path.len() as u8);
        for &idx in path {
            put_u24(&mut body, idx);
        }
        body.extend_from_slice(&key.rtype.code().to_be_bytes());
    }
    body.extend_from_slice(&(update.additions.len() as u32).to_be_bytes());
    for record in &update.additions {
        let record = record.clone().normalized()?;
        put_name(&mut body, &record.key.name);
        body.extend_from_slice(&record.key.rtype.code().to_be_bytes());
        match &record.content {
            RecordContent::Inline(a) => {
                body.push(ADD_INLINE);
                let data = answer_data(a);
                body.push(data.len() as u8);
                body.extend_from_slice(&data);
            }
            RecordContent::Cname(target) => {
                body.push(ADD_CNAME);
                put_name(&mut body, target);
            }
            RecordContent::LoadBalanced { answers, current } => {
                body.push(ADD_LB);
                body.push(answers.len() as u8);
                body.push(*current);
                for a in answers {
                    let data = answer_data(a);
                    body.push(data.len() as u8);
                    body.extend_from_slice(&data);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(body.len() + 1);
    if compress {
        out.push(FLAG_COMPRESSED);
        out.extend_from_slice(&deflate(&body));
    } else {
        out.push(0);
        out.extend_from_slice(&body);
    }
    Ok(out)
}

/// Decodes a membership update against the receiver's current list.
pub fn decode_membership(before: &PopularityList, bytes: &[u8]) -> Result<MembershipUpdate, UpdateDecodeError> {
    let (&flags, rest) = bytes.split_first().ok_or(ListDecodeError::Truncated)?;
    if flags & !FLAG_COMPRESSED != 0 {
        return Err(UpdateDecodeError::UnknownFlags(flags));
    }
    let inflated;
    let body = if flags & FLAG_COMPRESSED != 0 {
        inflated = inflate(rest).map_err(ListDecodeError::from)?;
        &inflated[..]
    } else {
        rest
    };
    let mut cur = Cursor::new(body);
    let removal_count = cur.u32()?;
    let table = if removal_count > 0 { before.node_table() } else { Vec::new() };
    let mut removals = Vec::with_capacity((removal_count as usize).min(cur.remaining() / 4));
    for _ in 0..removal_count {
        let n = cur.u8()?;
        let mut path = Vec::with_capacity(usize::from(n));
        for _ in 0..n {
            path.push(cur.u24()?);
        }
        let rtype = RecordType(cur.u16()?);
        let idx = resolve_path_with(|i| table.get(i).map(|n| n.parent), &path)?;
        let key = RecordKey::new(table[idx].name.clone(), rtype);
        if !before.contains(&key) {
            return Err(UpdateDecodeError::UnknownRecord(key));
        }
        removals.push(key);
    }
    let addition_count = cur.u32()?;
    let mut additions = Vec::with_capacity((addition_count as usize).min(cur.remaining() / 4));
    for _ in 0..addition_count {
        let name = read_name(&mut cur)?;
        let rtype = RecordType(cur.u16()?);
        let key = RecordKey::new(name, rtype);
        let record = match cur.u8()? {
            ADD_INLINE => {
                let data = cur.len_prefixed()?;
                ListRecord { key, content: RecordContent::Inline(answer_from_data(rtype, data)?) }
            }
            ADD_CNAME => ListRecord { key, content: RecordContent::Cname(read_name(&mut cur)?) },
            ADD_LB => {
                let count = cur.u8()?;
                let current = cur.u8()?;
                let mut answers = Vec::with_capacity(usize::from(count));
                for _ in 0..count {
                    answers.push(answer_from_data(rtype, cur.len_prefixed()?)?);
                }
                ListRecord::load_balanced(key, answers, current)
            }
            other => return Err(UpdateDecodeError::UnknownKind(other)),
        };
        additions.push(record);
    }
    cur.finish()?;
    Ok(MembershipUpdate { removals, additions })
}

/// LB batch body: count u16, then entry u24 and offset i16 per update.
pub fn encode_lb_batch(updates: &[LbUpdate]) -> Vec<u8> {
    assert!(updates.len() <= usize::from(u16::MAX), "LB batch too large");
    let mut out = Vec::with_capacity(2 + LB_UPDATE_LEN * updates.len());
    out.extend_from_slice(&(updates.len() as u16).to_be_bytes());
    for u in updates {
        put_u24(&mut out, u.entry);
        out.extend_from_slice(&u.offset.to_be_bytes());
    }
    out
}

pub fn decode_lb_batch(bytes: &[u8]) -> Result<Vec<LbUpdate>, ListDecodeError> {
    let mut cur = Cursor::new(bytes);
    let n = cur.u16()?;
    let mut out = Vec::with_capacity(usize::from(n));
    for _ in 0..n {
        let entry = cur.u24()?;
        let offset = cur.u16()? as i16;
        out.push(LbUpdate { entry, offset });
    }
    cur.finish()?;
    Ok(out)
}
