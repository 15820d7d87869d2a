//! The client-side popularity list: a merged-label tree of DNS records with
//! CNAME pointers and a shared pool of load-balanced answers.

mod codec;
mod pool;
mod update;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::mem;

use thiserror::Error;

use crate::dns::{DomainName, RecordAnswer, RecordKey, RecordType, ResourceRecord};

pub use codec::{peek_header, ListDecodeError, ListHeader, SerializeOptions, LIST_MAGIC, LIST_VERSION};
pub use pool::{LoadBalancingPool, PoolGroup};
pub use update::{
    decode_lb_batch, decode_membership, encode_lb_batch, encode_membership, LbUpdate, MembershipUpdate,
    UpdateDecodeError, LB_UPDATE_LEN,
};

/// Longest CNAME chain followed by lookups and accepted by inserts.
pub const MAX_CNAME_DEPTH: usize = 16;
/// Record limit keeping every preorder node index inside a u24.
pub const MAX_RECORDS: usize = 1 << 23;
pub const MAX_POOL_GROUP: usize = u8::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ListError {
    #[error("record {0} is already present")]
    DuplicateRecord(RecordKey),
    #[error("record {0} is not present")]
    UnknownRecord(RecordKey),
    #[error("CNAME target of {0} is not in the list")]
    BrokenClosure(RecordKey),
    #[error("CNAME chain from {0} loops or is longer than {MAX_CNAME_DEPTH}")]
    CnameLoop(RecordKey),
    #[error("{0} shares its name with a CNAME")]
    CnameConflict(RecordKey),
    #[error("invalid record {key}: {reason}")]
    InvalidRecord { key: RecordKey, reason: &'static str },
    #[error("LB entry {index} out of range ({len} entries)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(&'static str),
}

/// What a record resolves to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecordContent {
    Inline(RecordAnswer),
    Cname(DomainName),
    LoadBalanced { answers: Vec<RecordAnswer>, current: u8 },
}

/// Flat view of one (domain, type) entry of the list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListRecord {
    pub key: RecordKey,
    pub content: RecordContent,
}

impl ListRecord {
    pub fn inline(name: DomainName, answer: RecordAnswer) -> Self {
        Self { key: RecordKey::new(name, answer.rtype()), content: RecordContent::Inline(answer) }
    }

    pub fn cname(name: DomainName, target: DomainName) -> Self {
        Self { key: RecordKey::new(name, RecordType::CNAME), content: RecordContent::Cname(target) }
    }

    pub fn load_balanced(key: RecordKey, answers: Vec<RecordAnswer>, current: u8) -> Self {
        Self { key, content: RecordContent::LoadBalanced { answers, current } }
    }

    pub fn is_load_balanced(&self) -> bool {
        matches!(self.content, RecordContent::LoadBalanced { .. })
    }

    /// The single answer a lookup of this record returns.
    pub fn selected_answer(&self) -> RecordAnswer {
        match &self.content {
            RecordContent::Inline(a) => a.clone(),
            RecordContent::Cname(t) => RecordAnswer::Cname(t.clone()),
            RecordContent::LoadBalanced { answers, current } => answers[usize::from(*current)].clone(),
        }
    }

    /// Validates the record and brings pooled answers into canonical order,
    /// keeping `current` on the same answer.
    pub fn normalized(self) -> Result<Self, ListError> {
        let invalid = |key: &RecordKey, reason| ListError::InvalidRecord { key: key.clone(), reason };
        let key = self.key;
        let content = match self.content {
            RecordContent::Inline(a) => {
                if a.rtype() != key.rtype || key.rtype == RecordType::CNAME {
                    return Err(invalid(&key, "inline answer must be A or AAAA of the key type"));
                }
                RecordContent::Inline(a)
            }
            RecordContent::Cname(t) => {
                if key.rtype != RecordType::CNAME {
                    return Err(invalid(&key, "CNAME content under a non-CNAME key"));
                }
                RecordContent::Cname(t)
            }
            RecordContent::LoadBalanced { mut answers, current } => {
                if key.rtype != RecordType::A && key.rtype != RecordType::AAAA {
                    return Err(invalid(&key, "only A and AAAA records can be load-balanced"));
                }
                let selected = answers
                    .get(usize::from(current))
                    .cloned()
                    .ok_or_else(|| invalid(&key, "current index outside the answer set"))?;
                if answers.iter().any(|a| a.rtype() != key.rtype) {
                    return Err(invalid(&key, "pooled answer of the wrong type"));
                }
                answers.sort();
                answers.dedup();
                if answers.len() > MAX_POOL_GROUP {
                    return Err(ListError::CapacityExceeded("more than 255 pooled answers"));
                }
                let current = answers.binary_search(&selected).expect("selected answer kept") as u8;
                RecordContent::LoadBalanced { answers, current }
            }
        };
        Ok(Self { key, content })
    }
}

/// One answer position inside a tree node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AnswerSlot {
    Inline(RecordAnswer),
    /// Resolved through the pool group keyed by (node name, type).
    PoolPointer(RecordType),
    CnamePointer(DomainName),
}

impl AnswerSlot {
    pub fn rtype(&self) -> RecordType {
        match self {
            Self::Inline(a) => a.rtype(),
            Self::PoolPointer(t) => *t,
            Self::CnamePointer(_) => RecordType::CNAME,
        }
    }
}

/// A tree node covering one or more merged labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ListNode {
    labels: Vec<String>,
    answers: Vec<AnswerSlot>,
    children: Vec<ListNode>,
}

impl ListNode {
    /// Merged labels, most-significant first.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// At most one slot per type, sorted by type code.
    pub fn answers(&self) -> &[AnswerSlot] {
        &self.answers
    }

    /// Sorted by first label; first labels are distinct.
    pub fn children(&self) -> &[ListNode] {
        &self.children
    }

    fn slot(&self, rtype: RecordType) -> Option<&AnswerSlot> {
        self.answers.iter().find(|s| s.rtype() == rtype)
    }
}

fn child_position(children: &[ListNode], first: &str) -> Result<usize, usize> {
    children.binary_search_by(|c| c.labels[0].as_str().cmp(first))
}

fn find_node<'a>(mut children: &'a [ListNode], mut labels: &[String]) -> Option<&'a ListNode> {
    loop {
        let idx = child_position(children, labels.first()?).ok()?;
        let node = &children[idx];
        let rest = labels.strip_prefix(node.labels.as_slice())?;
        if rest.is_empty() {
            return Some(node);
        }
        children = &node.children;
        labels = rest;
    }
}

fn node_for_insert<'a>(children: &'a mut Vec<ListNode>, labels: &[String]) -> Result<&'a mut ListNode, ListError> {
    match child_position(children, &labels[0]) {
        Err(pos) => {
            if children.len() >= usize::from(u16::MAX) {
                return Err(ListError::CapacityExceeded("more than 65535 children"));
            }
            children.insert(pos, ListNode { labels: labels.to_vec(), answers: Vec::new(), children: Vec::new() });
            Ok(&mut children[pos])
        }
        Ok(idx) => {
            let node = &mut children[idx];
            let common = node.labels.iter().zip(labels).take_while(|(a, b)| a == b).count();
            if common < node.labels.len() {
                let tail = node.labels.split_off(common);
                let moved = ListNode {
                    labels: tail,
                    answers: mem::take(&mut node.answers),
                    children: mem::take(&mut node.children),
                };
                node.children = vec![moved];
            }
            if common == labels.len() {
                Ok(node)
            } else {
                node_for_insert(&mut node.children, &labels[common..])
            }
        }
    }
}

fn remove_slot(children: &mut Vec<ListNode>, labels: &[String], rtype: RecordType) -> Option<AnswerSlot> {
    let idx = child_position(children, labels.first()?).ok()?;
    let node = &mut children[idx];
    let rest = labels.strip_prefix(node.labels.as_slice())?;
    let slot = if rest.is_empty() {
        let pos = node.answers.iter().position(|s| s.rtype() == rtype)?;
        node.answers.remove(pos)
    } else {
        remove_slot(&mut node.children, rest, rtype)?
    };
    if node.answers.is_empty() {
        match node.children.len() {
            0 => {
                children.remove(idx);
            }
            1 => {
                let only = node.children.pop().expect("one child");
                node.labels.extend(only.labels);
                node.answers = only.answers;
                node.children = only.children;
            }
            _ => {}
        }
    }
    Some(slot)
}

/// Outcome of a list lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LookupResult {
    /// Followed CNAME records in chain order, then the terminal answer.
    Hit(Vec<ResourceRecord>),
    Miss,
}

impl LookupResult {
    pub fn is_hit(&self) -> bool {
        matches!(self, Self::Hit(_))
    }
}

/// Preorder position of a node, as used by the wire formats.
#[derive(Clone, Debug)]
pub(crate) struct NodeInfo {
    pub name: DomainName,
    pub parent: Option<u32>,
}

#[derive(Clone, Debug, Default)]
pub struct PopularityList {
    roots: Vec<ListNode>,
    pool: LoadBalancingPool,
    generation: u64,
    record_count: usize,
    cname_refs: HashMap<DomainName, u32>,
    detached: BTreeSet<RecordKey>,
}

/// Structural equality: generation and bookkeeping are ignored.
impl PartialEq for PopularityList {
    fn eq(&self, other: &Self) -> bool {
        self.roots == other.roots && self.pool == other.pool
    }
}

impl Eq for PopularityList {}

enum Undo {
    Added(RecordKey),
    Removed(ListRecord),
}

impl PopularityList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a list from a record set whose CNAME targets are all included.
    pub fn build<I: IntoIterator<Item = ListRecord>>(records: I) -> Result<Self, ListError> {
        let mut list = Self::new();
        let mut cnames = Vec::new();
        for record in records {
            if record.key.rtype == RecordType::CNAME {
                cnames.push(record.key.clone());
            }
            list.raw_insert(record)?;
        }
        for key in &cnames {
            list.check_chain(key)?;
        }
        Ok(list)
    }

    pub fn roots(&self) -> &[ListNode] {
        &self.roots
    }

    pub fn pool(&self) -> &LoadBalancingPool {
        &self.pool
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn set_generation(&mut self, generation: u64) {
        self.generation = generation;
    }

    /// Number of (domain, type) records.
    pub fn len(&self) -> usize {
        self.record_count
    }

    pub fn is_empty(&self) -> bool {
        self.record_count == 0
    }

    pub fn lb_entry_count(&self) -> usize {
        self.pool.len()
    }

    /// LB record keys in entry-index order.
    pub fn lb_entry_order(&self) -> impl Iterator<Item = &RecordKey> {
        self.pool.groups().iter().map(|g| &g.key)
    }

    pub fn node_count(&self) -> usize {
        fn count(nodes: &[ListNode]) -> usize {
            nodes.iter().map(|n| 1 + count(&n.children)).sum()
        }
        count(&self.roots)
    }

    /// Records kept only because a CNAME still points at their name.
    pub fn detached(&self) -> &BTreeSet<RecordKey> {
        &self.detached
    }

    pub fn find_node(&self, name: &DomainName) -> Option<&ListNode> {
        find_node(&self.roots, name.labels())
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.find_node(&key.name).is_some_and(|n| n.slot(key.rtype).is_some())
    }

    pub fn get(&self, key: &RecordKey) -> Option<ListRecord> {
        let slot = self.find_node(&key.name)?.slot(key.rtype)?;
        Some(self.record_from_slot(key.name.clone(), slot))
    }

    fn record_from_slot(&self, name: DomainName, slot: &AnswerSlot) -> ListRecord {
        match slot {
            AnswerSlot::Inline(a) => ListRecord::inline(name, a.clone()),
            AnswerSlot::CnamePointer(t) => ListRecord::cname(name, t.clone()),
            AnswerSlot::PoolPointer(t) => {
                let key = RecordKey::new(name, *t);
                let g = self.pool.group(&key).expect("pool group for pointer");
                ListRecord::load_balanced(key, g.answers.clone(), g.current)
            }
        }
    }

    fn resolve_slot(&self, name: &DomainName, slot: &AnswerSlot) -> RecordAnswer {
        match slot {
            AnswerSlot::Inline(a) => a.clone(),
            AnswerSlot::CnamePointer(t) => RecordAnswer::Cname(t.clone()),
            AnswerSlot::PoolPointer(t) => self
                .pool
                .group(&RecordKey::new(name.clone(), *t))
                .expect("pool group for pointer")
                .current_answer()
                .clone(),
        }
    }

    /// All records, sorted by key.
    pub fn records(&self) -> Vec<ListRecord> {
        let mut out = Vec::with_capacity(self.record_count);
        let mut labels = Vec::new();
        self.collect_records(&self.roots, &mut labels, &mut out);
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }

    fn collect_records(&self, nodes: &[ListNode], labels: &mut Vec<String>, out: &mut Vec<ListRecord>) {
        for node in nodes {
            let depth = labels.len();
            labels.extend(node.labels.iter().cloned());
            if !node.answers.is_empty() {
                let name = DomainName::from_normalized(labels.clone());
                for slot in &node.answers {
                    out.push(self.record_from_slot(name.clone(), slot));
                }
            }
            self.collect_records(&node.children, labels, out);
            labels.truncate(depth);
        }
    }

    /// Resolves `key`, following CNAMEs inside the list.
    pub fn lookup(&self, key: &RecordKey) -> LookupResult {
        let mut chain = Vec::new();
        let mut name = key.name.clone();
        for _ in 0..=MAX_CNAME_DEPTH {
            let Some(node) = self.find_node(&name) else {
                return LookupResult::Miss;
            };
            if let Some(slot) = node.slot(key.rtype) {
                let answer = self.resolve_slot(&name, slot);
                chain.push(ResourceRecord::new(name, answer));
                return LookupResult::Hit(chain);
            }
            match node.slot(RecordType::CNAME) {
                Some(AnswerSlot::CnamePointer(target)) => {
                    chain.push(ResourceRecord::new(name, RecordAnswer::Cname(target.clone())));
                    name = target.clone();
                }
                _ => return LookupResult::Miss,
            }
        }
        LookupResult::Miss
    }

    /// Moves the selected answer of LB entry `entry` by `offset` answers.
    pub fn apply_lb_update(&mut self, entry: usize, offset: i64) -> Result<(), ListError> {
        let len = self.pool.len();
        let group = self.pool.group_at_mut(entry).ok_or(ListError::IndexOutOfRange { index: entry, len })?;
        group.advance(offset);
        self.generation += 1;
        Ok(())
    }

    /// Applies removals then additions atomically: on error the list is left
    /// exactly as it was.
    pub fn apply_membership_update(&mut self, update: &MembershipUpdate) -> Result<(), ListError> {
        let saved_detached = self.detached.clone();
        let mut log = Vec::new();
        match self.apply_logged(update, &mut log) {
            Ok(()) => {
                self.generation += 1;
                Ok(())
            }
            Err(e) => {
                for op in log.into_iter().rev() {
                    match op {
                        Undo::Added(key) => {
                            self.raw_remove(&key).expect("undo of an addition");
                        }
                        Undo::Removed(record) => {
                            self.raw_insert(record).expect("undo of a removal");
                        }
                    }
                }
                self.detached = saved_detached;
                Err(e)
            }
        }
    }

    /// Adds one record (closure-checked).
    pub fn insert(&mut self, record: ListRecord) -> Result<(), ListError> {
        self.apply_membership_update(&MembershipUpdate { removals: vec![], additions: vec![record] })
    }

    /// Removes one record (closure-preserving).
    pub fn remove(&mut self, key: &RecordKey) -> Result<(), ListError> {
        self.apply_membership_update(&MembershipUpdate { removals: vec![key.clone()], additions: vec![] })
    }

    fn apply_logged(&mut self, update: &MembershipUpdate, log: &mut Vec<Undo>) -> Result<(), ListError> {
        for key in &update.removals {
            if self.detached.contains(key) || !self.contains(key) {
                return Err(ListError::UnknownRecord(key.clone()));
            }
            let node = self.find_node(&key.name).expect("contained");
            let last_live = node.answers.iter().all(|s| {
                s.rtype() == key.rtype || self.detached.contains(&RecordKey::new(key.name.clone(), s.rtype()))
            });
            if last_live && self.cname_refs.contains_key(&key.name) {
                self.detached.insert(key.clone());
                continue;
            }
            let record = self.raw_remove(key)?;
            log.push(Undo::Removed(record));
        }
        let mut added_cnames = Vec::new();
        for record in &update.additions {
            // A live record at the name takes over from detached ones.
            let stale: Vec<RecordKey> = self.detached.iter().filter(|k| k.name == record.key.name).cloned().collect();
            for k in stale {
                self.detached.remove(&k);
                let old = self.raw_remove(&k)?;
                log.push(Undo::Removed(old));
            }
            let key = record.key.clone();
            self.raw_insert(record.clone())?;
            if key.rtype == RecordType::CNAME {
                added_cnames.push(key.clone());
            }
            log.push(Undo::Added(key));
        }
        self.settle_detached(log)?;
        for key in &added_cnames {
            self.check_chain(key)?;
        }
        Ok(())
    }

    /// Drops detached records that are no longer needed for closure.
    fn settle_detached(&mut self, log: &mut Vec<Undo>) -> Result<(), ListError> {
        loop {
            let releasable: Vec<RecordKey> = self
                .detached
                .iter()
                .filter(|key| {
                    !self.cname_refs.contains_key(&key.name)
                        || self.find_node(&key.name).is_some_and(|n| {
                            n.answers
                                .iter()
                                .any(|s| !self.detached.contains(&RecordKey::new(key.name.clone(), s.rtype())))
                        })
                })
                .cloned()
                .collect();
            if releasable.is_empty() {
                return Ok(());
            }
            for key in releasable {
                self.detached.remove(&key);
                let record = self.raw_remove(&key)?;
                log.push(Undo::Removed(record));
            }
        }
    }

    fn check_chain(&self, start: &RecordKey) -> Result<(), ListError> {
        let mut seen = HashSet::new();
        let mut name = start.name.clone();
        loop {
            if !seen.insert(name.clone()) || seen.len() > MAX_CNAME_DEPTH {
                return Err(ListError::CnameLoop(start.clone()));
            }
            let node = self.find_node(&name).filter(|n| !n.answers.is_empty());
            let Some(node) = node else {
                return Err(ListError::BrokenClosure(start.clone()));
            };
            match node.slot(RecordType::CNAME) {
                Some(AnswerSlot::CnamePointer(t)) => name = t.clone(),
                _ => return Ok(()),
            }
        }
    }

    /// Inserts without closure checks.
    fn raw_insert(&mut self, record: ListRecord) -> Result<(), ListError> {
        let record = record.normalized()?;
        let key = &record.key;
        if !key.rtype.is_supported() {
            return Err(ListError::InvalidRecord { key: key.clone(), reason: "unsupported type" });
        }
        if self.record_count >= MAX_RECORDS {
            return Err(ListError::CapacityExceeded("too many records"));
        }
        if let Some(node) = self.find_node(&key.name) {
            if node.slot(key.rtype).is_some() {
                return Err(ListError::DuplicateRecord(key.clone()));
            }
            let has_cname = node.slot(RecordType::CNAME).is_some();
            if has_cname || (key.rtype == RecordType::CNAME && !node.answers.is_empty()) {
                return Err(ListError::CnameConflict(key.clone()));
            }
        }
        let node = node_for_insert(&mut self.roots, record.key.name.labels())?;
        let slot = match record.content {
            RecordContent::Inline(a) => AnswerSlot::Inline(a),
            RecordContent::Cname(target) => {
                *self.cname_refs.entry(target.clone()).or_default() += 1;
                AnswerSlot::CnamePointer(target)
            }
            RecordContent::LoadBalanced { answers, current } => {
                self.pool.insert(PoolGroup { key: record.key.clone(), answers, current });
                AnswerSlot::PoolPointer(record.key.rtype)
            }
        };
        let pos = node.answers.partition_point(|s| s.rtype() < slot.rtype());
        node.answers.insert(pos, slot);
        self.record_count += 1;
        Ok(())
    }

    /// Removes without closure checks.
    fn raw_remove(&mut self, key: &RecordKey) -> Result<ListRecord, ListError> {
        let slot = remove_slot(&mut self.roots, key.name.labels(), key.rtype)
            .ok_or_else(|| ListError::UnknownRecord(key.clone()))?;
        self.record_count -= 1;
        let record = match slot {
            AnswerSlot::Inline(a) => ListRecord::inline(key.name.clone(), a),
            AnswerSlot::CnamePointer(target) => {
                let refs = self.cname_refs.get_mut(&target).expect("counted target");
                *refs -= 1;
                if *refs == 0 {
                    self.cname_refs.remove(&target);
                }
                ListRecord::cname(key.name.clone(), target)
            }
            AnswerSlot::PoolPointer(_) => {
                let g = self.pool.remove(key).expect("pool group for pointer");
                ListRecord::load_balanced(g.key, g.answers, g.current)
            }
        };
        Ok(record)
    }

    /// Copy of the list with CNAME chains collapsed: chain heads carry the
    /// terminal's selected A/AAAA answers inline and intermediate redirects
    /// are dropped.
    pub fn flattened(&self) -> PopularityList {
        let mut out = Vec::with_capacity(self.record_count);
        for record in self.records() {
            match &record.content {
                RecordContent::Cname(_) if self.cname_refs.contains_key(&record.key.name) => {}
                RecordContent::Cname(target) => {
                    let mut terminal = target.clone();
                    while let Some(ListRecord { content: RecordContent::Cname(next), .. }) =
                        self.get(&RecordKey::new(terminal.clone(), RecordType::CNAME))
                    {
                        terminal = next;
                    }
                    for rtype in [RecordType::A, RecordType::AAAA] {
                        if let Some(r) = self.get(&RecordKey::new(terminal.clone(), rtype)) {
                            out.push(ListRecord::inline(record.key.name.clone(), r.selected_answer()));
                        }
                    }
                }
                _ => out.push(record),
            }
        }
        let mut flat = PopularityList::build(out).expect("flattening keeps the list valid");
        flat.generation = self.generation;
        flat
    }

    /// Preorder node table (index = wire node index).
    pub(crate) fn node_table(&self) -> Vec<NodeInfo> {
        fn walk(nodes: &[ListNode], parent: Option<u32>, labels: &mut Vec<String>, out: &mut Vec<NodeInfo>) {
            for node in nodes {
                let depth = labels.len();
                labels.extend(node.labels.iter().cloned());
                let idx = out.len() as u32;
                out.push(NodeInfo { name: DomainName::from_normalized(labels.clone()), parent });
                walk(&node.children, Some(idx), labels, out);
                labels.truncate(depth);
            }
        }
        let mut out = Vec::new();
        walk(&self.roots, None, &mut Vec::new(), &mut out);
        out
    }

    /// Root-to-node index paths for the requested names.
    pub(crate) fn node_paths(&self, wanted: &HashSet<&DomainName>) -> HashMap<DomainName, Vec<u32>> {
        fn walk(
            nodes: &[ListNode],
            counter: &mut u32,
            labels: &mut Vec<String>,
            path: &mut Vec<u32>,
            wanted: &HashSet<&DomainName>,
            out: &mut HashMap<DomainName, Vec<u32>>,
        ) {
            for node in nodes {
                let depth = labels.len();
                labels.extend(node.labels.iter().cloned());
                path.push(*counter);
                *counter += 1;
                let name = DomainName::from_normalized(labels.clone());
                if wanted.contains(&name) {
                    out.insert(name, path.clone());
                }
                walk(&node.children, counter, labels, path, wanted, out);
                path.pop();
                labels.truncate(depth);
            }
        }
        let mut out = HashMap::with_capacity(wanted.len());
        walk(&self.roots, &mut 0, &mut Vec::new(), &mut Vec::new(), wanted, &mut out);
        out
    }

    pub(crate) fn cname_targets(&self) -> impl Iterator<Item = &DomainName> {
        self.cname_refs.keys()
    }
}

#[cfg(test)]
mod tests;
