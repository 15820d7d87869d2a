use crate::dns::{RecordAnswer, RecordKey};

/// Answers of one actively load-balanced record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolGroup {
    pub key: RecordKey,
    /// Sorted by content bytes, no duplicates, 1..=255 entries.
    pub answers: Vec<RecordAnswer>,
    pub current: u8,
}

impl PoolGroup {
    pub fn current_answer(&self) -> &RecordAnswer {
        &self.answers[usize::from(self.current)]
    }

    /// Size in bytes of this group's answers inside the pool.
    pub fn byte_len(&self) -> usize {
        self.answers.iter().map(answer_len).sum()
    }

    /// Moves the current index by `offset` answers, wrapping around.
    pub fn advance(&mut self, offset: i64) {
        let n = self.answers.len() as i64;
        let next = (i64::from(self.current) + offset).rem_euclid(n);
        self.current = next as u8;
    }
}

fn answer_len(a: &RecordAnswer) -> usize {
    a.content_bytes().len()
}

/// Shared pool of load-balanced answers appended after the tree.
///
/// Groups are kept in canonical `RecordKey` order, so a group's position is
/// the LB entry index that pool-pointer updates address.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadBalancingPool {
    groups: Vec<PoolGroup>,
}

impl LoadBalancingPool {
    pub fn groups(&self) -> &[PoolGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn entry_index(&self, key: &RecordKey) -> Option<usize> {
        self.groups.binary_search_by(|g| g.key.cmp(key)).ok()
    }

    pub fn group(&self, key: &RecordKey) -> Option<&PoolGroup> {
        self.entry_index(key).map(|i| &self.groups[i])
    }

    pub fn group_at(&self, entry: usize) -> Option<&PoolGroup> {
        self.groups.get(entry)
    }

    pub(crate) fn group_at_mut(&mut self, entry: usize) -> Option<&mut PoolGroup> {
        self.groups.get_mut(entry)
    }

    /// Byte offset of the start of group `entry` within the pool.
    pub fn group_start_offset(&self, entry: usize) -> usize {
        self.groups[..entry].iter().map(PoolGroup::byte_len).sum()
    }

    /// Byte offset of the currently selected answer of group `entry`; always
    /// an answer boundary.
    pub fn answer_byte_offset(&self, entry: usize) -> usize {
        let g = &self.groups[entry];
        self.group_start_offset(entry) + g.answers[..usize::from(g.current)].iter().map(answer_len).sum::<usize>()
    }

    /// Total answer bytes held by the pool.
    pub fn byte_len(&self) -> usize {
        self.groups.iter().map(PoolGroup::byte_len).sum()
    }

    pub(crate) fn insert(&mut self, group: PoolGroup) -> bool {
        match self.groups.binary_search_by(|g| g.key.cmp(&group.key)) {
            Ok(_) => false,
            Err(pos) => {
                self.groups.insert(pos, group);
                true
            }
        }
    }

    pub(crate) fn remove(&mut self, key: &RecordKey) -> Option<PoolGroup> {
        let i = self.entry_index(key)?;
        Some(self.groups.remove(i))
    }
}
