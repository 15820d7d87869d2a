use std::collections::{BTreeMap, HashMap};

use super::crypto::MixPayload;
use super::payload::{parse_cleartext, Fragment, RecordDigest, VotePayload};
use crate::dns::RecordKey;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReassemblyOutcome {
    pub records: Vec<RecordKey>,
    pub incomplete: usize,
    pub ambiguous: usize,
}

/// Groups a round's fragments by id. Sets with a repeated index or
/// disagreeing totals are treated as an id collision and dropped.
#[derive(Clone, Debug, Default)]
pub struct Reassembler {
    groups: BTreeMap<u16, Vec<Fragment>>,
}

impl Reassembler {
    pub fn push(&mut self, fragment: Fragment) {
        self.groups.entry(fragment.id).or_default().push(fragment);
    }

    pub fn finish(self) -> ReassemblyOutcome {
        let mut out = ReassemblyOutcome::default();
        for (_, mut frags) in self.groups {
            let total = frags[0].total;
            frags.sort_by_key(|f| f.index);
            let collided = frags.iter().any(|f| f.total != total) || frags.windows(2).any(|w| w[0].index == w[1].index);
            if collided {
                out.ambiguous += 1;
            } else if frags.len() != usize::from(total) {
                out.incomplete += 1;
            } else {
                let joined: Vec<u8> = frags.iter().flat_map(|f| f.data.iter().copied()).collect();
                match parse_cleartext(&joined) {
                    Ok(key) => out.records.push(key),
                    Err(_) => out.ambiguous += 1,
                }
            }
        }
        out
    }
}

/// Server table of record hashes it can interpret, plus hashed votes it
/// could not, awaiting cleartext from their senders.
#[derive(Clone, Debug, Default)]
pub struct RecordBook {
    known: HashMap<RecordDigest, RecordKey>,
    unresolved: BTreeMap<RecordDigest, u32>,
}

impl RecordBook {
    pub fn learn(&mut self, key: &RecordKey) -> u32 {
        let digest = RecordDigest::of(key);
        self.known.entry(digest).or_insert_with(|| key.clone());
        self.unresolved.remove(&digest).unwrap_or(0)
    }

    pub fn resolve(&self, digest: &RecordDigest) -> Option<&RecordKey> {
        self.known.get(digest)
    }

    pub fn unresolved(&self) -> impl Iterator<Item = &RecordDigest> {
        self.unresolved.keys()
    }

    pub fn clear_unresolved(&mut self) {
        self.unresolved.clear();
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TallyOutcome {
    /// One entry per counted vote.
    pub votes: Vec<RecordKey>,
    pub dummies: usize,
    pub malformed: usize,
    /// Hashed votes held back until their cleartext arrives.
    pub unknown: usize,
    pub reassembly: ReassemblyOutcome,
}

/// Interprets a round's exit payloads. Votes held for an unknown hash are
/// credited in the round their cleartext is reassembled.
pub fn tally_payloads(payloads: &[MixPayload], book: &mut RecordBook) -> TallyOutcome {
    let mut out = TallyOutcome::default();
    let mut frags = Reassembler::default();
    for payload in payloads {
        match VotePayload::decode(payload) {
            Ok(VotePayload::Record(key)) => {
                book.learn(&key);
                out.votes.push(key);
            }
            Ok(VotePayload::Hashed(digest)) => match book.resolve(&digest) {
                Some(key) => out.votes.push(key.clone()),
                None => {
                    *book.unresolved.entry(digest).or_default() += 1;
                    out.unknown += 1;
                }
            },
            Ok(VotePayload::Fragment(f)) => frags.push(f),
            Ok(VotePayload::Dummy) => out.dummies += 1,
            Err(_) => out.malformed += 1,
        }
    }
    out.reassembly = frags.finish();
    for key in &out.reassembly.records {
        let held = book.learn(key);
        out.votes.extend(std::iter::repeat_n(key.clone(), held as usize));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dns::RecordType;
    use crate::mixnet::payload::fragment_record;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(s: &str) -> RecordKey {
        RecordKey::new(s.parse().unwrap(), RecordType::A)
    }

    fn long(tag: &str) -> RecordKey {
        key(&format!("{tag}{}.{}.example.org", "x".repeat(30), "y".repeat(12)))
    }

    #[test]
    fn interleaved_sets_both_rebuild() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = fragment_record(&long("a"), &mut rng).unwrap();
        let mut b = fragment_record(&long("b"), &mut rng).unwrap();
        for f in &mut b {
            f.id = a[0].id.wrapping_add(1);
        }
        let mut r = Reassembler::default();
        for (x, y) in a.iter().zip(&b) {
            r.push(y.clone());
            r.push(x.clone());
        }
        let mut got = r.finish().records;
        got.sort();
        assert_eq!(got, vec![long("a"), long("b")]);
    }

    #[test]
    fn id_collision_discards_both() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = fragment_record(&long("a"), &mut rng).unwrap();
        let mut b = fragment_record(&long("b"), &mut rng).unwrap();
        for f in &mut b {
            f.id = a[0].id;
        }
        let mut r = Reassembler::default();
        a.into_iter().chain(b).for_each(|f| r.push(f));
        assert_eq!(r.finish(), ReassemblyOutcome { records: vec![], incomplete: 0, ambiguous: 1 });
    }

    #[test]
    fn incomplete_set_is_dropped() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut a = fragment_record(&long("a"), &mut rng).unwrap();
        a.pop();
        let mut r = Reassembler::default();
        a.into_iter().for_each(|f| r.push(f));
        assert_eq!(r.finish().incomplete, 1);
    }

    #[test]
    fn hashed_votes_are_credited_after_cleartext() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let mut book = RecordBook::default();
        let k = long("z");
        let hashed = VotePayload::for_record(&k);
        assert!(matches!(hashed, VotePayload::Hashed(_)));
        let round1: Vec<MixPayload> =
            vec![hashed.encode(&mut rng), hashed.encode(&mut rng), VotePayload::Dummy.encode(&mut rng)];
        let t1 = tally_payloads(&round1, &mut book);
        assert_eq!((t1.votes.len(), t1.unknown, t1.dummies), (0, 2, 1));
        assert_eq!(book.unresolved().count(), 1);
        let round2: Vec<MixPayload> = fragment_record(&k, &mut rng)
            .unwrap()
            .into_iter()
            .map(|f| VotePayload::Fragment(f).encode(&mut rng))
            .collect();
        let t2 = tally_payloads(&round2, &mut book);
        assert_eq!(t2.votes, vec![k.clone(), k.clone()]);
        let t3 = tally_payloads(&[hashed.encode(&mut rng)], &mut book);
        assert_eq!(t3.votes, vec![k]);
    }
}
