use std::collections::HashMap;
use std::net::{Ipv4Addr, Ipv6Addr};

use proptest::prelude::*;
use proptest::sample::Index;

use super::*;

fn name(s: &str) -> DomainName {
    s.parse().unwrap()
}

fn a(s: &str, ip: [u8; 4]) -> ListRecord {
    ListRecord::inline(name(s), RecordAnswer::A(Ipv4Addr::from(ip)))
}

fn key(s: &str, t: RecordType) -> RecordKey {
    RecordKey::new(name(s), t)
}

fn lb(s: &str, n: u8, current: u8) -> ListRecord {
    let answers = (0..n).map(|i| RecordAnswer::A(Ipv4Addr::new(198, 51, 100, i))).collect();
    ListRecord::load_balanced(key(s, RecordType::A), answers, current)
}

fn example_tree() -> PopularityList {
    PopularityList::build([
        a("example.com", [192, 0, 2, 10]),
        ListRecord::cname(name("www.example.com"), name("example.com")),
        a("mail.internal.example.com", [192, 0, 2, 25]),
        a("other.com", [192, 0, 2, 99]),
    ])
    .unwrap()
}

#[test]
fn tree_merges_answerless_single_child_chains() {
    let list = example_tree();
    let com = &list.roots()[0];
    assert_eq!(com.labels(), ["com"]);
    let example = &com.children()[0];
    assert_eq!(example.labels(), ["example"]);
    let labels: Vec<_> = example.children().iter().map(|c| c.labels().to_vec()).collect();
    assert_eq!(labels, vec![vec!["internal", "mail"], vec!["www"]]);
    assert_eq!(list.node_count(), 5);
}

#[test]
fn lookup_merged_node() {
    let list = example_tree();
    let hit = list.lookup(&key("mail.internal.example.com", RecordType::A));
    assert_eq!(
        hit,
        LookupResult::Hit(vec![ResourceRecord::new(
            name("mail.internal.example.com"),
            RecordAnswer::A(Ipv4Addr::new(192, 0, 2, 25)),
        )])
    );
    assert_eq!(list.lookup(&key("internal.example.com", RecordType::A)), LookupResult::Miss);
}

#[test]
fn lookup_follows_cname_chain() {
    let list = example_tree();
    let hit = list.lookup(&key("www.example.com", RecordType::A));
    assert_eq!(
        hit,
        LookupResult::Hit(vec![
            ResourceRecord::new(name("www.example.com"), RecordAnswer::Cname(name("example.com"))),
            ResourceRecord::new(name("example.com"), RecordAnswer::A(Ipv4Addr::new(192, 0, 2, 10))),
        ])
    );
    assert_eq!(list.lookup(&key("www.example.com", RecordType::AAAA)), LookupResult::Miss);
    assert_eq!(list.lookup(&key("absent.org", RecordType::A)), LookupResult::Miss);
}

#[test]
fn cname_pointer_is_a_path_through_com_and_example() {
    let list = example_tree();
    let bytes = list.serialize(false);
    // com=0, example=1, internal.mail=2, www=3, other=4
    let www_cname = [2u8, 2, 0, 0, 0, 0, 0, 1];
    assert!(bytes.windows(www_cname.len()).any(|w| w == www_cname));
}

#[test]
fn empty_list_serializes_to_fixed_bytes() {
    let bytes = PopularityList::new().serialize(false);
    assert_eq!(bytes, b"LLPL\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00\x00");
    assert_eq!(PopularityList::deserialize(&bytes).unwrap(), PopularityList::new());
}

#[test]
fn lb_update_modular_arithmetic() {
    let mut list = PopularityList::build([lb("cdn.example", 3, 2)]).unwrap();
    let before = list.clone();
    list.apply_lb_update(0, 0).unwrap();
    assert_eq!(list, before);
    assert_eq!(list.generation(), 1);
    list.apply_lb_update(0, 2).unwrap();
    assert_eq!(list.pool().group_at(0).unwrap().current, 1);
    assert_eq!(list.apply_lb_update(1, 1), Err(ListError::IndexOutOfRange { index: 1, len: 1 }));
}

#[test]
fn pool_groups_in_canonical_key_order() {
    let list = PopularityList::build([lb("b.example", 2, 0), lb("a.example", 2, 1)]).unwrap();
    let order: Vec<String> = list.lb_entry_order().map(|k| k.to_string()).collect();
    assert_eq!(order, ["a.example/A", "b.example/A"]);
}

#[test]
fn add_then_remove_restores_original() {
    let original = example_tree();
    let mut list = original.clone();
    list.insert(a("new.internal.example.com", [10, 0, 0, 1])).unwrap();
    assert_ne!(list, original);
    list.remove(&key("new.internal.example.com", RecordType::A)).unwrap();
    assert_eq!(list, original);
    assert_eq!(list.serialize(false), original.serialize(false));
}

#[test]
fn referenced_cname_target_is_retained_until_last_referrer_goes() {
    let mut list = example_tree();
    list.remove(&key("example.com", RecordType::A)).unwrap();
    assert!(list.contains(&key("example.com", RecordType::A)));
    assert!(list.lookup(&key("www.example.com", RecordType::A)).is_hit());
    assert_eq!(
        list.remove(&key("example.com", RecordType::A)),
        Err(ListError::UnknownRecord(key("example.com", RecordType::A)))
    );
    list.remove(&key("www.example.com", RecordType::CNAME)).unwrap();
    assert!(!list.contains(&key("example.com", RecordType::A)));
    assert!(list.detached().is_empty());
}

#[test]
fn closure_and_loops_are_enforced() {
    let broken = PopularityList::build([ListRecord::cname(name("a.test"), name("b.test"))]);
    assert_eq!(broken, Err(ListError::BrokenClosure(key("a.test", RecordType::CNAME))));
    let looped = PopularityList::build([
        ListRecord::cname(name("a.test"), name("b.test")),
        ListRecord::cname(name("b.test"), name("a.test")),
    ]);
    assert!(matches!(looped, Err(ListError::CnameLoop(_))));
}

#[test]
fn cname_cannot_share_a_name() {
    let err = PopularityList::build([a("a.test", [1, 2, 3, 4]), ListRecord::cname(name("a.test"), name("a.test"))]);
    assert_eq!(err, Err(ListError::CnameConflict(key("a.test", RecordType::CNAME))));
}

#[test]
fn failed_update_leaves_list_untouched() {
    let original = example_tree();
    let mut list = original.clone();
    let update = MembershipUpdate {
        removals: vec![key("other.com", RecordType::A)],
        additions: vec![ListRecord::cname(name("x.com"), name("missing.com"))],
    };
    assert!(matches!(list.apply_membership_update(&update), Err(ListError::BrokenClosure(_))));
    assert_eq!(list, original);
    assert_eq!(list.len(), original.len());
    assert_eq!(list.generation(), 0);
}

#[test]
fn membership_wire_round_trip() {
    let list = example_tree();
    let update = MembershipUpdate {
        removals: vec![key("other.com", RecordType::A), key("mail.internal.example.com", RecordType::A)],
        additions: vec![lb("cdn.example.net", 4, 3), ListRecord::cname(name("m.example.com"), name("cdn.example.net"))],
    };
    for compress in [false, true] {
        let bytes = encode_membership(&list, &update, compress).unwrap();
        assert_eq!(decode_membership(&list, &bytes).unwrap(), update);
    }
}

#[test]
fn lb_batch_is_two_plus_five_bytes_per_entry() {
    let batch = vec![LbUpdate { entry: 0xabcdef, offset: -3 }, LbUpdate { entry: 1, offset: 7 }];
    let bytes = encode_lb_batch(&batch);
    assert_eq!(bytes.len(), 2 + LB_UPDATE_LEN * 2);
    assert_eq!(decode_lb_batch(&bytes).unwrap(), batch);
}

#[test]
fn flattening_inlines_terminal_answers() {
    let list = PopularityList::build([
        ListRecord::cname(name("www.shop.test"), name("edge.cdn.test")),
        ListRecord::cname(name("edge.cdn.test"), name("node7.cdn.test")),
        a("node7.cdn.test", [203, 0, 113, 7]),
    ])
    .unwrap();
    let flat = list.flattened();
    assert_eq!(flat.len(), 2);
    let hit = flat.lookup(&key("www.shop.test", RecordType::A));
    assert_eq!(
        hit,
        LookupResult::Hit(vec![ResourceRecord::new(
            name("www.shop.test"),
            RecordAnswer::A(Ipv4Addr::new(203, 0, 113, 7)),
        )])
    );
    let bytes = list.serialize_with(SerializeOptions { compress: false, flatten_cnames: true });
    assert!(peek_header(&bytes).unwrap().flattened);
    assert_eq!(PopularityList::deserialize(&bytes).unwrap(), flat);
}

#[test]
fn non_canonical_bytes_are_rejected() {
    let list = PopularityList::build([a("b.test", [1, 1, 1, 1]), a("a.test", [2, 2, 2, 2])]).unwrap();
    let mut bytes = list.serialize(false);
    // Uppercase one label byte: decodes to the same name but re-encodes differently.
    let pos = bytes.iter().position(|&b| b == b'a').unwrap();
    bytes[pos] = b'A';
    assert!(matches!(PopularityList::deserialize(&bytes), Err(ListDecodeError::NonCanonical)));
    let good = list.serialize(false);
    assert!(PopularityList::deserialize(&good[..good.len() - 1]).is_err());
}

// ---- property tests ----

const LABELS: &[&str] = &["a", "b", "c", "www", "mail", "x-1"];

#[derive(Clone, Debug)]
struct Shape {
    kind: u8,
    seed: u32,
    pool: u8,
    current: u8,
    target: Index,
}

fn addr4(seed: u32, i: u8) -> RecordAnswer {
    RecordAnswer::A(Ipv4Addr::from(seed.wrapping_add(u32::from(i) * 7919)))
}

fn addr6(seed: u32, i: u8) -> RecordAnswer {
    RecordAnswer::Aaaa(Ipv6Addr::from(u128::from(seed) << 64 | u128::from(i)))
}

fn records_from(names: Vec<Vec<&'static str>>, shapes: Vec<Shape>) -> Vec<ListRecord> {
    let names: Vec<DomainName> = names.iter().map(|l| DomainName::from_labels(l).unwrap()).collect();
    let is_addr: Vec<bool> = shapes.iter().map(|s| s.kind % 6 != 4).collect();
    let mut is_cname = vec![false; names.len()];
    let mut out = Vec::new();
    for (i, s) in shapes.iter().enumerate() {
        let n = names[i].clone();
        let cname_target = (!is_addr[i])
            .then(|| {
                let candidates: Vec<usize> =
                    (0..names.len()).filter(|&j| j != i && (is_addr[j] || (j < i && is_cname[j]))).collect();
                (!candidates.is_empty()).then(|| candidates[s.target.index(candidates.len())])
            })
            .flatten();
        let k = s.pool % 5 + 1;
        let cur = s.current % k;
        match (s.kind % 6, cname_target) {
            (4, Some(j)) => {
                is_cname[i] = true;
                out.push(ListRecord::cname(n, names[j].clone()));
            }
            (1, _) => out.push(ListRecord::inline(n, addr6(s.seed, 0))),
            (2, _) => {
                out.push(ListRecord::inline(n.clone(), addr4(s.seed, 0)));
                out.push(ListRecord::inline(n, addr6(s.seed, 0)));
            }
            (3, _) => {
                let answers = (0..k).map(|m| addr4(s.seed, m)).collect();
                out.push(ListRecord::load_balanced(RecordKey::new(n, RecordType::A), answers, cur));
            }
            (5, _) => {
                let answers = (0..k).map(|m| addr6(s.seed, m)).collect();
                out.push(ListRecord::inline(n.clone(), addr4(s.seed, 1)));
                out.push(ListRecord::load_balanced(RecordKey::new(n, RecordType::AAAA), answers, cur));
            }
            _ => out.push(ListRecord::inline(n, addr4(s.seed, 0))),
        }
    }
    out
}

fn arb_records() -> impl Strategy<Value = Vec<ListRecord>> {
    let label_seq = prop::collection::vec(prop::sample::select(LABELS), 1..4);
    prop::collection::btree_set(label_seq, 0..14)
        .prop_flat_map(|names| {
            let n = names.len();
            let shape = (any::<u8>(), any::<u32>(), any::<u8>(), any::<u8>(), any::<Index>())
                .prop_map(|(kind, seed, pool, current, target)| Shape { kind, seed, pool, current, target });
            (Just(names.into_iter().collect::<Vec<_>>()), prop::collection::vec(shape, n))
        })
        .prop_map(|(names, shapes)| records_from(names, shapes))
}

/// Flat map resolver, independent of the tree.
fn oracle_lookup(records: &[ListRecord], key: &RecordKey) -> LookupResult {
    let map: HashMap<&RecordKey, &ListRecord> = records.iter().map(|r| (&r.key, r)).collect();
    let mut chain = Vec::new();
    let mut owner = key.name.clone();
    for _ in 0..=MAX_CNAME_DEPTH {
        if let Some(r) = map.get(&RecordKey::new(owner.clone(), key.rtype)) {
            chain.push(ResourceRecord::new(owner, r.selected_answer()));
            return LookupResult::Hit(chain);
        }
        match map.get(&RecordKey::new(owner.clone(), RecordType::CNAME)) {
            Some(ListRecord { content: RecordContent::Cname(t), .. }) if key.rtype != RecordType::CNAME => {
                chain.push(ResourceRecord::new(owner, RecordAnswer::Cname(t.clone())));
                owner = t.clone();
            }
            _ => return LookupResult::Miss,
        }
    }
    LookupResult::Miss
}

fn probe_keys(records: &[ListRecord]) -> Vec<RecordKey> {
    let mut keys = Vec::new();
    for r in records {
        for t in [RecordType::A, RecordType::AAAA, RecordType::CNAME] {
            keys.push(RecordKey::new(r.key.name.clone(), t));
        }
    }
    for extra in ["zz.test", "c.b.a", "www.mail", "a"] {
        keys.push(key(extra, RecordType::A));
    }
    keys
}

fn sorted(mut records: Vec<ListRecord>) -> Vec<ListRecord> {
    records.iter_mut().for_each(|r| *r = r.clone().normalized().unwrap());
    records.sort_by(|a, b| a.key.cmp(&b.key));
    records
}

/// Removals and additions turning `from` into `to`.
fn diff(from: &[ListRecord], to: &[ListRecord]) -> MembershipUpdate {
    let old: HashMap<&RecordKey, &ListRecord> = from.iter().map(|r| (&r.key, r)).collect();
    let new: HashMap<&RecordKey, &ListRecord> = to.iter().map(|r| (&r.key, r)).collect();
    let mut update = MembershipUpdate::default();
    for r in from {
        if new.get(&r.key) != Some(&r) {
            update.removals.push(r.key.clone());
        }
    }
    for r in to {
        if old.get(&r.key) != Some(&r) {
            update.additions.push(r.clone());
        }
    }
    update
}

proptest! {
    #[test]
    fn lookup_matches_flat_resolver(records in arb_records()) {
        let list = PopularityList::build(records.clone()).unwrap();
        prop_assert_eq!(list.len(), records.len());
        for k in probe_keys(&records) {
            prop_assert_eq!(list.lookup(&k), oracle_lookup(&records, &k), "key {}", k);
        }
    }

    #[test]
    fn serialization_round_trips(records in arb_records(), compress: bool) {
        let list = PopularityList::build(records.clone()).unwrap();
        let bytes = list.serialize(compress);
        let back = PopularityList::deserialize(&bytes).unwrap();
        prop_assert_eq!(&back, &list);
        prop_assert_eq!(back.records(), sorted(records));
    }

    #[test]
    fn bytes_do_not_depend_on_insertion_order(records in arb_records(), seed: u64) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = PopularityList::build(records).unwrap();
        let b = PopularityList::build(shuffled).unwrap();
        prop_assert_eq!(a.serialize(false), b.serialize(false));
    }

    #[test]
    fn lb_offsets_compose(n in 1u8..=255, start in any::<u8>(), o1 in any::<i16>(), o2 in any::<i16>()) {
        let start = start % n;
        let mut one = PopularityList::build([lb("x.test", n, start)]).unwrap();
        let mut two = one.clone();
        one.apply_lb_update(0, i64::from(o1)).unwrap();
        one.apply_lb_update(0, i64::from(o2)).unwrap();
        two.apply_lb_update(0, (i64::from(o1) + i64::from(o2)).rem_euclid(i64::from(n))).unwrap();
        prop_assert_eq!(one, two);
    }

    #[test]
    fn lb_answers_stay_in_group(records in arb_records(), ops in prop::collection::vec((any::<Index>(), any::<i16>()), 0..40)) {
        let mut list = PopularityList::build(records).unwrap();
        if list.lb_entry_count() == 0 {
            return Ok(());
        }
        let groups: Vec<PoolGroup> = list.pool().groups().to_vec();
        for (entry, offset) in ops {
            let e = entry.index(groups.len());
            list.apply_lb_update(e, i64::from(offset)).unwrap();
            let k = &groups[e].key;
            let LookupResult::Hit(chain) = list.lookup(k) else { panic!("LB key must hit") };
            prop_assert!(groups[e].answers.contains(&chain.last().unwrap().answer));
        }
    }

    #[test]
    fn incremental_update_equals_rebuild(from in arb_records(), to in arb_records(), compress: bool) {
        let mut list = PopularityList::build(from.clone()).unwrap();
        let update = diff(&from, &to);
        let wire = encode_membership(&list, &update, compress).unwrap();
        let decoded = decode_membership(&list, &wire).unwrap();
        prop_assert_eq!(&decoded, &update);
        list.apply_membership_update(&decoded).unwrap();
        let rebuilt = PopularityList::build(to).unwrap();
        prop_assert_eq!(&list, &rebuilt);
        prop_assert_eq!(list.serialize(false), rebuilt.serialize(false));
        prop_assert!(list.detached().is_empty());
    }
}
