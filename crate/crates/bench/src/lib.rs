//! Shared fixtures for the criterion benches.

use lluad_core::dns::{RecordKey, RecordType};
use lluad_core::list::PopularityList;
use lluad_core::mixnet::VotePayload;
use lluad_core::sim::universe::{top_list, SyntheticUniverse, UniverseConfig};

pub fn ballot(client: usize, n: usize) -> Vec<VotePayload> {
    (0..n)
        .map(|i| VotePayload::Record(RecordKey::new(format!("c{client}v{i}.bench").parse().unwrap(), RecordType::A)))
        .collect()
}

pub fn universe(size: usize) -> SyntheticUniverse {
    SyntheticUniverse::new(UniverseConfig { size, seed: 1, ..UniverseConfig::default() })
}

/// Universe and the list of its `n` most popular names.
pub fn universe_with_list(size: usize, n: usize) -> (SyntheticUniverse, PopularityList) {
    let mut universe = universe(size);
    let list = top_list(&mut universe, n, 1).expect("valid bench config");
    (universe, list)
}
