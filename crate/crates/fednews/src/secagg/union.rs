//! Indicator encoding of a local item set so that a masked modular sum over
//! a client group reveals the union and nothing else.
//!
//! Present items get a residue drawn uniformly from [1, 2^64-1]; absent
//! items get 0. After summation mod 2^64 an entry is nonzero iff some client
//! claimed the item, except when independent residues cancel exactly
//! (probability ~2^-64 per overlapped item).

use std::collections::BTreeSet;

use rand::{Rng, RngExt};

use crate::model::ItemId;

/// Encode a local item set as a corpus-length residue vector.
pub fn encode_union(local: &BTreeSet<ItemId>, corpus_size: usize, rng: &mut impl Rng) -> Vec<u64> {
    let mut v = vec![0u64; corpus_size];
    for id in local {
        // Uniform over nonzero residues so a singleton is always detectable.
        v[id.index()] = rng.random_range(1..=u64::MAX);
    }
    v
}

/// Decode the summed indicator back into the union set.
pub fn decode_union(summed: &[u64]) -> BTreeSet<ItemId> {
    summed
        .iter()
        .enumerate()
        .filter(|&(_, &x)| x != 0)
        .map(|(i, _)| ItemId(i as u32))
        .collect()
}
