//! Compute the union of client item sets without revealing who holds what:
//! each client encodes its set as random residues, the masked sum reveals
//! exactly the nonzero slots.
//!
//! ```bash
//! cargo run -p fednews --example union_set
//! ```

use std::collections::{BTreeMap, BTreeSet};

use fednews::model::ItemId;
use fednews::netsim::{Bus, FaultPlan, PartyId, SERVER};
use fednews::rng::Seeder;
use fednews::secagg::{decode_union, encode_union, run_session, PhaseGroup, SecAggConfig};
use rand::{RngExt, SeedableRng};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus_size = 40;
    let n_clients = 5;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);

    let members: Vec<PartyId> = (1..=n_clients as u32).map(PartyId).collect();
    let mut truth = BTreeSet::new();
    let mut inputs: BTreeMap<PartyId, Vec<u64>> = BTreeMap::new();
    for &p in &members {
        let mut local = BTreeSet::new();
        for _ in 0..rng.random_range(3..9usize) {
            local.insert(ItemId(rng.random_range(0..corpus_size as u32)));
        }
        println!(
            "client {} holds {:?}",
            p.0,
            local.iter().map(|i| i.0).collect::<Vec<_>>()
        );
        truth.extend(local.iter().copied());
        inputs.insert(p, encode_union(&local, corpus_size, &mut rng));
    }

    let cfg = SecAggConfig {
        participants: n_clients,
        threshold: 3,
        ..Default::default()
    };
    let mut bus = Bus::new(FaultPlan::default());
    bus.register(SERVER);
    for &p in &members {
        bus.register(p);
    }
    bus.begin_round(1);
    let out = run_session(
        &mut bus,
        PhaseGroup::Union,
        &members,
        &inputs,
        corpus_size,
        &cfg,
        1,
        &Seeder::new(99),
    )?;

    let decoded = decode_union(&out.sum);
    println!(
        "decoded union ({} items): {:?}",
        decoded.len(),
        decoded.iter().map(|i| i.0).collect::<Vec<_>>()
    );
    assert_eq!(decoded, truth);
    println!("matches the true union exactly");
    Ok(())
}
