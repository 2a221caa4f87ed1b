//! Securely sum client vectors with dropouts: the server learns the sum of
//! the survivors' inputs and nothing else, as long as enough clients stay.
//!
//! ```bash
//! cargo run -p fednews --example secure_sum
//! ```

use std::collections::BTreeMap;

use fednews::netsim::{Bus, FaultPlan, PartyId, Phase, SERVER};
use fednews::rng::Seeder;
use fednews::secagg::{dequantize, quantize, run_session, PhaseGroup, SecAggConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 8;
    let len = 6;
    let cfg = SecAggConfig {
        participants: n,
        threshold: 4,
        frac_bits: 24,
        ..Default::default()
    };

    // Each client holds a small real vector.
    let members: Vec<PartyId> = (1..=n as u32).map(PartyId).collect();
    let mut inputs: BTreeMap<PartyId, Vec<u64>> = BTreeMap::new();
    let mut reals: BTreeMap<PartyId, Vec<f64>> = BTreeMap::new();
    for (k, &p) in members.iter().enumerate() {
        let v: Vec<f64> = (0..len).map(|c| ((k * len + c) as f64 * 0.7).sin()).collect();
        inputs.insert(p, quantize(&v, cfg.frac_bits)?);
        reals.insert(p, v);
    }

    // Clients 3 and 6 vanish right at the masking barrier: their vectors
    // never reach the server.
    let mut faults = FaultPlan::default();
    faults.drop_at(1, PartyId(3), Phase::UploadMasked);
    faults.drop_at(1, PartyId(6), Phase::UploadMasked);

    let mut bus = Bus::new(faults);
    bus.register(SERVER);
    for &p in &members {
        bus.register(p);
    }
    bus.begin_round(1);

    let out = run_session(
        &mut bus,
        PhaseGroup::Upload,
        &members,
        &inputs,
        len,
        &cfg,
        1,
        &Seeder::new(2024),
    )?;

    println!("live clients: {:?}", out.live.iter().map(|p| p.0).collect::<Vec<_>>());
    let decoded = dequantize(&out.sum, cfg.frac_bits);
    let expected: Vec<f64> = (0..len)
        .map(|c| out.live.iter().map(|p| reals[p][c]).sum())
        .collect();
    println!("unmasked sum:  {decoded:.4?}");
    println!("survivor sum:  {expected:.4?}");
    let max_err = decoded
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max error:     {max_err:.2e} (quantization only)");
    println!(
        "bytes on the wire: up {} / down {}",
        bus.ledger.total(fednews::netsim::Direction::Uplink),
        bus.ledger.total(fednews::netsim::Direction::Downlink)
    );
    Ok(())
}
