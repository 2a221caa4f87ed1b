//! Drives one secure aggregation session across the simulated transport.
//!
//! The server routes everything; clients never talk to each other directly.
//! Dropped clients simply stop appearing on the wire and the protocol's
//! recovery path decides whether their input makes the sum.

use std::collections::BTreeMap;

use crate::error::SecAggError;
use crate::netsim::{Bus, Message, PartyId, Phase, SERVER};
use crate::rng::Seeder;

use super::{Coordinator, Participant, ParticipantKeys, Roster, SecAggConfig};

/// Which round segment this session occupies in the cost ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseGroup {
    Union,
    Upload,
}

impl PhaseGroup {
    fn keys(self) -> Phase {
        match self {
            PhaseGroup::Union => Phase::UnionKeys,
            PhaseGroup::Upload => Phase::UploadKeys,
        }
    }

    fn shares(self) -> Phase {
        match self {
            PhaseGroup::Union => Phase::UnionShares,
            PhaseGroup::Upload => Phase::UploadShares,
        }
    }

    fn masked(self) -> Phase {
        match self {
            PhaseGroup::Union => Phase::UnionMasked,
            PhaseGroup::Upload => Phase::UploadMasked,
        }
    }

    fn unmask(self) -> Phase {
        match self {
            PhaseGroup::Union => Phase::UnionUnmask,
            PhaseGroup::Upload => Phase::UploadUnmask,
        }
    }
}

/// Result of a completed session.
#[derive(Debug)]
pub struct SessionOutcome {
    /// Modular sum over the live clients' vectors.
    pub sum: Vec<u64>,
    /// Clients whose input made the sum.
    pub live: Vec<PartyId>,
}

/// Run a full session: key adverts, share exchange, masked inputs,
/// unmasking. Aborts with no output if recovery falls below threshold.
pub fn run_session(
    bus: &mut Bus,
    group: PhaseGroup,
    members: &[PartyId],
    inputs: &BTreeMap<PartyId, Vec<u64>>,
    vec_len: usize,
    cfg: &SecAggConfig,
    session_id: u64,
    seeder: &Seeder,
) -> Result<SessionOutcome, SecAggError> {
    cfg.validate()?;
    for (p, v) in inputs {
        if v.len() != vec_len {
            return Err(SecAggError::Protocol(format!(
                "input of {} has length {}, expected {vec_len}",
                p.0,
                v.len()
            )));
        }
    }

    // Fresh keypairs per session; the signing halves form the roster that
    // stands in for a PKI.
    let tag = match group {
        PhaseGroup::Union => "secagg-union",
        PhaseGroup::Upload => "secagg-upload",
    };
    let mut keymat: Vec<(PartyId, ParticipantKeys)> = Vec::with_capacity(members.len());
    let mut b_rngs: BTreeMap<PartyId, rand_chacha::ChaCha20Rng> = BTreeMap::new();
    for &party in members {
        let mut rng = seeder.rng_at(&format!("{tag}/{session_id}/keys"), party.0 as u64);
        keymat.push((party, ParticipantKeys::generate(&mut rng)));
        b_rngs.insert(party, rng);
    }
    let roster = Roster {
        sign_pks: keymat
            .iter()
            .map(|(p, k)| (p.0, k.signing.verifying_key().to_bytes()))
            .collect(),
    };
    let mut participants: BTreeMap<PartyId, Participant> = keymat
        .into_iter()
        .map(|(party, keys)| {
            let rng = b_rngs.get_mut(&party).unwrap();
            (
                party,
                Participant::from_parts(party.0, session_id, *cfg, roster.clone(), keys, rng),
            )
        })
        .collect();
    let mut coordinator = Coordinator::new(session_id, *cfg, roster, vec_len);

    // Keys: advertise, verify, broadcast the verified bundle.
    bus.set_phase(group.keys());
    for &party in members {
        let advert = participants[&party].advert();
        bus.send(party, SERVER, &Message::KeyAdvert(advert))
            .map_err(net_err)?;
    }
    for (_, msg) in bus.drain(SERVER) {
        if let Message::KeyAdvert(a) = msg {
            coordinator.handle_advert(a);
        }
    }
    let bundle = coordinator.advert_bundle();
    for a in &bundle {
        bus.send(SERVER, PartyId(a.id), &Message::AdvertBundle(bundle.clone()))
            .map_err(net_err)?;
    }

    // Shares: each client splits its secrets and the server routes them.
    bus.set_phase(group.shares());
    for &party in members {
        let Some((_, Message::AdvertBundle(bundle))) = bus.recv(party) else {
            continue; // never saw the bundle; it will take no further part
        };
        let p = participants.get_mut(&party).unwrap();
        let mut rng = seeder.rng_at(&format!("{tag}/{session_id}/shares"), party.0 as u64);
        for deliver in p.handle_adverts(&bundle, &mut rng)? {
            bus.send(party, SERVER, &Message::ShareDeliver(deliver))
                .map_err(net_err)?;
        }
    }
    for (_, msg) in bus.drain(SERVER) {
        if let Message::ShareDeliver(d) = msg {
            coordinator.mark_shared(d.owner);
            bus.send(SERVER, PartyId(d.holder), &Message::ShareDeliver(d))
                .map_err(net_err)?;
        }
    }
    for &party in members {
        let deliveries = bus.drain(party);
        let p = participants.get_mut(&party).unwrap();
        for (_, msg) in deliveries {
            if let Message::ShareDeliver(d) = msg {
                p.handle_share(&d)?;
            }
        }
    }

    // Masked inputs. A client whose vector never arrives is dead.
    bus.set_phase(group.masked());
    for &party in members {
        let Some(x) = inputs.get(&party) else { continue };
        let p = participants.get_mut(&party).unwrap();
        if !p.has_shared() {
            continue; // never saw the bundle, takes no part
        }
        let masked = p.masked_input(x)?;
        bus.send(party, SERVER, &Message::MaskedInput(masked))
            .map_err(net_err)?;
    }
    for (_, msg) in bus.drain(SERVER) {
        if let Message::MaskedInput(m) = msg {
            coordinator.handle_masked(m)?;
        }
    }

    // Unmasking: helpers answer one share kind per client.
    bus.set_phase(group.unmask());
    let requests = coordinator.share_requests();
    let helpers: Vec<PartyId> = coordinator.live().into_iter().map(PartyId).collect();
    for &helper in &helpers {
        for r in &requests {
            bus.send(SERVER, helper, &Message::ShareRequest(r.clone()))
                .map_err(net_err)?;
        }
    }
    for &helper in &helpers {
        let reqs = bus.drain(helper);
        let p = participants.get_mut(&helper).unwrap();
        for (_, msg) in reqs {
            if let Message::ShareRequest(r) = msg {
                let resp = p.handle_request(&r)?;
                bus.send(helper, SERVER, &Message::ShareResponse(resp))
                    .map_err(net_err)?;
            }
        }
    }
    let mut responses: BTreeMap<u32, Vec<super::ShareResponse>> = BTreeMap::new();
    for (from, msg) in bus.drain(SERVER) {
        if let Message::ShareResponse(r) = msg {
            responses.entry(from.0).or_default().push(r);
        }
    }

    let sum = coordinator.unmask(&responses)?;
    Ok(SessionOutcome {
        sum,
        live: coordinator.live().into_iter().map(PartyId).collect(),
    })
}

fn net_err(e: crate::error::NetError) -> SecAggError {
    SecAggError::Protocol(e.to_string())
}
