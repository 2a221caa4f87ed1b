//! In-process transport between server and clients with exact byte
//! accounting, scripted client dropout, and per-round cost ledgers.
//!
//! Messages are serialized with a fixed little-endian framing so byte counts
//! are reproducible across platforms; no compression. The bus has a single
//! logical owner and delivery is FIFO per sender-receiver pair.

mod wire;

pub use wire::{Message, HEADER_BYTES};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::NetError;

/// A party on the bus. Id 0 is the server by convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartyId(pub u32);

pub const SERVER: PartyId = PartyId(0);

impl std::fmt::Display for PartyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Uplink => "up",
            Direction::Downlink => "down",
        }
    }
}

/// Round phases in execution order. A client dropped at phase `p` sends
/// nothing from `p` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Setup,
    UnionKeys,
    UnionShares,
    UnionMasked,
    UnionUnmask,
    UnionPlain,
    Distribute,
    UploadKeys,
    UploadShares,
    UploadMasked,
    UploadUnmask,
    UploadPlain,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::UnionKeys => "union_keys",
            Phase::UnionShares => "union_shares",
            Phase::UnionMasked => "union_masked",
            Phase::UnionUnmask => "union_unmask",
            Phase::UnionPlain => "union_plain",
            Phase::Distribute => "distribute",
            Phase::UploadKeys => "upload_keys",
            Phase::UploadShares => "upload_shares",
            Phase::UploadMasked => "upload_masked",
            Phase::UploadUnmask => "upload_unmask",
            Phase::UploadPlain => "upload_plain",
        }
    }
}

/// Scripted dropouts: which clients vanish, in which round, at which phase.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    drops: BTreeMap<u64, BTreeMap<PartyId, Phase>>,
}

impl FaultPlan {
    pub fn drop_at(&mut self, round: u64, party: PartyId, phase: Phase) {
        self.drops.entry(round).or_default().insert(party, phase);
    }

    /// True if `party` has dropped by `phase` of `round`.
    pub fn is_dropped(&self, round: u64, party: PartyId, phase: Phase) -> bool {
        self.drops
            .get(&round)
            .and_then(|m| m.get(&party))
            .is_some_and(|&p| p <= phase)
    }
}

/// A message a dropped sender tried to put on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropEvent {
    pub round: u64,
    pub party: PartyId,
    pub phase: Phase,
}

/// Additive per-round, per-party byte counters plus the drop log.
#[derive(Debug, Clone, Default)]
pub struct CostLedger {
    rows: BTreeMap<(u64, PartyId, Direction, Phase), u64>,
    pub drop_log: Vec<DropEvent>,
}

impl CostLedger {
    fn add(&mut self, round: u64, party: PartyId, dir: Direction, phase: Phase, bytes: u64) {
        *self.rows.entry((round, party, dir, phase)).or_insert(0) += bytes;
    }

    /// Bytes moved by `party` in `round`, both directions.
    pub fn party_round_bytes(&self, round: u64, party: PartyId) -> u64 {
        self.rows
            .iter()
            .filter(|((r, p, _, _), _)| *r == round && *p == party)
            .map(|(_, b)| b)
            .sum()
    }

    pub fn party_round_dir_bytes(&self, round: u64, party: PartyId, dir: Direction) -> u64 {
        self.rows
            .iter()
            .filter(|((r, p, d, _), _)| *r == round && *p == party && *d == dir)
            .map(|(_, b)| b)
            .sum()
    }

    pub fn total(&self, dir: Direction) -> u64 {
        self.rows
            .iter()
            .filter(|((_, _, d, _), _)| *d == dir)
            .map(|(_, b)| b)
            .sum()
    }

    pub fn round_total(&self, round: u64) -> u64 {
        self.rows
            .iter()
            .filter(|((r, _, _, _), _)| *r == round)
            .map(|(_, b)| b)
            .sum()
    }

    /// Export as `round,party,direction,phase,bytes` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,party,direction,phase,bytes\n");
        for ((round, party, dir, phase), bytes) in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                round,
                party,
                dir.as_str(),
                phase.as_str(),
                bytes
            ));
        }
        out
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(u64, PartyId, Direction, Phase), &u64)> {
        self.rows.iter()
    }
}

/// The simulated transport. Owns inboxes, the ledger, and the fault plan.
pub struct Bus {
    round: u64,
    phase: Phase,
    inboxes: BTreeMap<PartyId, VecDeque<(PartyId, Message)>>,
    registered: BTreeSet<PartyId>,
    pub ledger: CostLedger,
    fault: FaultPlan,
}

impl Bus {
    pub fn new(fault: FaultPlan) -> Self {
        Bus {
            round: 0,
            phase: Phase::Setup,
            inboxes: BTreeMap::new(),
            registered: BTreeSet::new(),
            ledger: CostLedger::default(),
            fault,
        }
    }

    pub fn register(&mut self, party: PartyId) {
        self.registered.insert(party);
        self.inboxes.entry(party).or_default();
    }

    pub fn begin_round(&mut self, round: u64) {
        self.round = round;
        self.phase = Phase::Setup;
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn is_dropped(&self, party: PartyId) -> bool {
        self.fault.is_dropped(self.round, party, self.phase)
    }

    /// Serialize, count, and deliver. A dropped sender's message is silently
    /// discarded and logged; a dropped receiver likewise receives nothing.
    /// Returns the bytes charged (0 when discarded).
    pub fn send(&mut self, from: PartyId, to: PartyId, msg: &Message) -> Result<u64, NetError> {
        if !self.registered.contains(&from) {
            return Err(NetError::UnknownParty(from.0));
        }
        if !self.registered.contains(&to) {
            return Err(NetError::UnknownParty(to.0));
        }
        if self.is_dropped(from) {
            self.ledger.drop_log.push(DropEvent {
                round: self.round,
                party: from,
                phase: self.phase,
            });
            return Ok(0);
        }
        if self.is_dropped(to) {
            self.ledger.drop_log.push(DropEvent {
                round: self.round,
                party: to,
                phase: self.phase,
            });
            return Ok(0);
        }
        let (tag, payload) = msg.encode();
        let bytes = (HEADER_BYTES + payload.len()) as u64;
        self.ledger
            .add(self.round, from, Direction::Uplink, self.phase, bytes);
        self.ledger
            .add(self.round, to, Direction::Downlink, self.phase, bytes);
        let decoded = Message::decode(tag, &payload)?;
        self.inboxes.get_mut(&to).unwrap().push_back((from, decoded));
        Ok(bytes)
    }

    pub fn recv(&mut self, party: PartyId) -> Option<(PartyId, Message)> {
        self.inboxes.get_mut(&party)?.pop_front()
    }

    /// Drain every pending message for `party`, in arrival order.
    pub fn drain(&mut self, party: PartyId) -> Vec<(PartyId, Message)> {
        self.inboxes
            .get_mut(&party)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ItemId;

    #[test]
    fn empty_payload_message_costs_exactly_the_header() {
        let mut bus = Bus::new(FaultPlan::default());
        bus.register(SERVER);
        bus.register(PartyId(1));
        let bytes = bus
            .send(PartyId(1), SERVER, &Message::UnionUp(vec![]))
            .unwrap();
        assert_eq!(bytes, HEADER_BYTES as u64);
    }

    #[test]
    fn vector_of_400_f64_costs_3200_plus_header() {
        let mut bus = Bus::new(FaultPlan::default());
        bus.register(SERVER);
        bus.register(PartyId(1));
        let bytes = bus
            .send(SERVER, PartyId(1), &Message::UserModelDown(vec![0.25; 400]))
            .unwrap();
        assert_eq!(bytes, 3200 + HEADER_BYTES as u64);
    }

    #[test]
    fn uplink_equals_downlink_in_total() {
        let mut bus = Bus::new(FaultPlan::default());
        bus.register(SERVER);
        for i in 1..=4 {
            bus.register(PartyId(i));
        }
        bus.begin_round(1);
        bus.set_phase(Phase::Distribute);
        for i in 1..=4 {
            bus.send(SERVER, PartyId(i), &Message::UserModelDown(vec![0.0; 10]))
                .unwrap();
        }
        bus.set_phase(Phase::UploadPlain);
        for i in 1..=4 {
            bus.send(
                PartyId(i),
                SERVER,
                &Message::UnionUp(vec![ItemId(i as u32)]),
            )
            .unwrap();
        }
        assert_eq!(
            bus.ledger.total(Direction::Uplink),
            bus.ledger.total(Direction::Downlink)
        );
    }

    #[test]
    fn dropped_sender_is_discarded_and_logged() {
        let mut fault = FaultPlan::default();
        fault.drop_at(1, PartyId(2), Phase::UploadMasked);
        let mut bus = Bus::new(fault);
        bus.register(SERVER);
        bus.register(PartyId(2));
        bus.begin_round(1);

        bus.set_phase(Phase::Distribute);
        assert!(!bus.is_dropped(PartyId(2)));
        let sent = bus
            .send(PartyId(2), SERVER, &Message::UnionUp(vec![]))
            .unwrap();
        assert!(sent > 0);

        bus.set_phase(Phase::UploadMasked);
        let sent = bus
            .send(PartyId(2), SERVER, &Message::UnionUp(vec![]))
            .unwrap();
        assert_eq!(sent, 0);
        assert!(bus.recv(SERVER).is_some()); // the distribute-phase message
        assert!(bus.recv(SERVER).is_none()); // nothing from the dropped phase
        assert_eq!(bus.ledger.drop_log.len(), 1);
        assert_eq!(bus.ledger.drop_log[0].phase, Phase::UploadMasked);

        // Conservation still holds when drops occur.
        assert_eq!(
            bus.ledger.total(Direction::Uplink),
            bus.ledger.total(Direction::Downlink)
        );
    }

    #[test]
    fn replaying_a_round_gives_identical_ledger_totals() {
        let run = || {
            let mut bus = Bus::new(FaultPlan::default());
            bus.register(SERVER);
            bus.register(PartyId(1));
            bus.begin_round(3);
            bus.set_phase(Phase::Distribute);
            bus.send(
                SERVER,
                PartyId(1),
                &Message::ReprsDown(vec![(ItemId(4), vec![1.0, 2.0])]),
            )
            .unwrap();
            bus.ledger.to_csv()
        };
        assert_eq!(run(), run());
    }
}
