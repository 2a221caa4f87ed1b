//! Dropout-resilient secure aggregation.
//!
//! The server learns only the modular sum of client vectors. Each client
//! masks its input with one self mask and one pairwise mask per peer; the
//! pairwise masks cancel in the sum. Secrets behind the masks are Shamir-
//! shared so the sum survives up to `n - t` dropouts: the self mask of a
//! client that stayed live is removed via its shares, and the pairwise masks
//! of a client that vanished are cancelled by reconstructing its key.
//!
//! Every participant is an event-driven state machine over four phases:
//! keys -> shares -> masked input -> unmasking. A client is dead for a
//! session iff its masked vector never arrived.

mod fixedpoint;
mod keys;
mod prg;
mod runner;
mod shamir;
mod union;

pub use fixedpoint::{dequantize, quantize};
pub use keys::ParticipantKeys;
pub use prg::{mask_stream, PrgKind};
pub use runner::{run_session, PhaseGroup, SessionOutcome};
pub use shamir::{reconstruct, split, Share};
pub use union::{decode_union, encode_union};

use std::collections::{BTreeMap, BTreeSet};

use chacha20poly1305::aead::Aead;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit};
use rand::Rng;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::error::SecAggError;

/// Bytes of a self-mask seed.
pub const SEED_BYTES: usize = 16;
/// Bytes of an x25519 secret key.
const MASK_KEY_BYTES: usize = 32;

/// Session parameters. The aggregation domain is fixed to Z_2^64.
#[derive(Debug, Clone, Copy)]
pub struct SecAggConfig {
    /// Participants per session (`n`).
    pub participants: usize,
    /// Reconstruction threshold (`t`).
    pub threshold: usize,
    /// Fractional bits of the fixed-point gradient encoding.
    pub frac_bits: u32,
    /// Mask expansion generator.
    pub prg: PrgKind,
}

impl Default for SecAggConfig {
    fn default() -> Self {
        SecAggConfig {
            participants: 50,
            threshold: 25,
            frac_bits: 24,
            prg: PrgKind::MersenneTwister,
        }
    }
}

impl SecAggConfig {
    pub fn validate(&self) -> Result<(), SecAggError> {
        if self.threshold == 0 || self.threshold > self.participants {
            return Err(SecAggError::BadConfig(format!(
                "threshold {} not in 1..={}",
                self.threshold, self.participants
            )));
        }
        if self.frac_bits >= 63 {
            return Err(SecAggError::BadConfig(format!(
                "frac_bits {} must be below 63",
                self.frac_bits
            )));
        }
        Ok(())
    }
}

/// Pre-registered signing identities for one session, keyed by participant
/// id. Distribution of signing keys is assumed out of band.
#[derive(Debug, Clone, Default)]
pub struct Roster {
    pub sign_pks: BTreeMap<u32, [u8; 32]>,
}

impl Roster {
    /// Shamir evaluation point for `id`: 1-based position in id order.
    fn share_index(&self, id: u32) -> Option<u64> {
        self.sign_pks
            .keys()
            .position(|&k| k == id)
            .map(|p| p as u64 + 1)
    }
}

/// Advertised public keys, signed by the sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyAdvert {
    pub id: u32,
    pub sign_pk: [u8; 32],
    pub s_pk: [u8; 32],
    pub c_pk: [u8; 32],
    pub signature: [u8; 64],
}

/// Encrypted delivery of one holder's shares of the owner's secrets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareDeliver {
    pub owner: u32,
    pub holder: u32,
    pub ciphertext: Vec<u8>,
}

/// A masked input vector over Z_2^64.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub owner: u32,
    pub vector: Vec<u64>,
}

/// Which secret a share request refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareKind {
    /// Self-mask seed `b`; requested only for clients that stayed live.
    SelfMask,
    /// Pairwise mask key `s`; requested only for clients that died.
    MaskKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareRequest {
    pub target: u32,
    pub kind: ShareKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareResponse {
    pub target: u32,
    pub kind: ShareKind,
    pub share: Share,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParticipantPhase {
    Keys,
    Shares,
    Masked,
    Unmask,
}

struct PeerKeys {
    s_pk: PublicKey,
    c_pk: PublicKey,
}

struct PeerShares {
    s_share: Share,
    b_share: Share,
}

/// Client-side protocol state for one session.
pub struct Participant {
    id: u32,
    session: u64,
    cfg: SecAggConfig,
    roster: Roster,
    keys: ParticipantKeys,
    b_seed: [u8; SEED_BYTES],
    phase: ParticipantPhase,
    /// Verified adverts from peers (excluding self).
    peers: BTreeMap<u32, PeerKeys>,
    /// Shares held for other participants (and self), the mask peer set.
    held: BTreeMap<u32, PeerShares>,
    /// Share kinds already answered per target.
    answered: BTreeMap<u32, ShareKind>,
}

const SHARE_PLAINTEXT_LEN: usize = 4 + 8 + MASK_KEY_BYTES + 8 + SEED_BYTES;

impl Participant {
    pub fn new(
        id: u32,
        session: u64,
        cfg: SecAggConfig,
        roster: Roster,
        rng: &mut impl Rng,
    ) -> Self {
        let keys = ParticipantKeys::generate(rng);
        Self::from_parts(id, session, cfg, roster, keys, rng)
    }

    /// Build from pre-generated keys; the roster needs every signing key
    /// before any participant can verify adverts.
    pub fn from_parts(
        id: u32,
        session: u64,
        cfg: SecAggConfig,
        roster: Roster,
        keys: ParticipantKeys,
        rng: &mut impl Rng,
    ) -> Self {
        let mut b_seed = [0u8; SEED_BYTES];
        rng.fill_bytes(&mut b_seed);
        Participant {
            id,
            session,
            cfg,
            roster,
            keys,
            b_seed,
            phase: ParticipantPhase::Keys,
            peers: BTreeMap::new(),
            held: BTreeMap::new(),
            answered: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn signing_public(&self) -> [u8; 32] {
        self.keys.signing.verifying_key().to_bytes()
    }

    pub fn advert(&self) -> KeyAdvert {
        let s_pk = self.keys.mask_public().to_bytes();
        let c_pk = self.keys.enc_public().to_bytes();
        KeyAdvert {
            id: self.id,
            sign_pk: self.signing_public(),
            s_pk,
            c_pk,
            signature: keys::sign_advert(&self.keys, self.session, self.id, &s_pk, &c_pk),
        }
    }

    /// Verify the advert bundle, then Shamir-share both secrets to every
    /// verified peer. Peers with bad signatures are excluded, not fatal.
    pub fn handle_adverts(
        &mut self,
        adverts: &[KeyAdvert],
        rng: &mut impl Rng,
    ) -> Result<Vec<ShareDeliver>, SecAggError> {
        if self.phase != ParticipantPhase::Keys {
            return Err(SecAggError::Protocol("adverts after key phase".into()));
        }
        self.phase = ParticipantPhase::Shares;
        for a in adverts {
            if a.id == self.id {
                continue;
            }
            let registered = match self.roster.sign_pks.get(&a.id) {
                Some(pk) => pk,
                None => continue,
            };
            if *registered != a.sign_pk {
                continue; // claims an identity it does not hold
            }
            if keys::verify_advert(&a.sign_pk, self.session, a.id, &a.s_pk, &a.c_pk, &a.signature)
                .is_err()
            {
                continue; // excluded for this session
            }
            self.peers.insert(
                a.id,
                PeerKeys {
                    s_pk: PublicKey::from(a.s_pk),
                    c_pk: PublicKey::from(a.c_pk),
                },
            );
        }

        let n = self.roster.sign_pks.len();
        let s_shares = shamir::split(self.keys.mask_secret.as_bytes(), self.cfg.threshold, n, rng)?;
        let b_shares = shamir::split(&self.b_seed, self.cfg.threshold, n, rng)?;
        let by_index: BTreeMap<u64, (&Share, &Share)> = s_shares
            .iter()
            .zip(&b_shares)
            .map(|(s, b)| (s.index, (s, b)))
            .collect();

        // One delivery per holder, self included: the self-addressed share
        // doubles as the on-wire signal that this client finished the phase.
        let mut out = Vec::with_capacity(self.peers.len() + 1);
        let mut holders: Vec<u32> = self.peers.keys().copied().collect();
        holders.push(self.id);
        holders.sort_unstable();
        for holder in holders {
            let index = self
                .roster
                .share_index(holder)
                .ok_or_else(|| SecAggError::Protocol(format!("{holder} missing from roster")))?;
            let (s, b) = by_index[&index];
            let mut plain = Vec::with_capacity(SHARE_PLAINTEXT_LEN);
            plain.extend_from_slice(&self.id.to_le_bytes());
            plain.extend_from_slice(&s.index.to_le_bytes());
            plain.extend_from_slice(&s.payload);
            plain.extend_from_slice(&b.index.to_le_bytes());
            plain.extend_from_slice(&b.payload);
            let key = keys::share_encryption_key(
                &self.keys.enc_secret,
                &self.peer_enc_pk(holder)?,
                self.session,
            );
            let cipher = ChaCha20Poly1305::new((&key).into());
            let nonce = keys::share_nonce(self.id, holder);
            let ciphertext = cipher
                .encrypt((&nonce).into(), plain.as_slice())
                .map_err(|_| SecAggError::Protocol("share encryption failed".into()))?;
            out.push(ShareDeliver {
                owner: self.id,
                holder,
                ciphertext,
            });
        }
        Ok(out)
    }

    fn peer_enc_pk(&self, id: u32) -> Result<PublicKey, SecAggError> {
        if id == self.id {
            Ok(self.keys.enc_public())
        } else {
            self.peers
                .get(&id)
                .map(|p| p.c_pk)
                .ok_or(SecAggError::MissingPairwiseSeed(id))
        }
    }

    /// True once the advert bundle was processed and shares went out.
    pub fn has_shared(&self) -> bool {
        self.phase != ParticipantPhase::Keys
    }

    /// Decrypt and store a peer's share of its secrets.
    pub fn handle_share(&mut self, d: &ShareDeliver) -> Result<(), SecAggError> {
        if d.holder != self.id {
            return Err(SecAggError::Protocol(format!(
                "share for {} delivered to {}",
                d.holder, self.id
            )));
        }
        let peer_pk = self.peer_enc_pk(d.owner)?;
        let key = keys::share_encryption_key(&self.keys.enc_secret, &peer_pk, self.session);
        let cipher = ChaCha20Poly1305::new((&key).into());
        let nonce = keys::share_nonce(d.owner, d.holder);
        let plain = cipher
            .decrypt((&nonce).into(), d.ciphertext.as_slice())
            .map_err(|_| SecAggError::Protocol("share decryption failed".into()))?;
        if plain.len() != SHARE_PLAINTEXT_LEN {
            return Err(SecAggError::Protocol("share payload length".into()));
        }
        let owner = u32::from_le_bytes(plain[0..4].try_into().unwrap());
        if owner != d.owner {
            return Err(SecAggError::Protocol("share owner mismatch".into()));
        }
        let s_index = u64::from_le_bytes(plain[4..12].try_into().unwrap());
        let s_payload = plain[12..12 + MASK_KEY_BYTES].to_vec();
        let off = 12 + MASK_KEY_BYTES;
        let b_index = u64::from_le_bytes(plain[off..off + 8].try_into().unwrap());
        let b_payload = plain[off + 8..off + 8 + SEED_BYTES].to_vec();
        self.held.insert(
            d.owner,
            PeerShares {
                s_share: Share {
                    index: s_index,
                    payload: s_payload,
                },
                b_share: Share {
                    index: b_index,
                    payload: b_payload,
                },
            },
        );
        Ok(())
    }

    /// Mask the input vector. The pairwise mask set is exactly the peers
    /// whose shares this participant holds, so every embedded mask can later
    /// be removed whether or not its owner survives.
    pub fn masked_input(&mut self, x: &[u64]) -> Result<MaskedInput, SecAggError> {
        if self.phase == ParticipantPhase::Keys {
            return Err(SecAggError::Protocol("masking before share phase".into()));
        }
        self.phase = ParticipantPhase::Masked;
        let mut y: Vec<u64> = x.to_vec();
        for (v, m) in mask_stream(self.cfg.prg, &self.b_seed, x.len())
            .into_iter()
            .enumerate()
        {
            y[v] = y[v].wrapping_add(m);
        }
        for (&peer_id, _) in self.held.iter().filter(|(&p, _)| p != self.id) {
            let peer = self
                .peers
                .get(&peer_id)
                .ok_or(SecAggError::MissingPairwiseSeed(peer_id))?;
            let seed = keys::pairwise_seed(&self.keys.mask_secret, &peer.s_pk);
            let stream = mask_stream(self.cfg.prg, &seed, x.len());
            if self.id < peer_id {
                for (yi, m) in y.iter_mut().zip(stream) {
                    *yi = yi.wrapping_add(m);
                }
            } else {
                for (yi, m) in y.iter_mut().zip(stream) {
                    *yi = yi.wrapping_sub(m);
                }
            }
        }
        Ok(MaskedInput {
            owner: self.id,
            vector: y,
        })
    }

    /// Answer a share request, enforcing that the two kinds are never both
    /// released for the same client within a session.
    pub fn handle_request(&mut self, r: &ShareRequest) -> Result<ShareResponse, SecAggError> {
        self.phase = ParticipantPhase::Unmask;
        if let Some(&prev) = self.answered.get(&r.target) {
            if prev != r.kind {
                return Err(SecAggError::ConflictingShareRequest(r.target));
            }
        }
        let held = self
            .held
            .get(&r.target)
            .ok_or_else(|| SecAggError::Protocol(format!("no shares held for {}", r.target)))?;
        self.answered.insert(r.target, r.kind);
        let share = match r.kind {
            ShareKind::SelfMask => held.b_share.clone(),
            ShareKind::MaskKey => held.s_share.clone(),
        };
        Ok(ShareResponse {
            target: r.target,
            kind: r.kind,
            share,
        })
    }
}

/// Server-side session state.
pub struct Coordinator {
    session: u64,
    cfg: SecAggConfig,
    roster: Roster,
    vec_len: usize,
    adverts: BTreeMap<u32, KeyAdvert>,
    /// U2: clients whose share batch went out.
    shared: BTreeSet<u32>,
    /// U3: masked vectors received.
    masked: BTreeMap<u32, Vec<u64>>,
}

impl Coordinator {
    pub fn new(session: u64, cfg: SecAggConfig, roster: Roster, vec_len: usize) -> Self {
        Coordinator {
            session,
            cfg,
            roster,
            vec_len,
            adverts: BTreeMap::new(),
            shared: BTreeSet::new(),
            masked: BTreeMap::new(),
        }
    }

    /// Verify and record an advert; a bad signature excludes the sender.
    pub fn handle_advert(&mut self, a: KeyAdvert) -> bool {
        let Some(registered) = self.roster.sign_pks.get(&a.id) else {
            return false;
        };
        if *registered != a.sign_pk {
            return false;
        }
        if keys::verify_advert(&a.sign_pk, self.session, a.id, &a.s_pk, &a.c_pk, &a.signature)
            .is_err()
        {
            return false;
        }
        self.adverts.insert(a.id, a);
        true
    }

    pub fn advert_bundle(&self) -> Vec<KeyAdvert> {
        self.adverts.values().cloned().collect()
    }

    pub fn mark_shared(&mut self, id: u32) {
        if self.adverts.contains_key(&id) {
            self.shared.insert(id);
        }
    }

    pub fn handle_masked(&mut self, m: MaskedInput) -> Result<(), SecAggError> {
        if !self.shared.contains(&m.owner) {
            return Err(SecAggError::Protocol(format!(
                "masked input from {} outside the share set",
                m.owner
            )));
        }
        if m.vector.len() != self.vec_len {
            return Err(SecAggError::Protocol(format!(
                "masked vector length {} != {}",
                m.vector.len(),
                self.vec_len
            )));
        }
        self.masked.insert(m.owner, m.vector);
        Ok(())
    }

    /// Clients whose masked vector arrived.
    pub fn live(&self) -> Vec<u32> {
        self.masked.keys().copied().collect()
    }

    /// Clients that exchanged shares but never delivered a masked vector.
    pub fn dead(&self) -> Vec<u32> {
        self.shared
            .iter()
            .filter(|id| !self.masked.contains_key(id))
            .copied()
            .collect()
    }

    /// Requests to put to the helpers: self-mask shares for live clients,
    /// mask-key shares for dead ones. Disjoint by construction.
    pub fn share_requests(&self) -> Vec<ShareRequest> {
        let mut reqs: Vec<ShareRequest> = self
            .live()
            .into_iter()
            .map(|target| ShareRequest {
                target,
                kind: ShareKind::SelfMask,
            })
            .collect();
        reqs.extend(self.dead().into_iter().map(|target| ShareRequest {
            target,
            kind: ShareKind::MaskKey,
        }));
        reqs
    }

    /// Remove all masks from the sum of live vectors. Aborts, releasing
    /// nothing, if any needed secret has fewer than `t` shares or if any
    /// client appears with both share kinds.
    pub fn unmask(
        &self,
        responses: &BTreeMap<u32, Vec<ShareResponse>>,
    ) -> Result<Vec<u64>, SecAggError> {
        let live = self.live();
        let dead = self.dead();
        if live.len() < self.cfg.threshold {
            return Err(SecAggError::Aborted(format!(
                "{} live clients below threshold {}",
                live.len(),
                self.cfg.threshold
            )));
        }

        let mut b_shares: BTreeMap<u32, Vec<Share>> = BTreeMap::new();
        let mut s_shares: BTreeMap<u32, Vec<Share>> = BTreeMap::new();
        for resp in responses.values().flatten() {
            match resp.kind {
                ShareKind::SelfMask => b_shares
                    .entry(resp.target)
                    .or_default()
                    .push(resp.share.clone()),
                ShareKind::MaskKey => s_shares
                    .entry(resp.target)
                    .or_default()
                    .push(resp.share.clone()),
            }
        }
        if let Some(both) = b_shares.keys().find(|t| s_shares.contains_key(t)) {
            return Err(SecAggError::ConflictingShareRequest(*both));
        }

        let mut sum = vec![0u64; self.vec_len];
        for v in self.masked.values() {
            for (acc, x) in sum.iter_mut().zip(v) {
                *acc = acc.wrapping_add(*x);
            }
        }

        // Self masks of live clients.
        for &u in &live {
            let shares = b_shares.get(&u).map(Vec::as_slice).unwrap_or(&[]);
            let seed_bytes = shamir::reconstruct(shares, self.cfg.threshold, SEED_BYTES)?;
            let seed: [u8; SEED_BYTES] = seed_bytes.try_into().unwrap();
            for (acc, m) in sum
                .iter_mut()
                .zip(mask_stream(self.cfg.prg, &seed, self.vec_len))
            {
                *acc = acc.wrapping_sub(m);
            }
        }

        // Pairwise masks involving dead clients, embedded in live vectors.
        for &u in &dead {
            let shares = s_shares.get(&u).map(Vec::as_slice).unwrap_or(&[]);
            let key_bytes = shamir::reconstruct(shares, self.cfg.threshold, MASK_KEY_BYTES)?;
            let key: [u8; MASK_KEY_BYTES] = key_bytes.try_into().unwrap();
            let secret = StaticSecret::from(key);
            let advert = self
                .adverts
                .get(&u)
                .ok_or_else(|| SecAggError::Protocol(format!("no advert for dead client {u}")))?;
            if PublicKey::from(&secret).to_bytes() != advert.s_pk {
                return Err(SecAggError::Protocol(format!(
                    "reconstructed mask key for {u} does not match its advert"
                )));
            }
            for &v in &live {
                let peer_advert = &self.adverts[&v];
                let seed = keys::pairwise_seed(&secret, &PublicKey::from(peer_advert.s_pk));
                let stream = mask_stream(self.cfg.prg, &seed, self.vec_len);
                // v applied sign(+/-) from its own perspective; undo it.
                if v < u {
                    for (acc, m) in sum.iter_mut().zip(stream) {
                        *acc = acc.wrapping_sub(m);
                    }
                } else {
                    for (acc, m) in sum.iter_mut().zip(stream) {
                        *acc = acc.wrapping_add(m);
                    }
                }
            }
        }
        Ok(sum)
    }
}
