//! Per-session key material: ed25519 identities for advert signing, one
//! x25519 pair for pairwise mask seeds and one for encrypting share
//! deliveries.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use md5::{Digest, Md5};
use rand::Rng;
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::error::SecAggError;

/// Fresh keypairs generated for one participant at session start.
pub struct ParticipantKeys {
    pub signing: SigningKey,
    /// x25519 secret for pairwise mask seed agreement ("s" key).
    pub mask_secret: StaticSecret,
    /// x25519 secret for encrypting share deliveries ("c" key).
    pub enc_secret: StaticSecret,
}

impl ParticipantKeys {
    pub fn generate(rng: &mut impl Rng) -> Self {
        let mut buf = [0u8; 32];
        rng.fill_bytes(&mut buf);
        let signing = SigningKey::from_bytes(&buf);
        rng.fill_bytes(&mut buf);
        let mask_secret = StaticSecret::from(buf);
        rng.fill_bytes(&mut buf);
        let enc_secret = StaticSecret::from(buf);
        ParticipantKeys {
            signing,
            mask_secret,
            enc_secret,
        }
    }

    pub fn mask_public(&self) -> PublicKey {
        PublicKey::from(&self.mask_secret)
    }

    pub fn enc_public(&self) -> PublicKey {
        PublicKey::from(&self.enc_secret)
    }
}

/// Bytes covered by the advert signature: both public keys bound to the
/// session and the sender's id.
pub fn advert_signing_bytes(session: u64, id: u32, s_pk: &[u8; 32], c_pk: &[u8; 32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 + 4 + 64);
    buf.extend_from_slice(b"secagg-advert-v1");
    buf.extend_from_slice(&session.to_le_bytes());
    buf.extend_from_slice(&id.to_le_bytes());
    buf.extend_from_slice(s_pk);
    buf.extend_from_slice(c_pk);
    buf
}

pub fn sign_advert(
    keys: &ParticipantKeys,
    session: u64,
    id: u32,
    s_pk: &[u8; 32],
    c_pk: &[u8; 32],
) -> [u8; 64] {
    keys.signing
        .sign(&advert_signing_bytes(session, id, s_pk, c_pk))
        .to_bytes()
}

pub fn verify_advert(
    sign_pk: &[u8; 32],
    session: u64,
    id: u32,
    s_pk: &[u8; 32],
    c_pk: &[u8; 32],
    signature: &[u8; 64],
) -> Result<(), SecAggError> {
    let vk = VerifyingKey::from_bytes(sign_pk).map_err(|_| SecAggError::BadSignature(id))?;
    let sig = Signature::from_bytes(signature);
    vk.verify(&advert_signing_bytes(session, id, s_pk, c_pk), &sig)
        .map_err(|_| SecAggError::BadSignature(id))
}

/// Pairwise mask seed: MD5 digest (16 bytes) of the x25519 shared secret.
/// Both directions derive the same seed.
pub fn pairwise_seed(own: &StaticSecret, peer_pk: &PublicKey) -> [u8; 16] {
    let shared = own.diffie_hellman(peer_pk);
    Md5::digest(shared.as_bytes()).into()
}

/// Symmetric key for encrypting share deliveries between two participants,
/// derived from the "c" key agreement and bound to the session.
pub fn share_encryption_key(own: &StaticSecret, peer_pk: &PublicKey, session: u64) -> [u8; 32] {
    let shared = own.diffie_hellman(peer_pk);
    let mut h = Sha256::new();
    h.update(b"secagg-share-key-v1");
    h.update(shared.as_bytes());
    h.update(session.to_le_bytes());
    h.finalize().into()
}

/// Deterministic unique nonce for the single share message owner -> holder.
pub fn share_nonce(owner: u32, holder: u32) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&owner.to_le_bytes());
    n[4..8].copy_from_slice(&holder.to_le_bytes());
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn pairwise_seeds_agree_across_the_pair() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = ParticipantKeys::generate(&mut rng);
        let b = ParticipantKeys::generate(&mut rng);
        let s_ab = pairwise_seed(&a.mask_secret, &b.mask_public());
        let s_ba = pairwise_seed(&b.mask_secret, &a.mask_public());
        assert_eq!(s_ab, s_ba);
        let k_ab = share_encryption_key(&a.enc_secret, &b.enc_public(), 9);
        let k_ba = share_encryption_key(&b.enc_secret, &a.enc_public(), 9);
        assert_eq!(k_ab, k_ba);
        assert_ne!(
            share_encryption_key(&a.enc_secret, &b.enc_public(), 10),
            k_ab
        );
    }

    #[test]
    fn signature_binds_the_advertised_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let keys = ParticipantKeys::generate(&mut rng);
        let s_pk = keys.mask_public().to_bytes();
        let c_pk = keys.enc_public().to_bytes();
        let sig = sign_advert(&keys, 7, 3, &s_pk, &c_pk);
        let sign_pk = keys.signing.verifying_key().to_bytes();
        assert!(verify_advert(&sign_pk, 7, 3, &s_pk, &c_pk, &sig).is_ok());

        // Tampered public key with an honest signature fails.
        let mut bad = s_pk;
        bad[0] ^= 1;
        assert!(matches!(
            verify_advert(&sign_pk, 7, 3, &bad, &c_pk, &sig),
            Err(SecAggError::BadSignature(3))
        ));

        // Corrupted signature fails.
        let mut bad_sig = sig;
        bad_sig[10] ^= 0xff;
        assert!(verify_advert(&sign_pk, 7, 3, &s_pk, &c_pk, &bad_sig).is_err());
    }
}
