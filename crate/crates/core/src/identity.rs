//! Keypairs and signatures for prototype exchange.
//!
//! Ed25519 wire semantics: 32-byte secret and public keys, 64-byte
//! deterministic signatures, so chains produced by different
//! implementations interoperate. Keys derive deterministically from a
//! 64-bit seed for reproducible simulations.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use thiserror::Error;

pub const PUBLIC_KEY_LEN: usize = 32;
pub const SECRET_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("signed message shorter than its fixed fields ({len} bytes)")]
    TooShort { len: usize },
}

/// A client's signing identity. `verify(sign(m), m)` holds for every
/// message; the public half is what peers keep in their directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    secret: [u8; SECRET_KEY_LEN],
    public: [u8; PUBLIC_KEY_LEN],
}

impl KeyPair {
    pub fn public(&self) -> [u8; PUBLIC_KEY_LEN] {
        self.public
    }
}

/// Deterministic keypair from a 64-bit seed.
pub fn keygen(seed: u64) -> KeyPair {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut secret = [0u8; SECRET_KEY_LEN];
    rng.fill_bytes(&mut secret);
    let signing = SigningKey::from_bytes(&secret);
    KeyPair { secret, public: signing.verifying_key().to_bytes() }
}

/// Deterministic Ed25519 signature over the payload.
pub fn sign(payload: &[u8], key: &KeyPair) -> [u8; SIGNATURE_LEN] {
    SigningKey::from_bytes(&key.secret).sign(payload).to_bytes()
}

/// Signature check that never aborts: malformed keys or signatures simply
/// fail verification.
pub fn verify(payload: &[u8], signature: &[u8; SIGNATURE_LEN], public: &[u8; PUBLIC_KEY_LEN]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public) else {
        return false;
    };
    key.verify(payload, &Signature::from_bytes(signature)).is_ok()
}

/// One client's broadcast for a round: the canonical prototype bytes plus
/// the round index and sender id, signed as a unit.
///
/// Wire layout: round (u64 LE) | client id (u32 LE) | payload | signature
/// (64 bytes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedPrototypeMessage {
    pub round: u64,
    pub client_id: u32,
    pub payload: Vec<u8>,
    pub signature: [u8; SIGNATURE_LEN],
}

impl SignedPrototypeMessage {
    /// Builds and signs a message for the given round and sender.
    pub fn sign_new(round: u64, client_id: u32, payload: Vec<u8>, key: &KeyPair) -> Self {
        let signed = signed_bytes(round, client_id, &payload);
        let signature = sign(&signed, key);
        Self { round, client_id, payload, signature }
    }

    /// True when the signature covers this message under the given key.
    pub fn verify(&self, public: &[u8; PUBLIC_KEY_LEN]) -> bool {
        verify(&signed_bytes(self.round, self.client_id, &self.payload), &self.signature, public)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 + self.payload.len() + SIGNATURE_LEN);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, IdentityError> {
        if bytes.len() < 8 + 4 + SIGNATURE_LEN {
            return Err(IdentityError::TooShort { len: bytes.len() });
        }
        let round = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
        let client_id = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let sig_start = bytes.len() - SIGNATURE_LEN;
        let payload = bytes[12..sig_start].to_vec();
        let signature = bytes[sig_start..].try_into().expect("64 bytes");
        Ok(Self { round, client_id, payload, signature })
    }
}

/// The bytes a signature covers.
fn signed_bytes(round: u64, client_id: u32, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + payload.len());
    out.extend_from_slice(&round.to_le_bytes());
    out.extend_from_slice(&client_id.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_pair_distinct_seeds_distinct_keys() {
        assert_eq!(keygen(1), keygen(1));
        assert_ne!(keygen(1).public(), keygen(2).public());
    }

    #[test]
    fn hundred_seeds_hundred_public_keys() {
        let mut keys: Vec<[u8; 32]> = (0..100).map(|s| keygen(s).public()).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 100);
    }

    #[test]
    fn sign_verify_round_trip() {
        let key = keygen(7);
        let payload = b"round 3 prototypes";
        let sig = sign(payload, &key);
        assert!(verify(payload, &sig, &key.public()));
    }

    #[test]
    fn flipped_payload_bit_fails() {
        let key = keygen(8);
        let payload = b"prototypes".to_vec();
        let sig = sign(&payload, &key);
        let mut tampered = payload.clone();
        tampered[0] ^= 0x01;
        assert!(!verify(&tampered, &sig, &key.public()));
    }

    #[test]
    fn other_clients_key_fails() {
        let key = keygen(9);
        let other = keygen(10);
        let payload = b"prototypes";
        let sig = sign(payload, &key);
        assert!(!verify(payload, &sig, &other.public()));
    }

    #[test]
    fn message_wire_round_trip() {
        let key = keygen(11);
        let msg = SignedPrototypeMessage::sign_new(5, 2, vec![1, 2, 3, 4], &key);
        assert!(msg.verify(&key.public()));
        let bytes = msg.encode();
        assert_eq!(bytes.len(), 8 + 4 + 4 + SIGNATURE_LEN);
        let back = SignedPrototypeMessage::decode(&bytes).unwrap();
        assert_eq!(back, msg);
        assert!(back.verify(&key.public()));
        assert!(SignedPrototypeMessage::decode(&bytes[..20]).is_err());
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Round trip over random payloads/seeds; any single-bit flip in
        /// payload, signature, or public key breaks verification.
        #[test]
        fn tamper_detection(seed in 0u64..10_000, payload in proptest::collection::vec(any::<u8>(), 1..64), flip_bit in 0usize..64) {
            let key = keygen(seed);
            let sig = sign(&payload, &key);
            prop_assert!(verify(&payload, &sig, &key.public()));

            let mut p = payload.clone();
            let bit = flip_bit % (p.len() * 8);
            p[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(!verify(&p, &sig, &key.public()));

            let mut s = sig;
            let bit = flip_bit % (SIGNATURE_LEN * 8);
            s[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(!verify(&payload, &s, &key.public()));

            let mut k = key.public();
            let bit = flip_bit % (PUBLIC_KEY_LEN * 8);
            k[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(!verify(&payload, &sig, &k));
        }
    }
}
