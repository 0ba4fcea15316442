//! Content hashing, signatures and node identity.
//!
//! The protocol only relies on collision resistance of [`hash`] and
//! unforgeability of [`sign`]. Two signature backends sit behind the
//! [`SignatureScheme`] trait: Ed25519 for real runs and a hash-based double
//! that is fast and deterministic but offers no unforgeability. Large
//! randomized test batches use the double.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;
/// Number of digest bytes kept in an [`Address`].
pub const ADDRESS_BYTES: usize = 20;

/// A 32-byte SHA-256 digest. Serialized as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; DIGEST_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; DIGEST_LEN]);

    pub const fn from_bytes(bytes: [u8; DIGEST_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let raw = hex::decode(s).map_err(|_| CryptoError::BadHex(s.to_owned()))?;
        let bytes: [u8; DIGEST_LEN] = raw
            .try_into()
            .map_err(|_| CryptoError::BadLength { expected: DIGEST_LEN })?;
        Ok(Self(bytes))
    }

    /// First eight bytes as a big-endian integer; handy for seeding and sampling.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid hex string {0:?}")]
    BadHex(String),
    #[error("expected {expected} bytes")]
    BadLength { expected: usize },
}

/// SHA-256 of `message`.
pub fn hash(message: &[u8]) -> Digest {
    Digest(Sha256::digest(message).into())
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Short printable identity: hex of the first 20 bytes of `hash(public key)`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(String);

impl Address {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Builds an address from an arbitrary label. Used for fixed agent
    /// payout accounts that are not tied to a node key.
    pub fn from_label(label: &str) -> Self {
        let d = hash(label.as_bytes());
        Address(hex::encode(&d.as_bytes()[..ADDRESS_BYTES]))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let ok = s.len() == ADDRESS_BYTES * 2
            && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        ok.then(|| Address(s.to_owned()))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", &self.0[..8.min(self.0.len())])
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Ed25519,
    HashDouble,
}

impl Scheme {
    fn backend(self) -> &'static dyn SignatureScheme {
        match self {
            Scheme::Ed25519 => &Ed25519Scheme,
            Scheme::HashDouble => &HashDoubleScheme,
        }
    }
}

/// Provider interface for a signature backend.
pub trait SignatureScheme: Sync {
    fn public_from_seed(&self, seed: &[u8; 32]) -> Vec<u8>;
    fn sign(&self, seed: &[u8; 32], public: &[u8], message: &[u8]) -> Vec<u8>;
    fn verify(&self, public: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

pub struct Ed25519Scheme;

impl SignatureScheme for Ed25519Scheme {
    fn public_from_seed(&self, seed: &[u8; 32]) -> Vec<u8> {
        SigningKey::from_bytes(seed).verifying_key().to_bytes().to_vec()
    }

    fn sign(&self, seed: &[u8; 32], _public: &[u8], message: &[u8]) -> Vec<u8> {
        SigningKey::from_bytes(seed).sign(message).to_bytes().to_vec()
    }

    fn verify(&self, public: &[u8], message: &[u8], signature: &[u8]) -> bool {
        let Ok(pk) = <[u8; 32]>::try_from(public) else {
            return false;
        };
        let Ok(sig) = <[u8; 64]>::try_from(signature) else {
            return false;
        };
        let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
            return false;
        };
        vk.verify(message, &ed25519_dalek::Signature::from_bytes(&sig))
            .is_ok()
    }
}

/// Deterministic stand-in: the "signature" is a hash binding public key and
/// message. Anyone holding the public key can forge it.
pub struct HashDoubleScheme;

impl SignatureScheme for HashDoubleScheme {
    fn public_from_seed(&self, seed: &[u8; 32]) -> Vec<u8> {
        hash_parts(&[b"hash-double/pk", seed]).as_bytes().to_vec()
    }

    fn sign(&self, _seed: &[u8; 32], public: &[u8], message: &[u8]) -> Vec<u8> {
        hash_parts(&[b"hash-double/sig", public, message])
            .as_bytes()
            .to_vec()
    }

    fn verify(&self, public: &[u8], message: &[u8], signature: &[u8]) -> bool {
        hash_parts(&[b"hash-double/sig", public, message]).as_bytes()[..] == *signature
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PublicKey {
    pub scheme: Scheme,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({:?}, {})", self.scheme, hex::encode(&self.bytes[..4.min(self.bytes.len())]))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    pub public_key: PublicKey,
    private_key: [u8; 32],
    pub address: Address,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn private_key(&self) -> &[u8; 32] {
        &self.private_key
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub signer: Address,
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature(by {})", &self.signer.as_str()[..8.min(self.signer.as_str().len())])
    }
}

pub fn address_of(public_key: &PublicKey) -> Address {
    let d = hash(&public_key.bytes);
    Address(hex::encode(&d.as_bytes()[..ADDRESS_BYTES]))
}

/// Ed25519 key pair from 32 bytes of seed entropy.
pub fn keygen(seed: &[u8; 32]) -> KeyPair {
    keygen_with(Scheme::Ed25519, seed)
}

pub fn keygen_with(scheme: Scheme, seed: &[u8; 32]) -> KeyPair {
    let public_key = PublicKey {
        scheme,
        bytes: scheme.backend().public_from_seed(seed),
    };
    let address = address_of(&public_key);
    KeyPair {
        public_key,
        private_key: *seed,
        address,
    }
}

pub fn sign(key: &KeyPair, message: &[u8]) -> Signature {
    let scheme = key.public_key.scheme.backend();
    Signature {
        bytes: scheme.sign(&key.private_key, &key.public_key.bytes, message),
        signer: key.address.clone(),
    }
}

/// Never panics; every mismatch is `false`.
///
/// Ed25519 results are memoized process-wide: a simulation checks the same
/// vote or transaction signature on every node that receives it.
pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    if address_of(public_key) != signature.signer {
        return false;
    }
    let backend = public_key.scheme.backend();
    if public_key.scheme != Scheme::Ed25519 {
        return backend.verify(&public_key.bytes, message, &signature.bytes);
    }
    let key = hash_parts(&[&public_key.bytes, hash(message).as_bytes(), &signature.bytes]);
    let cache = VERIFY_CACHE.get_or_init(Default::default);
    if let Some(&hit) = cache.lock().expect("verify cache poisoned").get(&key) {
        return hit;
    }
    let ok = backend.verify(&public_key.bytes, message, &signature.bytes);
    let mut map = cache.lock().expect("verify cache poisoned");
    if map.len() >= VERIFY_CACHE_LIMIT {
        map.clear();
    }
    map.insert(key, ok);
    ok
}

const VERIFY_CACHE_LIMIT: usize = 1 << 20;
static VERIFY_CACHE: OnceLock<Mutex<HashMap<Digest, bool>>> = OnceLock::new();

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn seed(n: u64) -> [u8; 32] {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&n.to_be_bytes());
        s
    }

    #[test]
    fn hash_of_empty_is_pinned() {
        assert_eq!(
            hash(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(hash(b"abc"), hash(b"abc"));
    }

    #[test]
    fn single_bit_flips_change_the_digest() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let len = rng.gen_range(1..256);
            let mut msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let before = hash(&msg);
            let byte = rng.gen_range(0..len);
            msg[byte] ^= 1 << rng.gen_range(0..8);
            assert_ne!(before, hash(&msg));
        }
    }

    #[test]
    fn keygen_is_deterministic_and_address_derives_from_key() {
        let a = keygen(&seed(1));
        let b = keygen(&seed(1));
        assert_eq!(a.public_key, b.public_key);
        assert_eq!(a.address, b.address);
        assert_eq!(a.address, address_of(&a.public_key));
        assert_eq!(a.address.as_str().len(), 40);
    }

    #[test]
    fn no_address_collisions_over_ten_thousand_seeds() {
        let mut seen = HashSet::new();
        for n in 0..10_000u64 {
            let k = keygen_with(Scheme::HashDouble, &seed(n));
            assert!(seen.insert(k.address), "collision at seed {n}");
        }
        // Ed25519 derivation is slower; a smaller sweep still exercises it.
        let mut seen = HashSet::new();
        for n in 0..500u64 {
            assert!(seen.insert(keygen(&seed(n)).address));
        }
    }

    #[test]
    fn sign_verify_round_trip_both_schemes() {
        for scheme in [Scheme::Ed25519, Scheme::HashDouble] {
            let k = keygen_with(scheme, &seed(3));
            let sig = sign(&k, b"hello");
            assert!(verify(&k.public_key, b"hello", &sig));
            assert!(!verify(&k.public_key, b"hellp", &sig));
            let other = keygen_with(scheme, &seed(4));
            assert!(!verify(&other.public_key, b"hello", &sig));
        }
    }

    #[test]
    fn perturbed_messages_never_verify() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = keygen(&seed(9));
        for _ in 0..1000 {
            let len = rng.gen_range(1..64);
            let msg: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let sig = sign(&k, &msg);
            assert!(verify(&k.public_key, &msg, &sig));
            let mut bad = msg.clone();
            let i = rng.gen_range(0..len);
            bad[i] = bad[i].wrapping_add(rng.gen_range(1..=255));
            assert!(!verify(&k.public_key, &bad, &sig));
        }
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = hash(b"x");
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        assert!(Digest::from_hex("zz").is_err());
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
