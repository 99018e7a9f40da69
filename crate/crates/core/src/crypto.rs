//! Hashing, signatures, sealing and simulated remote attestation.
//!
//! SHA-256 digests, Ed25519 signatures, ChaCha20-Poly1305 (RFC 8439) for all
//! authenticated encryption. Sealing to a party uses an ephemeral X25519
//! exchange against the Montgomery form of the recipient's Ed25519 key, so a
//! single key pair both signs and receives sealed material.

use std::collections::BTreeMap;
use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authentication failure")]
    AuthFailure,
    #[error("recipient {0} is not registered")]
    UnknownRecipient(KeyId),
    #[error("key {0} is not a valid public key")]
    InvalidKey(KeyId),
    #[error("attestation unavailable for {0}")]
    AttestationUnavailable(KeyId),
    #[error("invalid hex: {0}")]
    Hex(String),
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out).map_err(|e| CryptoError::Hex(format!("{e} in {s:?}")))?;
                if s.bytes().any(|b| b.is_ascii_uppercase()) {
                    return Err(CryptoError::Hex(format!("uppercase hex in {s:?}")));
                }
                Ok(Self(out))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let hex = self.to_hex();
                write!(f, "{}({}..)", stringify!($name), &hex[..12])
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }

        impl Canonical for $name {
            fn encode(&self, enc: &mut Encoder) {
                enc.fixed(&self.0);
            }
        }

        impl Decode for $name {
            fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                Ok(Self(dec.array()?))
            }
        }
    };
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);
hex_bytes!(Digest, 32);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn is_zero(&self) -> bool {
        self.0 == [0u8; 32]
    }
}

/// Public-key id: the 32-byte Ed25519 verification key of a party, or the
/// identifier of a symmetric edge key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyId(pub [u8; 32]);
hex_bytes!(KeyId, 32);

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; 64]);
hex_bytes!(Signature, 64);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub [u8; 16]);
hex_bytes!(TaskId, 16);

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Digest of a value's canonical encoding.
pub fn hash_canonical<T: Canonical + ?Sized>(value: &T) -> Digest {
    hash(&value.to_canonical())
}

/// Deterministic generator for one labelled stream derived from a run seed.
pub fn seeded_rng(seed: u64, label: &str, index: u64) -> ChaCha20Rng {
    let mut enc = Encoder::new();
    enc.str("pixiu/rng/v1").u64(seed).str(label).u64(index);
    ChaCha20Rng::from_seed(hash(&enc.into_bytes()).0)
}

pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self { signing: SigningKey::from_bytes(&seed) }
    }

    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn public(&self) -> KeyId {
        KeyId(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }

    /// Opens a blob produced by [`seal_to`] for this key pair.
    pub fn unseal(&self, blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
        if blob.recipient != self.public() || blob.nonce.len() != 44 {
            return Err(CryptoError::AuthFailure);
        }
        let mut eph = [0u8; 32];
        eph.copy_from_slice(&blob.nonce[..32]);
        let secret = x25519_dalek::StaticSecret::from(self.signing.to_scalar_bytes());
        let shared = secret.diffie_hellman(&x25519_dalek::PublicKey::from(eph));
        if !shared.was_contributory() {
            return Err(CryptoError::AuthFailure);
        }
        let key = seal_key(shared.as_bytes(), &eph, &blob.recipient);
        aead_open(&key, &blob.nonce[32..], &blob.recipient, &blob.ciphertext)
    }

    /// Opens a blob from [`seal_anonymous`] that may or may not be for us.
    pub fn unseal_anonymous(&self, blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
        let mut addressed = blob.clone();
        addressed.recipient = self.public();
        self.unseal(&addressed)
    }

    pub fn clone_secret(&self) -> KeyPair {
        KeyPair { signing: self.signing.clone() }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public()).finish_non_exhaustive()
    }
}

pub fn sign(key: &KeyPair, msg: &[u8]) -> Signature {
    key.sign(msg)
}

/// Ed25519 verification. Malformed keys or signature bytes verify as false.
pub fn verify(public: &KeyId, msg: &[u8], sig: &[u8]) -> bool {
    let Ok(sig) = <[u8; 64]>::try_from(sig) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&sig)).is_ok()
}

/// Authenticated ciphertext addressed to one key.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SealedBlob {
    pub recipient: KeyId,
    /// 12-byte AEAD nonce for edge keys; ephemeral X25519 key followed by
    /// the AEAD nonce for party sealing.
    pub nonce: Vec<u8>,
    pub ciphertext: Vec<u8>,
}

impl Canonical for SealedBlob {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.recipient).bytes(&self.nonce).bytes(&self.ciphertext);
    }
}

impl Decode for SealedBlob {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self { recipient: KeyId::decode(dec)?, nonce: dec.bytes()?, ciphertext: dec.bytes()? })
    }
}

impl SealedBlob {
    /// Digest of the blob as it travels on the wire.
    pub fn digest(&self) -> Digest {
        hash_canonical(self)
    }
}

fn seal_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &KeyId) -> [u8; 32] {
    let mut enc = Encoder::new();
    enc.str("pixiu/seal/v1").fixed(shared).fixed(eph).value(recipient);
    hash(&enc.into_bytes()).0
}

fn aead_seal(key: &[u8; 32], nonce: &[u8; 12], aad: &KeyId, plaintext: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .encrypt(Nonce::from_slice(nonce), Payload { msg: plaintext, aad: &aad.0 })
        .expect("chacha20poly1305 encryption is infallible for in-memory buffers")
}

fn aead_open(key: &[u8; 32], nonce: &[u8], aad: &KeyId, ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if nonce.len() != 12 {
        return Err(CryptoError::AuthFailure);
    }
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad: &aad.0 })
        .map_err(|_| CryptoError::AuthFailure)
}

/// Seals `plaintext` so only the holder of `recipient`'s secret can open it.
pub fn seal_to<R: RngCore>(recipient: &KeyId, plaintext: &[u8], rng: &mut R) -> Result<SealedBlob, CryptoError> {
    let vk = VerifyingKey::from_bytes(&recipient.0).map_err(|_| CryptoError::InvalidKey(*recipient))?;
    let their = x25519_dalek::PublicKey::from(vk.to_montgomery().to_bytes());
    let mut eph_bytes = [0u8; 32];
    rng.fill_bytes(&mut eph_bytes);
    let eph = x25519_dalek::StaticSecret::from(eph_bytes);
    let eph_pub = x25519_dalek::PublicKey::from(&eph);
    let shared = eph.diffie_hellman(&their);
    if !shared.was_contributory() {
        return Err(CryptoError::InvalidKey(*recipient));
    }
    let key = seal_key(shared.as_bytes(), eph_pub.as_bytes(), recipient);
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let ciphertext = aead_seal(&key, &nonce, recipient, plaintext);
    let mut n = eph_pub.as_bytes().to_vec();
    n.extend_from_slice(&nonce);
    Ok(SealedBlob { recipient: *recipient, nonce: n, ciphertext })
}

/// [`seal_to`] with the recipient field blanked: only trial decryption
/// reveals who the blob is for.
pub fn seal_anonymous<R: RngCore>(recipient: &KeyId, plaintext: &[u8], rng: &mut R) -> Result<SealedBlob, CryptoError> {
    let mut blob = seal_to(recipient, plaintext, rng)?;
    blob.recipient = KeyId([0u8; 32]);
    Ok(blob)
}

/// Symmetric key protecting one pipeline edge.
#[derive(Clone, PartialEq, Eq)]
pub struct EdgeKey {
    key: [u8; 32],
}

impl EdgeKey {
    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        Self { key }
    }

    pub fn from_bytes(key: [u8; 32]) -> Self {
        Self { key }
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.key
    }

    pub fn id(&self) -> KeyId {
        let mut enc = Encoder::new();
        enc.str("pixiu/edge-key-id/v1").fixed(&self.key);
        KeyId(hash(&enc.into_bytes()).0)
    }

    pub fn seal<R: RngCore>(&self, plaintext: &[u8], rng: &mut R) -> SealedBlob {
        let mut nonce = [0u8; 12];
        rng.fill_bytes(&mut nonce);
        let id = self.id();
        let ciphertext = aead_seal(&self.key, &nonce, &id, plaintext);
        SealedBlob { recipient: id, nonce: nonce.to_vec(), ciphertext }
    }

    pub fn open(&self, blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
        let id = self.id();
        if blob.recipient != id {
            return Err(CryptoError::AuthFailure);
        }
        aead_open(&self.key, &blob.nonce, &id, &blob.ciphertext)
    }
}

impl fmt::Debug for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EdgeKey({:?})", self.id())
    }
}

/// Public keys known to the network. Sealing refuses unknown recipients.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyDirectory {
    keys: BTreeMap<KeyId, String>,
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: KeyId, label: impl Into<String>) {
        self.keys.insert(id, label.into());
    }

    pub fn contains(&self, id: &KeyId) -> bool {
        self.keys.contains_key(id)
    }

    pub fn label(&self, id: &KeyId) -> Option<&str> {
        self.keys.get(id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = &KeyId> {
        self.keys.keys()
    }

    pub fn seal_to<R: RngCore>(&self, recipient: &KeyId, plaintext: &[u8], rng: &mut R) -> Result<SealedBlob, CryptoError> {
        if !self.contains(recipient) {
            return Err(CryptoError::UnknownRecipient(*recipient));
        }
        seal_to(recipient, plaintext, rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityLevel {
    MidLevel,
    HighAssurance,
}

impl SecurityLevel {
    fn tag(self) -> u8 {
        match self {
            SecurityLevel::MidLevel => 0,
            SecurityLevel::HighAssurance => 1,
        }
    }
}

impl Canonical for SecurityLevel {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.tag());
    }
}

impl Decode for SecurityLevel {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(SecurityLevel::MidLevel),
            1 => Ok(SecurityLevel::HighAssurance),
            tag => Err(DecodeError::InvalidTag { what: "security level", tag }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttestationReport {
    pub instance_id: KeyId,
    pub measurement: Digest,
    pub security_level: SecurityLevel,
    pub root_signature: Signature,
}

impl AttestationReport {
    fn signed_bytes(instance_id: &KeyId, measurement: &Digest, level: SecurityLevel) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str("pixiu/attestation/v1").value(instance_id).value(measurement).value(&level);
        enc.into_bytes()
    }
}

impl Canonical for AttestationReport {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.instance_id).value(&self.measurement).value(&self.security_level).value(&self.root_signature);
    }
}

impl Decode for AttestationReport {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            instance_id: KeyId::decode(dec)?,
            measurement: Digest::decode(dec)?,
            security_level: SecurityLevel::decode(dec)?,
            root_signature: Signature::decode(dec)?,
        })
    }
}

/// Stand-in for the hardware vendor's attestation service: it knows which
/// enclave keys are genuine and at what security level they run.
#[derive(Debug)]
pub struct ManufacturerRoot {
    key: KeyPair,
    registered: BTreeMap<KeyId, SecurityLevel>,
}

impl ManufacturerRoot {
    pub fn new(key: KeyPair) -> Self {
        Self { key, registered: BTreeMap::new() }
    }

    pub fn public(&self) -> KeyId {
        self.key.public()
    }

    pub fn register(&mut self, instance: KeyId, level: SecurityLevel) {
        self.registered.insert(instance, level);
    }

    pub fn is_registered(&self, instance: &KeyId) -> bool {
        self.registered.contains_key(instance)
    }

    pub fn security_level(&self, instance: &KeyId) -> Option<SecurityLevel> {
        self.registered.get(instance).copied()
    }

    /// Signs a statement binding `instance` to the measurement of what it runs.
    pub fn attest(&self, instance: &KeyId, measurement: Digest) -> Result<AttestationReport, CryptoError> {
        let level = *self.registered.get(instance).ok_or(CryptoError::AttestationUnavailable(*instance))?;
        let msg = AttestationReport::signed_bytes(instance, &measurement, level);
        Ok(AttestationReport { instance_id: *instance, measurement, security_level: level, root_signature: self.key.sign(&msg) })
    }
}

/// True iff the root signature verifies and the measurement is the expected one.
pub fn check_attestation(report: &AttestationReport, expected: &Digest, root: &KeyId) -> bool {
    let msg = AttestationReport::signed_bytes(&report.instance_id, &report.measurement, report.security_level);
    verify(root, &msg, &report.root_signature.0) && report.measurement == *expected
}

#[cfg(test)]
impl SealedBlob {
    fn canonical_bytes_contain(&self, id: &KeyId) -> bool {
        self.to_canonical().windows(32).any(|w| w == id.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha20Rng {
        seeded_rng(7, "crypto-test", 0)
    }

    #[test]
    fn sha256_published_vectors() {
        assert_eq!(hash(b"").to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(hash(b"abc").to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(hash(b"x"), hash(b"x"));
    }

    #[test]
    fn ed25519_rfc8032_test_vector_1() {
        let secret =
            <[u8; 32]>::try_from(hex::decode("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60").unwrap()).unwrap();
        let kp = KeyPair::from_seed(secret);
        assert_eq!(kp.public().to_hex(), "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a");
        let expected = "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155\
                        5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b";
        let sig = kp.sign(b"");
        assert_eq!(sig.to_hex(), expected);
        assert!(verify(&kp.public(), b"", &sig.0));
    }

    #[test]
    fn signature_soundness() {
        let kp = KeyPair::generate(&mut rng());
        let msg = b"execution proof bytes".to_vec();
        let sig = kp.sign(&msg);
        assert!(verify(&kp.public(), &msg, &sig.0));
        let mut flipped = msg.clone();
        flipped[3] ^= 0x01;
        assert!(!verify(&kp.public(), &flipped, &sig.0));
        // malformed signatures and keys are just false
        assert!(!verify(&kp.public(), &msg, &sig.0[..63]));
        assert!(!verify(&kp.public(), &msg, &[0xffu8; 64]));
        assert!(!verify(&KeyId([0xff; 32]), &msg, &sig.0));
    }

    #[test]
    fn seal_round_trip_and_wrong_recipient() {
        let mut rng = rng();
        let alice = KeyPair::generate(&mut rng);
        let bob = KeyPair::generate(&mut rng);
        let mut dir = KeyDirectory::new();
        dir.register(alice.public(), "alice");
        let payload: Vec<u8> = (0..1024u32).map(|i| (i * 31 % 251) as u8).collect();
        let blob = dir.seal_to(&alice.public(), &payload, &mut rng).unwrap();
        assert_eq!(alice.unseal(&blob).unwrap(), payload);
        assert_eq!(bob.unseal(&blob), Err(CryptoError::AuthFailure));
        // readdressing the blob to bob does not help him
        let mut readdressed = blob.clone();
        readdressed.recipient = bob.public();
        assert_eq!(bob.unseal(&readdressed), Err(CryptoError::AuthFailure));
        assert_eq!(dir.seal_to(&bob.public(), b"x", &mut rng), Err(CryptoError::UnknownRecipient(bob.public())));
    }

    #[test]
    fn anonymous_seal_names_no_one() {
        let mut rng = rng();
        let alice = KeyPair::generate(&mut rng);
        let bob = KeyPair::generate(&mut rng);
        let blob = seal_anonymous(&alice.public(), b"for alice", &mut rng).unwrap();
        assert!(!blob.canonical_bytes_contain(&alice.public()));
        assert_eq!(alice.unseal_anonymous(&blob).unwrap(), b"for alice");
        assert_eq!(bob.unseal_anonymous(&blob), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn sealing_uses_fresh_nonces() {
        let mut rng = rng();
        let k = EdgeKey::generate(&mut rng);
        let a = k.seal(b"same", &mut rng);
        let b = k.seal(b"same", &mut rng);
        assert_ne!(a.nonce, b.nonce);
        assert_ne!(a.ciphertext, b.ciphertext);
    }

    #[test]
    fn any_ciphertext_bit_flip_fails() {
        let mut rng = rng();
        let k = EdgeKey::generate(&mut rng);
        let other = EdgeKey::generate(&mut rng);
        let blob = k.seal(b"sixteen byte msg", &mut rng);
        assert_eq!(k.open(&blob).unwrap(), b"sixteen byte msg");
        for byte in 0..blob.ciphertext.len() {
            for bit in 0..8 {
                let mut t = blob.clone();
                t.ciphertext[byte] ^= 1 << bit;
                assert_eq!(k.open(&t), Err(CryptoError::AuthFailure));
            }
        }
        assert_eq!(other.open(&blob), Err(CryptoError::AuthFailure));

        let kp = KeyPair::generate(&mut rng);
        let sealed = seal_to(&kp.public(), b"party", &mut rng).unwrap();
        let mut t = sealed.clone();
        t.ciphertext[0] ^= 0x80;
        assert_eq!(kp.unseal(&t), Err(CryptoError::AuthFailure));
        let mut t = sealed;
        t.nonce[0] ^= 0x01;
        assert_eq!(kp.unseal(&t), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn attestation_contract() {
        let mut rng = rng();
        let mut root = ManufacturerRoot::new(KeyPair::generate(&mut rng));
        let inst = KeyPair::generate(&mut rng);
        root.register(inst.public(), SecurityLevel::HighAssurance);
        let good = hash(b"runtime+function");
        let report = root.attest(&inst.public(), good).unwrap();
        assert_eq!(report.security_level, SecurityLevel::HighAssurance);
        assert!(check_attestation(&report, &good, &root.public()));

        let swapped = root.attest(&inst.public(), hash(b"modified function")).unwrap();
        assert!(!check_attestation(&swapped, &good, &root.public()));

        let stranger = KeyPair::generate(&mut rng);
        assert_eq!(root.attest(&stranger.public(), good), Err(CryptoError::AttestationUnavailable(stranger.public())));

        let mut lying = report.clone();
        lying.security_level = SecurityLevel::MidLevel;
        assert!(!check_attestation(&lying, &good, &root.public()));
    }

    #[test]
    fn forged_root_signatures_never_verify() {
        let mut rng = rng();
        let mut root = ManufacturerRoot::new(KeyPair::generate(&mut rng));
        let inst = KeyPair::generate(&mut rng);
        root.register(inst.public(), SecurityLevel::MidLevel);
        let m = hash(b"m");
        let mut report = root.attest(&inst.public(), m).unwrap();
        for _ in 0..1000 {
            rng.fill_bytes(&mut report.root_signature.0[..32]);
            rng.fill_bytes(&mut report.root_signature.0[32..]);
            assert!(!check_attestation(&report, &m, &root.public()));
        }
    }

    #[test]
    fn hex_is_lowercase_64_chars() {
        let d = hash(b"abc");
        let h = d.to_hex();
        assert_eq!(h.len(), 64);
        assert_eq!(h, h.to_lowercase());
        assert_eq!(Digest::from_hex(&h).unwrap(), d);
        assert!(Digest::from_hex(&h.to_uppercase()).is_err());
        assert!(Digest::from_hex(&h[..62]).is_err());
    }

    #[test]
    fn seeded_streams_are_independent_and_reproducible() {
        let a: u64 = seeded_rng(1, "a", 0).next_u64();
        assert_eq!(a, seeded_rng(1, "a", 0).next_u64());
        assert_ne!(a, seeded_rng(1, "a", 1).next_u64());
        assert_ne!(a, seeded_rng(2, "a", 0).next_u64());
    }
}
