//! secp256k1 key pairs, Base58Check addresses and ECDSA signatures.

use std::fmt;
use std::str::FromStr;

use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use ripemd::Ripemd160;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::sha256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("invalid curve point encoding")]
    InvalidPoint,
    #[error("invalid private key")]
    InvalidPrivateKey,
    #[error("invalid base58 text")]
    BadBase58,
    #[error("address payload has length {0}, expected 25")]
    BadLength(usize),
    #[error("address checksum mismatch")]
    BadChecksum,
    #[error("invalid hex: {0}")]
    BadHex(String),
}

/// A compressed (33-byte SEC1) secp256k1 public key, validated on construction.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey([u8; 33]);

impl PublicKey {
    /// Accepts compressed or uncompressed SEC1 and normalizes to compressed.
    pub fn from_sec1(bytes: &[u8]) -> Result<Self, KeyError> {
        let vk = decode_sec1(bytes)?;
        Ok(Self::from_verifying_key(&vk))
    }

    fn from_verifying_key(vk: &VerifyingKey) -> Self {
        let point = vk.to_encoded_point(true);
        PublicKey(point.as_bytes().try_into().expect("compressed point is 33 bytes"))
    }

    pub fn as_bytes(&self) -> &[u8; 33] {
        &self.0
    }

    fn verifying_key(&self) -> VerifyingKey {
        VerifyingKey::from_sec1_bytes(&self.0).expect("validated at construction")
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(sig) = EcdsaSignature::from_slice(&sig.0) else {
            return false;
        };
        self.verifying_key().verify(msg, &sig).is_ok()
    }

    /// SHA-256 of the compressed encoding; what resolver clients pin.
    pub fn fingerprint(&self) -> [u8; 32] {
        sha256(&self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for PublicKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|e| KeyError::BadHex(e.to_string()))?;
        Self::from_sec1(&bytes)
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A 64-byte compact ECDSA signature (`r ‖ s`, low-s normalized).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &hex::encode(self.0)[..16])
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 64];
        hex::decode_to_slice(s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Signature(out))
    }
}

/// A secp256k1 signing key with its public half.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let signing = SigningKey::random(rng);
        Self::from_signing_key(signing)
    }

    pub fn from_private_bytes(bytes: &[u8; 32]) -> Result<Self, KeyError> {
        let signing = SigningKey::from_bytes(bytes.into()).map_err(|_| KeyError::InvalidPrivateKey)?;
        Ok(Self::from_signing_key(signing))
    }

    fn from_signing_key(signing: SigningKey) -> Self {
        let public = PublicKey::from_verifying_key(signing.verifying_key());
        KeyPair { signing, public }
    }

    pub fn private_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    /// ECDSA over SHA-256(msg) with an RFC 6979 nonce, so output is deterministic.
    pub fn sign(&self, msg: &[u8]) -> Signature {
        let sig: EcdsaSignature = self.signing.sign(msg);
        let sig = sig.normalize_s().unwrap_or(sig);
        Signature(sig.to_bytes().into())
    }

    pub fn address(&self, version: u8) -> Address {
        Address::from_public_key(&self.public, version)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

/// `Base58(version ‖ RIPEMD-160(SHA-256(pubkey)) ‖ checksum)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address {
    version: u8,
    key_hash: [u8; 20],
}

pub fn key_hash(public_key: &[u8]) -> [u8; 20] {
    Ripemd160::digest(Sha256::digest(public_key)).into()
}

/// Only the `02`/`03` compressed and `04` uncompressed forms.
fn decode_sec1(bytes: &[u8]) -> Result<VerifyingKey, KeyError> {
    match (bytes.len(), bytes.first()) {
        (33, Some(0x02 | 0x03)) | (65, Some(0x04)) => {
            VerifyingKey::from_sec1_bytes(bytes).map_err(|_| KeyError::InvalidPoint)
        }
        _ => Err(KeyError::InvalidPoint),
    }
}

fn checksum(payload: &[u8]) -> [u8; 4] {
    let h = sha256(&sha256(payload));
    [h[0], h[1], h[2], h[3]]
}

/// Derives the address for a SEC1 public key (33-byte compressed or 65-byte
/// uncompressed). The key hash covers the bytes exactly as given.
pub fn derive_address(public_key: &[u8], version: u8) -> Result<Address, KeyError> {
    decode_sec1(public_key)?;
    Ok(Address { version, key_hash: key_hash(public_key) })
}

impl Address {
    pub fn new(version: u8, key_hash: [u8; 20]) -> Self {
        Address { version, key_hash }
    }

    pub fn from_public_key(pk: &PublicKey, version: u8) -> Self {
        Address { version, key_hash: key_hash(pk.as_bytes()) }
    }

    pub fn version(&self) -> u8 {
        self.version
    }

    pub fn key_hash(&self) -> &[u8; 20] {
        &self.key_hash
    }

    fn payload(&self) -> [u8; 21] {
        let mut p = [0u8; 21];
        p[0] = self.version;
        p[1..].copy_from_slice(&self.key_hash);
        p
    }

    pub fn checksum(&self) -> [u8; 4] {
        checksum(&self.payload())
    }

    /// The 21-byte `version ‖ key_hash` used in canonical encodings.
    pub fn canonical_bytes(&self) -> [u8; 21] {
        self.payload()
    }

    pub fn text(&self) -> String {
        let mut full = Vec::with_capacity(25);
        full.extend_from_slice(&self.payload());
        full.extend_from_slice(&self.checksum());
        bs58::encode(full).into_string()
    }

    /// Parses Base58Check text, verifying the checksum.
    pub fn decode(text: &str) -> Result<(u8, [u8; 20], [u8; 4]), KeyError> {
        let raw = bs58::decode(text).into_vec().map_err(|_| KeyError::BadBase58)?;
        if raw.len() != 25 {
            return Err(KeyError::BadLength(raw.len()));
        }
        let sum: [u8; 4] = raw[21..].try_into().expect("len 25");
        if checksum(&raw[..21]) != sum {
            return Err(KeyError::BadChecksum);
        }
        Ok((raw[0], raw[1..21].try_into().expect("len 25"), sum))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.text())
    }
}

impl FromStr for Address {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (version, key_hash, _) = Address::decode(s.trim())?;
        Ok(Address { version, key_hash })
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text())
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const ALPHABET: &[u8] = b"123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";

    /// Independent Base58 encoder via big-integer division.
    fn oracle_base58(bytes: &[u8]) -> String {
        let mut n = BigUint::from_bytes_be(bytes);
        let base = BigUint::from(58u32);
        let mut digits = Vec::new();
        while n > BigUint::from(0u32) {
            let r = (&n % &base).to_u32_digits().first().copied().unwrap_or(0);
            digits.push(ALPHABET[r as usize]);
            n /= &base;
        }
        let zeros = bytes.iter().take_while(|b| **b == 0).count();
        let mut out = vec![b'1'; zeros];
        out.extend(digits.iter().rev());
        String::from_utf8(out).unwrap()
    }

    fn generator() -> KeyPair {
        let mut one = [0u8; 32];
        one[31] = 1;
        KeyPair::from_private_bytes(&one).unwrap()
    }

    // Expected strings were computed with a separate pure-Python RIPEMD-160 +
    // Base58Check implementation before this module existed.
    #[test]
    fn generator_point_addresses() {
        let g = generator();
        let compressed = g.public_key();
        assert_eq!(
            hex::encode(compressed.as_bytes()),
            "0279be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798"
        );
        let addr = derive_address(compressed.as_bytes(), 0x00).unwrap();
        assert_eq!(hex::encode(addr.key_hash()), "751e76e8199196d454941c45d1b3a323f1433bd6");
        assert_eq!(addr.text(), "1BgGZ9tcN4rm9KBzDn7KprQz87SZ26SAMH");

        let uncompressed = hex::decode(
            "0479be667ef9dcbbac55a06295ce870b07029bfcdb2dce28d959f2815b16f81798\
             483ada7726a3c4655da4fbfc0e1108a8fd17b448a68554199c47d08ffb10d4b8",
        )
        .unwrap();
        let addr = derive_address(&uncompressed, 0x00).unwrap();
        assert_eq!(addr.text(), "1EHNa6Q4Jz2uvNExL497mE43ikXhwF6kZm");
    }

    #[test]
    fn base58_matches_bigint_oracle() {
        let g = generator();
        for version in [0x00u8, 0x34, 0x6f] {
            let addr = g.address(version);
            let mut full = addr.canonical_bytes().to_vec();
            full.extend_from_slice(&addr.checksum());
            assert_eq!(addr.text(), oracle_base58(&full));
        }
    }

    #[test]
    fn invalid_point_rejected() {
        // x = 2^256 - 1 exceeds the field prime
        let mut over = [0xff; 33];
        over[0] = 0x02;
        assert_eq!(derive_address(&over, 0), Err(KeyError::InvalidPoint));
        let mut bad_tag = generator().public_key().as_bytes().to_vec();
        bad_tag[0] = 0x05;
        assert_eq!(derive_address(&bad_tag, 0), Err(KeyError::InvalidPoint));
        assert_eq!(derive_address(&[0x02; 10], 0), Err(KeyError::InvalidPoint));
    }

    #[test]
    fn single_symbol_tamper_fails_checksum() {
        let text = generator().address(0).text();
        let bytes = text.as_bytes();
        for i in 0..bytes.len() {
            let mut t = bytes.to_vec();
            t[i] = if t[i] == b'2' { b'3' } else { b'2' };
            let tampered = String::from_utf8(t).unwrap();
            assert!(Address::decode(&tampered).is_err(), "position {i}");
        }
    }

    #[test]
    fn signing_is_deterministic_and_covers_message() {
        let kp = generator();
        let a = kp.sign(b"hello");
        let b = kp.sign(b"hello");
        assert_eq!(a, b);
        assert!(kp.public_key().verify(b"hello", &a));
        assert!(!kp.public_key().verify(b"hellp", &a));
    }

    proptest! {
        #[test]
        fn address_text_round_trips(seed in any::<u64>(), version in any::<u8>()) {
            let kp = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(seed));
            let addr = kp.address(version);
            let (v, kh, sum) = Address::decode(&addr.text()).unwrap();
            prop_assert_eq!(v, version);
            prop_assert_eq!(&kh, addr.key_hash());
            prop_assert_eq!(sum, addr.checksum());
            prop_assert_eq!(addr.text().parse::<Address>().unwrap(), addr);
        }

        #[test]
        fn public_key_encoding_round_trips(seed in any::<u64>()) {
            let kp = KeyPair::generate(&mut ChaCha20Rng::seed_from_u64(seed));
            let pk = kp.public_key();
            prop_assert_eq!(PublicKey::from_sec1(pk.as_bytes()).unwrap(), pk);
            let again = KeyPair::from_private_bytes(&kp.private_bytes()).unwrap();
            prop_assert_eq!(again.public_key(), pk);
        }
    }
}
