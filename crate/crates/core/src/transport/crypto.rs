//! Key derivation, the rekey hash chain and per-packet AEAD.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop};

pub const KDF_CONTEXT: &[u8] = b"mlt-v1";
pub const TAG_LEN: usize = 16;

/// Direction byte of the nonce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Direction {
    ClientToServer = 0,
    ServerToClient = 1,
}

/// A tunnel's symmetric key. Zeroed when dropped or advanced.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct TunnelKey([u8; 32]);

impl std::fmt::Debug for TunnelKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TunnelKey(..)")
    }
}

impl TunnelKey {
    /// `SHA-256(dh ‖ tid ‖ "mlt-v1")`
    pub fn derive(dh_shared: &[u8; 32], tid: u64) -> Self {
        let mut h = Sha256::new();
        h.update(dh_shared);
        h.update(tid.to_be_bytes());
        h.update(KDF_CONTEXT);
        TunnelKey(h.finalize().into())
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        TunnelKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// The next link of the hash chain.
    pub fn next(&self) -> Self {
        TunnelKey(Sha256::digest(self.0).into())
    }

    /// Replaces `self` with the next key; the previous bytes are zeroed.
    pub fn advance(&mut self) {
        let next = self.next();
        *self = next;
    }

    pub fn seal(&self, generation: u32, dir: Direction, counter: u32, aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
        ChaCha20Poly1305::new(Key::from_slice(&self.0))
            .encrypt(&nonce(generation, dir, counter), Payload { msg: plaintext, aad })
            .expect("in-memory encryption cannot fail")
    }

    pub fn open(&self, generation: u32, dir: Direction, counter: u32, aad: &[u8], ciphertext: &[u8]) -> Option<Vec<u8>> {
        self.cipher().open(generation, dir, counter, aad, ciphertext)
    }

    pub(crate) fn cipher(&self) -> Opener {
        Opener(ChaCha20Poly1305::new(Key::from_slice(&self.0)))
    }
}

/// A keyed cipher for repeated trial decryption.
pub(crate) struct Opener(ChaCha20Poly1305);

impl Opener {
    pub fn open(&self, generation: u32, dir: Direction, counter: u32, aad: &[u8], ciphertext: &[u8]) -> Option<Vec<u8>> {
        self.0.decrypt(&nonce(generation, dir, counter), Payload { msg: ciphertext, aad }).ok()
    }
}

/// `generation u32 | direction u8 | counter u32 | 000`
pub fn nonce(generation: u32, dir: Direction, counter: u32) -> Nonce {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&generation.to_be_bytes());
    n[4] = dir as u8;
    n[5..9].copy_from_slice(&counter.to_be_bytes());
    *Nonce::from_slice(&n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_chain_matches_iterated_sha256() {
        let mut k = TunnelKey::from_bytes([3; 32]);
        let mut oracle = [3u8; 32];
        for _ in 0..5 {
            k.advance();
            oracle = Sha256::digest(oracle).into();
        }
        assert_eq!(k.as_bytes(), &oracle);
    }

    #[test]
    fn kdf_binds_tid() {
        assert_ne!(TunnelKey::derive(&[1; 32], 1).as_bytes(), TunnelKey::derive(&[1; 32], 2).as_bytes());
        let mut manual = Vec::new();
        manual.extend_from_slice(&[1; 32]);
        manual.extend_from_slice(&7u64.to_be_bytes());
        manual.extend_from_slice(b"mlt-v1");
        assert_eq!(TunnelKey::derive(&[1; 32], 7).as_bytes(), &<[u8; 32]>::from(Sha256::digest(&manual)));
    }

    #[test]
    fn nonce_fields_separate_ciphertexts() {
        let k = TunnelKey::from_bytes([5; 32]);
        let ct = k.seal(0, Direction::ClientToServer, 0, b"h", b"frame");
        assert_eq!(ct.len(), 5 + TAG_LEN);
        assert_eq!(k.open(0, Direction::ClientToServer, 0, b"h", &ct).unwrap(), b"frame");
        assert!(k.open(1, Direction::ClientToServer, 0, b"h", &ct).is_none());
        assert!(k.open(0, Direction::ServerToClient, 0, b"h", &ct).is_none());
        assert!(k.open(0, Direction::ClientToServer, 1, b"h", &ct).is_none());
        assert!(k.open(0, Direction::ClientToServer, 0, b"x", &ct).is_none());
        assert!(k.next().open(0, Direction::ClientToServer, 0, b"h", &ct).is_none());
        assert_eq!(&nonce(0x01020304, Direction::ServerToClient, 0x0a0b0c0d)[..], &[1, 2, 3, 4, 1, 0x0a, 0x0b, 0x0c, 0x0d, 0, 0, 0]);
    }
}
