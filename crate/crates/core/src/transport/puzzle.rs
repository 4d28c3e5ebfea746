//! Stateless admission puzzles.
//!
//! The nonce is a keyed hash of the tunnel id and the client's ephemeral key,
//! so the server can check a solution without remembering having issued it.

use sha2::{Digest, Sha256};

pub const MAX_DIFFICULTY: u8 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Puzzle {
    pub nonce: [u8; 16],
    pub difficulty: u8,
}

pub fn issue_nonce(secret: &[u8; 32], tid: u64, client_eph: &[u8; 32]) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(tid.to_be_bytes());
    h.update(client_eph);
    let d = h.finalize();
    d[..16].try_into().expect("16 of 32 bytes")
}

fn leading_zero_bits(d: &[u8]) -> u32 {
    let mut n = 0;
    for &b in d {
        if b == 0 {
            n += 8;
        } else {
            return n + b.leading_zeros();
        }
    }
    n
}

impl Puzzle {
    /// `SHA-256(nonce ‖ solution ‖ client_eph)` has at least `difficulty`
    /// leading zero bits.
    pub fn verify(&self, solution: u64, client_eph: &[u8; 32]) -> bool {
        let mut h = Sha256::new();
        h.update(self.nonce);
        h.update(solution.to_be_bytes());
        h.update(client_eph);
        leading_zero_bits(&h.finalize()) >= u32::from(self.difficulty)
    }

    /// Searches from 0 upward. Returns the solution and the number of hashes
    /// tried. `None` above [`MAX_DIFFICULTY`].
    pub fn solve(&self, client_eph: &[u8; 32]) -> Option<(u64, u64)> {
        if self.difficulty > MAX_DIFFICULTY {
            return None;
        }
        (0u64..).find(|&s| self.verify(s, client_eph)).map(|s| (s, s + 1))
    }
}
