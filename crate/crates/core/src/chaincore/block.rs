use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::tx::{Transaction, TxKind};
use crate::codec::{Encoder, Hash256};

/// A 256-bit big-endian proof-of-work threshold.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Target(pub [u8; 32]);

impl Target {
    /// 2^256 − 1: every hash qualifies.
    pub const MAX: Target = Target([0xff; 32]);
    pub const ZERO: Target = Target([0; 32]);

    /// The target `2^exp` for `exp < 256`.
    pub fn pow2(exp: u32) -> Target {
        assert!(exp < 256, "2^{exp} does not fit in 256 bits");
        let mut t = [0u8; 32];
        let byte = 31 - (exp / 8) as usize;
        t[byte] = 1 << (exp % 8);
        Target(t)
    }

    pub fn is_met_by(&self, hash: &Hash256) -> bool {
        hash.0 <= self.0
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Target({self})")
    }
}

impl FromStr for Target {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut t = [0u8; 32];
        hex::decode_to_slice(s, &mut t)?;
        Ok(Target(t))
    }
}

impl Serialize for Target {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Target {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub const HEADER_LEN: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub prev_hash: Hash256,
    pub tx_root: Hash256,
    pub height: u64,
    pub timestamp: u64,
    pub target: Target,
    #[serde(rename = "nonce")]
    pub challenge_nonce: u64,
}

impl BlockHeader {
    pub fn canonical_bytes(&self) -> [u8; HEADER_LEN] {
        let bytes = Encoder::new()
            .raw(&self.prev_hash.0)
            .raw(&self.tx_root.0)
            .u64(self.height)
            .u64(self.timestamp)
            .raw(&self.target.0)
            .u64(self.challenge_nonce)
            .finish();
        bytes.try_into().expect("fixed header layout")
    }

    pub fn hash(&self) -> Hash256 {
        Hash256::digest(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    #[serde(rename = "txs")]
    pub transactions: Vec<Transaction>,
}

/// SHA-256 over the concatenated transaction hashes, in block order.
pub fn compute_tx_root(txs: &[Transaction]) -> Hash256 {
    let mut enc = Encoder::new();
    for tx in txs {
        enc.raw(&tx.hash().0);
    }
    Hash256::digest(&enc.finish())
}

impl Block {
    pub fn hash(&self) -> Hash256 {
        self.header.hash()
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn coinbase(&self) -> Option<&Transaction> {
        self.transactions.first().filter(|tx| tx.kind == TxKind::Coinbase)
    }

    /// Non-coinbase transactions.
    pub fn body(&self) -> &[Transaction] {
        if self.coinbase().is_some() {
            &self.transactions[1..]
        } else {
            &self.transactions
        }
    }

    pub fn tx_root_matches(&self) -> bool {
        compute_tx_root(&self.transactions) == self.header.tx_root
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pow2_layout() {
        let t = Target::pow2(248);
        assert_eq!(t.0[0], 1);
        assert!(t.0[1..].iter().all(|b| *b == 0));
        assert_eq!(Target::pow2(0).0[31], 1);
        assert_eq!(Target::pow2(9).0[30], 2);
    }

    #[test]
    fn target_comparison_is_big_endian() {
        let t = Target::pow2(248);
        let mut below = [0xffu8; 32];
        below[0] = 0;
        assert!(t.is_met_by(&Hash256(below)));
        assert!(t.is_met_by(&Hash256(t.0)));
        let mut above = [0u8; 32];
        above[0] = 1;
        above[31] = 1;
        assert!(!t.is_met_by(&Hash256(above)));
    }

    #[test]
    fn header_encoding_is_fixed_length() {
        let h = BlockHeader {
            prev_hash: Hash256::ZERO,
            tx_root: Hash256::ZERO,
            height: 1,
            timestamp: 2,
            target: Target::MAX,
            challenge_nonce: 3,
        };
        let b = h.canonical_bytes();
        assert_eq!(&b[64..72], &1u64.to_be_bytes());
        assert_eq!(&b[72..80], &2u64.to_be_bytes());
        assert_eq!(&b[112..120], &3u64.to_be_bytes());
    }
}
