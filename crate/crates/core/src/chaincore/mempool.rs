use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::amount::Amount;
use super::keys::Address;
use super::state::{ChainState, ValidationError};
use super::tx::{verify_transaction_signature, Transaction};
use crate::codec::Hash256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MempoolError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("transaction {0} already pending")]
    Duplicate(Hash256),
    #[error("sender already has a pending transaction with this nonce")]
    Conflict,
}

type Key = (Reverse<Amount>, Hash256);

/// Nonces this far past a sender's next one are parked rather than refused.
pub const MAX_NONCE_GAP: u64 = 16;

/// Pending transactions, iterated by decreasing fee then ascending hash.
///
/// Ready entries validate against the tip state, so each sender has at most
/// one (its next nonce). Later nonces wait in a parked set until their turn.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    entries: BTreeMap<Key, Transaction>,
    by_hash: HashMap<Hash256, Key>,
    by_sender: HashMap<Address, Hash256>,
    parked: BTreeMap<(Address, u64), Transaction>,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, state: &ChainState, tx: Transaction) -> Result<Hash256, MempoolError> {
        let hash = tx.hash();
        if self.contains(&hash) {
            return Err(MempoolError::Duplicate(hash));
        }
        match state.validate_transaction(&tx) {
            Ok(()) => {}
            Err(ValidationError::BadNonce { expected, got }) if got > expected && got - expected <= MAX_NONCE_GAP => {
                if !verify_transaction_signature(&tx) {
                    return Err(ValidationError::BadSignature.into());
                }
                let sender = tx.sender_address(state.config.address_version).expect("signed transactions have a sender");
                if self.parked.contains_key(&(sender, got)) {
                    return Err(MempoolError::Conflict);
                }
                self.parked.insert((sender, got), tx);
                return Ok(hash);
            }
            Err(e) => return Err(e.into()),
        }
        let sender = tx
            .sender_address(state.config.address_version)
            .expect("validated transactions have a sender");
        if self.by_sender.contains_key(&sender) {
            return Err(MempoolError::Conflict);
        }
        self.admit(sender, tx);
        Ok(hash)
    }

    fn admit(&mut self, sender: Address, tx: Transaction) {
        let hash = tx.hash();
        let key = (Reverse(tx.fee), hash);
        self.by_sender.insert(sender, hash);
        self.by_hash.insert(hash, key);
        self.entries.insert(key, tx);
    }

    pub fn remove(&mut self, hash: &Hash256) -> Option<Transaction> {
        let Some(key) = self.by_hash.remove(hash) else {
            let slot = self.parked.iter().find(|(_, t)| t.hash() == *hash).map(|(k, _)| *k)?;
            return self.parked.remove(&slot);
        };
        let tx = self.entries.remove(&key)?;
        self.by_sender.retain(|_, h| h != hash);
        Some(tx)
    }

    /// Ready or parked.
    pub fn contains(&self, hash: &Hash256) -> bool {
        self.by_hash.contains_key(hash) || self.parked.values().any(|t| t.hash() == *hash)
    }

    /// Transactions waiting on an earlier nonce from the same sender.
    pub fn parked(&self) -> impl Iterator<Item = &Transaction> {
        self.parked.values()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transaction> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops every entry that no longer validates against `state`, then
    /// promotes parked entries whose nonce has come up.
    pub fn revalidate(&mut self, state: &ChainState) {
        let stale: Vec<Hash256> = self
            .entries
            .values()
            .filter(|tx| state.validate_transaction(tx).is_err())
            .map(Transaction::hash)
            .collect();
        for h in stale {
            self.remove(&h);
        }
        let due: Vec<(Address, u64)> = self
            .parked
            .keys()
            .filter(|(sender, nonce)| *nonce <= state.nonce(sender) + 1)
            .copied()
            .collect();
        for slot in due {
            let tx = self.parked.remove(&slot).expect("listed");
            let ready = !self.by_sender.contains_key(&slot.0);
            if ready && slot.1 == state.nonce(&slot.0) + 1 && state.validate_transaction(&tx).is_ok() {
                self.admit(slot.0, tx);
            }
        }
    }
}
