//! The materialized ledger view and the transaction rules applied to it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::amount::Amount;
use super::block::{Block, Target};
use super::keys::{Address, PublicKey};
use super::schedule::{block_reward, registration_cost};
use super::tx::{verify_transaction_signature, Transaction, TxKind};
use crate::codec::Hash256;
use crate::nameregistry::record::{merge_value, parse_record};

pub const NAME_PREFIX: &str = "d/";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub address_version: u8,
    pub target: Target,
    /// Blocks after the last update at which a name expires.
    pub name_expiry: u64,
    pub max_value_len: usize,
    pub genesis_timestamp: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            address_version: 0x34,
            target: Target::MAX,
            name_expiry: 36_000,
            max_value_len: 4096,
            genesis_timestamp: 0,
        }
    }
}

impl ChainConfig {
    /// The genesis coinbase pays here; nobody holds the key.
    pub fn burn_address(&self) -> Address {
        Address::new(self.address_version, [0u8; 20])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameEntry {
    pub owner_pubkey: PublicKey,
    #[serde(with = "crate::codec::hex_bytes")]
    pub value: Vec<u8>,
    pub last_update_height: u64,
}

impl NameEntry {
    pub fn is_expired_at(&self, height: u64, expiry: u64) -> bool {
        height.saturating_sub(self.last_update_height) >= expiry
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NameLookup<'a> {
    Found(&'a NameEntry),
    NotFound,
    Expired(&'a NameEntry),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainState {
    pub config: ChainConfig,
    pub tip_hash: Hash256,
    pub height: u64,
    pub balances: BTreeMap<Address, Amount>,
    pub nonces: BTreeMap<Address, u64>,
    pub names: BTreeMap<String, NameEntry>,
    /// Registration burns and network fees, credited to nobody.
    pub burned: Amount,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("bad signature")]
    BadSignature,
    #[error("insufficient funds: need {need}, have {have}")]
    InsufficientFunds { need: Amount, have: Amount },
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("name {0:?} is taken")]
    NameTaken(String),
    #[error("sender does not own {0:?}")]
    NotOwner(String),
    #[error("name {0:?} has expired")]
    NameExpired(String),
    #[error("name {0:?} is not registered")]
    UnknownName(String),
    #[error("name {0:?} lacks the d/ prefix")]
    MalformedName(String),
    #[error("value of {len} bytes exceeds the {max}-byte cap")]
    ValueTooLarge { len: usize, max: usize },
    #[error("value is not a valid domain record: {0}")]
    BadValue(String),
    #[error("malformed transaction: {0}")]
    Malformed(&'static str),
    #[error("amount overflow")]
    Overflow,
    #[error("bad coinbase")]
    BadCoinbase,
}

/// One reversible state mutation, recorded with the value it replaced.
#[derive(Debug, Clone, PartialEq, Eq)]
enum UndoEntry {
    Balance(Address, Option<Amount>),
    Nonce(Address, Option<u64>),
    Name(String, Option<NameEntry>),
    Burned(Amount),
    Tip(Hash256, u64),
}

/// Everything needed to roll one applied block back.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Undo(Vec<UndoEntry>);

impl ChainState {
    /// State before genesis is applied.
    pub fn empty(config: ChainConfig) -> Self {
        ChainState {
            config,
            tip_hash: Hash256::ZERO,
            height: 0,
            balances: BTreeMap::new(),
            nonces: BTreeMap::new(),
            names: BTreeMap::new(),
            burned: Amount::ZERO,
        }
    }

    pub fn balance(&self, addr: &Address) -> Amount {
        self.balances.get(addr).copied().unwrap_or_default()
    }

    pub fn nonce(&self, addr: &Address) -> u64 {
        self.nonces.get(addr).copied().unwrap_or(0)
    }

    pub fn address_of(&self, pk: &PublicKey) -> Address {
        Address::from_public_key(pk, self.config.address_version)
    }

    pub fn total_balance(&self) -> Option<Amount> {
        self.balances.values().try_fold(Amount::ZERO, |acc, a| acc.checked_add(*a))
    }

    fn set_balance(&mut self, addr: Address, amount: Amount, undo: &mut Undo) {
        let prev = self.balances.insert(addr, amount);
        undo.0.push(UndoEntry::Balance(addr, prev));
    }

    fn debit(&mut self, addr: Address, amount: Amount, undo: &mut Undo) -> Result<(), ValidationError> {
        let have = self.balance(&addr);
        let rest = have
            .checked_sub(amount)
            .ok_or(ValidationError::InsufficientFunds { need: amount, have })?;
        self.set_balance(addr, rest, undo);
        Ok(())
    }

    fn credit(&mut self, addr: Address, amount: Amount, undo: &mut Undo) -> Result<(), ValidationError> {
        let total = self.balance(&addr).checked_add(amount).ok_or(ValidationError::Overflow)?;
        self.set_balance(addr, total, undo);
        Ok(())
    }

    fn burn(&mut self, amount: Amount, undo: &mut Undo) -> Result<(), ValidationError> {
        undo.0.push(UndoEntry::Burned(self.burned));
        self.burned = self.burned.checked_add(amount).ok_or(ValidationError::Overflow)?;
        Ok(())
    }

    fn revert(&mut self, undo: Undo) {
        for entry in undo.0.into_iter().rev() {
            match entry {
                UndoEntry::Balance(a, Some(v)) => {
                    self.balances.insert(a, v);
                }
                UndoEntry::Balance(a, None) => {
                    self.balances.remove(&a);
                }
                UndoEntry::Nonce(a, Some(v)) => {
                    self.nonces.insert(a, v);
                }
                UndoEntry::Nonce(a, None) => {
                    self.nonces.remove(&a);
                }
                UndoEntry::Name(n, Some(e)) => {
                    self.names.insert(n, e);
                }
                UndoEntry::Name(n, None) => {
                    self.names.remove(&n);
                }
                UndoEntry::Burned(b) => self.burned = b,
                UndoEntry::Tip(h, height) => {
                    self.tip_hash = h;
                    self.height = height;
                }
            }
        }
    }

    /// Lossless inverse of [`ChainState::apply_block`].
    pub fn rollback(&mut self, undo: Undo) {
        self.revert(undo);
    }

    /// Checks `tx` for inclusion in the next block (height `self.height + 1`).
    pub fn validate_transaction(&self, tx: &Transaction) -> Result<(), ValidationError> {
        self.validate_at(tx, self.height + 1).map(|_| ())
    }

    /// Returns the value a name operation would store, after merging.
    fn validate_at(&self, tx: &Transaction, block_height: u64) -> Result<Option<Vec<u8>>, ValidationError> {
        if tx.kind == TxKind::Coinbase {
            return Err(ValidationError::Malformed("coinbase outside block position 0"));
        }
        let sender = tx.sender_pubkey.as_ref().ok_or(ValidationError::Malformed("missing sender"))?;
        if !verify_transaction_signature(tx) {
            return Err(ValidationError::BadSignature);
        }
        let addr = self.address_of(sender);
        let expected = self.nonce(&addr) + 1;
        if tx.nonce != expected {
            return Err(ValidationError::BadNonce { expected, got: tx.nonce });
        }
        let mut cost = tx.fee;
        let mut stored = None;
        match tx.kind {
            TxKind::Transfer => {
                if tx.recipient.is_none() {
                    return Err(ValidationError::Malformed("transfer without recipient"));
                }
                if tx.new_owner_pubkey.is_some() || !tx.name.is_empty() || !tx.value.is_empty() {
                    return Err(ValidationError::Malformed("name fields on a transfer"));
                }
                cost = cost.checked_add(tx.amount).ok_or(ValidationError::Overflow)?;
            }
            TxKind::NameNew | TxKind::NameUpdate => {
                if !tx.amount.is_zero() || tx.recipient.is_some() {
                    return Err(ValidationError::Malformed("name operations carry no transfer"));
                }
                if !tx.name.starts_with(NAME_PREFIX) || tx.name.len() == NAME_PREFIX.len() {
                    return Err(ValidationError::MalformedName(tx.name.clone()));
                }
                self.check_value_len(tx.value.len())?;
                let existing = self.names.get(&tx.name);
                let live = existing.filter(|e| !e.is_expired_at(self.height, self.config.name_expiry));
                if tx.kind == TxKind::NameNew {
                    if tx.new_owner_pubkey.is_some() {
                        return Err(ValidationError::Malformed("new_owner_pubkey on NameNew"));
                    }
                    if live.is_some() {
                        return Err(ValidationError::NameTaken(tx.name.clone()));
                    }
                    parse_record(&tx.value).map_err(|e| ValidationError::BadValue(e.to_string()))?;
                    cost = cost.checked_add(registration_cost(block_height)).ok_or(ValidationError::Overflow)?;
                    stored = Some(tx.value.clone());
                } else {
                    let entry = match (existing, live) {
                        (None, _) => return Err(ValidationError::UnknownName(tx.name.clone())),
                        (Some(_), None) => return Err(ValidationError::NameExpired(tx.name.clone())),
                        (_, Some(entry)) => entry,
                    };
                    if entry.owner_pubkey != *sender {
                        return Err(ValidationError::NotOwner(tx.name.clone()));
                    }
                    let merged = merge_value(&entry.value, &tx.value)
                        .map_err(|e| ValidationError::BadValue(e.to_string()))?;
                    self.check_value_len(merged.len())?;
                    parse_record(&merged).map_err(|e| ValidationError::BadValue(e.to_string()))?;
                    stored = Some(merged);
                }
            }
            TxKind::Coinbase => unreachable!(),
        }
        let have = self.balance(&addr);
        if have < cost {
            return Err(ValidationError::InsufficientFunds { need: cost, have });
        }
        Ok(stored)
    }

    fn check_value_len(&self, len: usize) -> Result<(), ValidationError> {
        if len > self.config.max_value_len {
            return Err(ValidationError::ValueTooLarge { len, max: self.config.max_value_len });
        }
        Ok(())
    }

    fn apply_tx(&mut self, tx: &Transaction, block_height: u64, undo: &mut Undo) -> Result<(), ValidationError> {
        let stored = self.validate_at(tx, block_height)?;
        let sender = tx.sender_pubkey.expect("validated");
        let addr = self.address_of(&sender);
        let prev_nonce = self.nonces.insert(addr, tx.nonce);
        undo.0.push(UndoEntry::Nonce(addr, prev_nonce));
        self.debit(addr, tx.fee, undo)?;
        match tx.kind {
            TxKind::Transfer => {
                self.debit(addr, tx.amount, undo)?;
                self.credit(tx.recipient.expect("validated"), tx.amount, undo)?;
            }
            TxKind::NameNew | TxKind::NameUpdate => {
                if tx.kind == TxKind::NameNew {
                    let burn = registration_cost(block_height);
                    self.debit(addr, burn, undo)?;
                    self.burn(burn, undo)?;
                }
                let owner = tx.new_owner_pubkey.unwrap_or(sender);
                let entry = NameEntry {
                    owner_pubkey: owner,
                    value: stored.expect("name ops produce a value"),
                    last_update_height: block_height,
                };
                let prev = self.names.insert(tx.name.clone(), entry);
                undo.0.push(UndoEntry::Name(tx.name.clone(), prev));
            }
            TxKind::Coinbase => unreachable!(),
        }
        Ok(())
    }

    /// Applies a block whose header and parent linkage were already checked.
    /// On error the state is left untouched.
    pub fn apply_block(&mut self, block: &Block) -> Result<Undo, ValidationError> {
        let mut undo = Undo::default();
        match self.apply_block_inner(block, &mut undo) {
            Ok(()) => Ok(undo),
            Err(e) => {
                self.revert(undo);
                Err(e)
            }
        }
    }

    fn apply_block_inner(&mut self, block: &Block, undo: &mut Undo) -> Result<(), ValidationError> {
        let height = block.height();
        check_coinbase(block)?;
        undo.0.push(UndoEntry::Tip(self.tip_hash, self.height));
        for tx in block.body() {
            self.apply_tx(tx, height, undo)?;
        }
        let cb = &block.transactions[0];
        self.credit(cb.recipient.expect("checked"), cb.amount, undo)?;
        self.tip_hash = block.hash();
        self.height = height;
        Ok(())
    }
}

/// Exactly one coinbase, first, paying `block_reward(height) + Σ fees`.
pub fn check_coinbase(block: &Block) -> Result<(), ValidationError> {
    let cb = block.coinbase().ok_or(ValidationError::BadCoinbase)?;
    if cb.recipient.is_none() || cb.sender_pubkey.is_some() || cb.signature.is_some() || cb.nonce != block.height() {
        return Err(ValidationError::BadCoinbase);
    }
    let mut expected = block_reward(block.height());
    for tx in block.body() {
        if tx.kind == TxKind::Coinbase {
            return Err(ValidationError::BadCoinbase);
        }
        expected = expected.checked_add(tx.fee).ok_or(ValidationError::Overflow)?;
    }
    if cb.amount != expected || !cb.fee.is_zero() {
        return Err(ValidationError::BadCoinbase);
    }
    Ok(())
}

pub fn validate_transaction(state: &ChainState, tx: &Transaction) -> Result<(), ValidationError> {
    state.validate_transaction(tx)
}

/// Looks `name` up at the state's current height.
pub fn name_lookup<'a>(state: &'a ChainState, name: &str) -> NameLookup<'a> {
    match state.names.get(name) {
        None => NameLookup::NotFound,
        Some(e) if e.is_expired_at(state.height, state.config.name_expiry) => NameLookup::Expired(e),
        Some(e) => NameLookup::Found(e),
    }
}

impl ChainState {
    /// Applies one transaction as if included at `block_height`, for block
    /// assembly on a scratch copy. State is untouched on error.
    pub(crate) fn try_apply_tx(&mut self, tx: &Transaction, block_height: u64) -> Result<(), ValidationError> {
        let mut undo = Undo::default();
        self.apply_tx(tx, block_height, &mut undo).inspect_err(|_| self.revert(undo))
    }
}
