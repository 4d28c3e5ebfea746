use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::amount::Amount;
use super::keys::{Address, KeyPair, PublicKey, Signature};
use crate::codec::{hex_bytes, Encoder, Hash256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Transfer,
    NameNew,
    NameUpdate,
    Coinbase,
}

impl TxKind {
    fn code(self) -> u8 {
        match self {
            TxKind::Transfer => 0,
            TxKind::NameNew => 1,
            TxKind::NameUpdate => 2,
            TxKind::Coinbase => 3,
        }
    }

    pub fn is_name_op(self) -> bool {
        matches!(self, TxKind::NameNew | TxKind::NameUpdate)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TxError {
    #[error("transaction is already signed")]
    AlreadySigned,
    #[error("signing key does not match sender_pubkey")]
    KeyMismatch,
    #[error("coinbase transactions are not signed")]
    Coinbase,
}

/// A ledger transaction.
///
/// `nonce` is the per-sender counter for signed kinds and the block height for
/// coinbases, which keeps every coinbase hash distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub kind: TxKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender_pubkey: Option<PublicKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<Address>,
    pub amount: Amount,
    pub fee: Amount,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default, with = "hex_bytes", skip_serializing_if = "Vec::is_empty")]
    pub value: Vec<u8>,
    pub nonce: u64,
    /// Optional ownership transfer carried by a `NameUpdate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_owner_pubkey: Option<PublicKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Signature>,
}

impl Transaction {
    fn base(kind: TxKind) -> Self {
        Transaction {
            kind,
            sender_pubkey: None,
            recipient: None,
            amount: Amount::ZERO,
            fee: Amount::ZERO,
            name: String::new(),
            value: Vec::new(),
            nonce: 0,
            new_owner_pubkey: None,
            signature: None,
        }
    }

    pub fn transfer(sender: PublicKey, recipient: Address, amount: Amount, fee: Amount, nonce: u64) -> Self {
        Transaction {
            sender_pubkey: Some(sender),
            recipient: Some(recipient),
            amount,
            fee,
            nonce,
            ..Self::base(TxKind::Transfer)
        }
    }

    pub fn name_new(sender: PublicKey, name: impl Into<String>, value: Vec<u8>, fee: Amount, nonce: u64) -> Self {
        Transaction {
            sender_pubkey: Some(sender),
            name: name.into(),
            value,
            fee,
            nonce,
            ..Self::base(TxKind::NameNew)
        }
    }

    pub fn name_update(sender: PublicKey, name: impl Into<String>, value: Vec<u8>, fee: Amount, nonce: u64) -> Self {
        Transaction {
            sender_pubkey: Some(sender),
            name: name.into(),
            value,
            fee,
            nonce,
            ..Self::base(TxKind::NameUpdate)
        }
    }

    pub fn coinbase(recipient: Address, amount: Amount, height: u64) -> Self {
        Transaction {
            recipient: Some(recipient),
            amount,
            nonce: height,
            ..Self::base(TxKind::Coinbase)
        }
    }

    fn encode_unsigned(&self, enc: &mut Encoder) {
        enc.u8(self.kind.code());
        enc.bytes(self.sender_pubkey.as_ref().map(|p| &p.as_bytes()[..]).unwrap_or(&[]));
        enc.bytes(self.recipient.as_ref().map(|a| a.canonical_bytes().to_vec()).unwrap_or_default().as_slice());
        enc.u64(self.amount.base_units());
        enc.u64(self.fee.base_units());
        enc.bytes(self.name.as_bytes());
        enc.bytes(&self.value);
        enc.u64(self.nonce);
        enc.bytes(self.new_owner_pubkey.as_ref().map(|p| &p.as_bytes()[..]).unwrap_or(&[]));
    }

    /// The canonical encoding minus the signature; this is what gets signed.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        enc.finish()
    }

    /// Full canonical encoding, signature included.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_unsigned(&mut enc);
        enc.bytes(self.signature.as_ref().map(|s| &s.0[..]).unwrap_or(&[]));
        enc.finish()
    }

    pub fn hash(&self) -> Hash256 {
        Hash256::digest(&self.canonical_bytes())
    }

    pub fn sender_address(&self, version: u8) -> Option<Address> {
        self.sender_pubkey.as_ref().map(|pk| Address::from_public_key(pk, version))
    }
}

pub fn sign_transaction(mut tx: Transaction, key: &KeyPair) -> Result<Transaction, TxError> {
    if tx.kind == TxKind::Coinbase {
        return Err(TxError::Coinbase);
    }
    if tx.signature.is_some() {
        return Err(TxError::AlreadySigned);
    }
    if tx.sender_pubkey != Some(key.public_key()) {
        return Err(TxError::KeyMismatch);
    }
    tx.signature = Some(key.sign(&tx.signing_bytes()));
    Ok(tx)
}

pub fn verify_transaction_signature(tx: &Transaction) -> bool {
    match (&tx.sender_pubkey, &tx.signature) {
        (Some(pk), Some(sig)) => pk.verify(&tx.signing_bytes(), sig),
        _ => false,
    }
}
