//! Building signed name operations.

use thiserror::Error;

use crate::chaincore::{sign_transaction, Amount, KeyPair, PublicKey, Signature, Transaction};
use crate::codec::Encoder;

use super::record::{parse_record, serialize_record, ParseError};

pub const NAME_PREFIX: &str = "d/";
pub const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("bad name {0:?}: expected d/ followed by 1-63 of [a-z0-9-]")]
    BadName(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub fn validate_name(name: &str) -> Result<(), RegistryError> {
    let label = name.strip_prefix(NAME_PREFIX).ok_or_else(|| RegistryError::BadName(name.to_string()))?;
    let ok = (1..=MAX_LABEL_LEN).contains(&label.len())
        && label.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(RegistryError::BadName(name.to_string()))
    }
}

/// A `NameNew` carrying the record in compact standard JSON. `nonce` is the
/// owner's next account nonce.
pub fn register(name: &str, record: &[u8], owner: &KeyPair, fee: Amount, nonce: u64) -> Result<Transaction, RegistryError> {
    validate_name(name)?;
    let value = serialize_record(&parse_record(record)?);
    let tx = Transaction::name_new(owner.public_key(), name, value, fee, nonce);
    Ok(sign_transaction(tx, owner).expect("fresh unsigned tx from owner"))
}

/// Detached, owner-signed announcement of a new ephemeral key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EphKeyUpdate {
    pub name: String,
    pub new_eph_key: [u8; 32],
    pub signature: Signature,
}

impl EphKeyUpdate {
    pub fn signing_bytes(name: &str, key: &[u8; 32]) -> Vec<u8> {
        let mut e = Encoder::new();
        e.bytes(name.as_bytes());
        e.raw(key);
        e.finish()
    }

    pub fn sign(name: &str, new_eph_key: [u8; 32], owner: &KeyPair) -> Self {
        let signature = owner.sign(&Self::signing_bytes(name, &new_eph_key));
        EphKeyUpdate { name: name.to_string(), new_eph_key, signature }
    }

    pub fn verify(&self, owner: &PublicKey) -> bool {
        owner.verify(&Self::signing_bytes(&self.name, &self.new_eph_key), &self.signature)
    }

    /// The partial record merged into the stored one.
    pub fn update_value(&self) -> Vec<u8> {
        eph_update_value(&self.new_eph_key)
    }
}

pub fn eph_update_value(key: &[u8; 32]) -> Vec<u8> {
    format!(r#"{{"minimaLT":{{"eph_key":"{}"}}}}"#, hex::encode(key)).into_bytes()
}

/// A `NameUpdate` that replaces only `minimaLT.eph_key`.
pub fn update_eph_key(name: &str, new_key: &[u8; 32], owner: &KeyPair, fee: Amount, nonce: u64) -> Result<Transaction, RegistryError> {
    validate_name(name)?;
    let tx = Transaction::name_update(owner.public_key(), name, eph_update_value(new_key), fee, nonce);
    Ok(sign_transaction(tx, owner).expect("fresh unsigned tx from owner"))
}
