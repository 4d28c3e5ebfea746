//! `.bit` name resolution against a chain snapshot.

use serde_json::Value;
use thiserror::Error;

use crate::chaincore::{name_lookup, ChainState, NameLookup, PublicKey};

use super::names::{validate_name, NAME_PREFIX};
use super::record::{parse_object, record_from_object, DomainRecord, ParseError};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("name not found")]
    NotFound,
    #[error("name expired")]
    Expired,
    #[error("bad domain {0:?}")]
    BadFqdn(String),
    #[error("stored record unreadable: {0}")]
    Corrupt(ParseError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedRecord {
    pub fqdn: String,
    pub name: String,
    pub record: DomainRecord,
    /// Compact JSON of `record`, with any subdomain overlay applied.
    pub raw: Vec<u8>,
    pub owner: PublicKey,
    pub last_update_height: u64,
    pub chain_height: u64,
}

/// Splits `label.bit` or `sub.label.bit` into the chain name and optional
/// subdomain label.
pub fn split_fqdn(fqdn: &str) -> Result<(String, Option<String>), ResolveError> {
    let bad = || ResolveError::BadFqdn(fqdn.to_string());
    let lower = fqdn.to_ascii_lowercase();
    let trimmed = lower.strip_suffix('.').unwrap_or(&lower);
    let labels: Vec<&str> = trimmed.split('.').collect();
    let (sub, base) = match labels.as_slice() {
        [base, "bit"] => (None, *base),
        [sub, base, "bit"] => (Some(*sub), *base),
        _ => return Err(bad()),
    };
    let name = format!("{NAME_PREFIX}{base}");
    validate_name(&name).map_err(|_| bad())?;
    if sub.is_some_and(|s| s.is_empty()) {
        return Err(bad());
    }
    Ok((name, sub.map(str::to_string)))
}

pub fn resolve(state: &ChainState, fqdn: &str) -> Result<ResolvedRecord, ResolveError> {
    let (name, sub) = split_fqdn(fqdn)?;
    let entry = match name_lookup(state, &name) {
        NameLookup::Found(e) => e,
        NameLookup::Expired(_) => return Err(ResolveError::Expired),
        NameLookup::NotFound => return Err(ResolveError::NotFound),
    };
    let mut obj = parse_object(&entry.value).map_err(ResolveError::Corrupt)?;
    if let Some(sub) = &sub {
        let overlay = match obj.remove("map") {
            Some(Value::Object(mut map)) => map.remove(sub.as_str()),
            _ => None,
        };
        match overlay {
            Some(Value::Object(fields)) => obj.extend(fields),
            _ => return Err(ResolveError::NotFound),
        }
    }
    let raw = serde_json::to_vec(&Value::Object(obj.clone())).expect("JSON values serialize");
    let record = record_from_object(obj).map_err(ResolveError::Corrupt)?;
    Ok(ResolvedRecord {
        fqdn: fqdn.to_string(),
        name,
        record,
        raw,
        owner: entry.owner_pubkey,
        last_update_height: entry.last_update_height,
        chain_height: state.height,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fqdn_forms() {
        assert_eq!(split_fqdn("example.bit").unwrap(), ("d/example".into(), None));
        assert_eq!(split_fqdn("WWW.Example.bit.").unwrap(), ("d/example".into(), Some("www".into())));
        for bad in ["example.com", "bit", ".bit", "a.b.c.bit", "a..bit", "a_b.bit", ""] {
            assert!(matches!(split_fqdn(bad), Err(ResolveError::BadFqdn(_))), "{bad}");
        }
    }
}
