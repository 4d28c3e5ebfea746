//! `d/` domain records: schema, name operations, `.bit` resolution.

pub mod names;
pub mod record;
pub mod resolve;

pub use names::{eph_update_value, register, update_eph_key, validate_name, EphKeyUpdate, RegistryError, NAME_PREFIX};
pub use record::{merge_value, normalize_lenient, parse_record, serialize_record, DomainRecord, Key32, MinimaLTSection, ParseError, TlsAssociation, MAX_RECORD_LEN};
pub use resolve::{resolve, split_fqdn, ResolveError, ResolvedRecord};
