//! `d/` domain records.
//!
//! Records are UTF-8 JSON objects. Known fields are type-checked; anything
//! else is kept in [`DomainRecord::extra`] and written back unchanged.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const MAX_RECORD_LEN: usize = 4096;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("record is {0} bytes, over the {MAX_RECORD_LEN}-byte cap")]
    Oversize(usize),
    #[error("record is not UTF-8")]
    NotUtf8,
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("record must be a JSON object")]
    NotObject,
    #[error("field {field}: {reason}")]
    Field { field: String, reason: String },
}

fn field_err(field: &str, reason: impl Into<String>) -> ParseError {
    ParseError::Field { field: field.to_string(), reason: reason.into() }
}

/// A 32-byte key carried as 64 hex characters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key32(pub [u8; 32]);

impl Serialize for Key32 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Key32 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| serde::de::Error::custom(format!("key is {} bytes, expected 32", b.len())))?;
        Ok(Key32(arr))
    }
}

/// `[match-type, fingerprint-hex, position]`. The integers are stored opaquely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsAssociation(pub i64, pub String, pub i64);

/// The transport section: where and how to open a 0-RTT tunnel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimaLTSection {
    /// Only present when it differs from the record's `ip`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<String>,
    pub port: u16,
    pub id_key: Key32,
    pub eph_key: Key32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ip: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub email: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<String>,
    /// protocol → port → associations
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tls: Option<BTreeMap<String, BTreeMap<String, Vec<TlsAssociation>>>>,
    #[serde(rename = "minimaLT", default, skip_serializing_if = "Option::is_none")]
    pub minimalt: Option<MinimaLTSection>,
    /// Subdomain label → partial record overlaid on this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<BTreeMap<String, DomainRecord>>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DomainRecord {
    /// The address a transport client should dial, if the record has one.
    pub fn minimalt_ip(&self) -> Option<Ipv4Addr> {
        let section = self.minimalt.as_ref()?;
        section.ip.as_ref().or(self.ip.as_ref())?.parse().ok()
    }

    fn check(&self, path: &str) -> Result<(), ParseError> {
        let at = |f: &str| if path.is_empty() { f.to_string() } else { format!("{path}.{f}") };
        if let Some(ip) = &self.ip {
            ip.parse::<Ipv4Addr>().map_err(|_| field_err(&at("ip"), format!("{ip:?} is not a dotted-quad IPv4 address")))?;
        }
        if let Some(tls) = &self.tls {
            for (proto, ports) in tls {
                for (port, assocs) in ports {
                    port.parse::<u16>().map_err(|_| field_err(&at("tls"), format!("{proto}: port {port:?} is not a u16")))?;
                    for a in assocs {
                        hex::decode(&a.1).map_err(|_| field_err(&at("tls"), format!("fingerprint {:?} is not hex", a.1)))?;
                    }
                }
            }
        }
        if let Some(m) = &self.minimalt {
            if m.port == 0 {
                return Err(field_err(&at("minimaLT.port"), "port must be nonzero"));
            }
            if let Some(ip) = &m.ip {
                ip.parse::<Ipv4Addr>().map_err(|_| field_err(&at("minimaLT.ip"), "not a dotted-quad IPv4 address"))?;
            }
        }
        if let Some(map) = &self.map {
            for (label, sub) in map {
                sub.check(&at(&format!("map.{label}")))?;
            }
        }
        Ok(())
    }
}

/// Accepts two relaxations seen in hand-written records: bare integer object
/// keys (`443: [...]`) and trailing commas before `}` or `]`. Comments are not
/// accepted.
pub fn normalize_lenient(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    let mut stack: Vec<char> = Vec::new();
    let mut last_sig: Option<char> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '"' => {
                out.push(c);
                i += 1;
                while i < chars.len() {
                    out.push(chars[i]);
                    if chars[i] == '\\' && i + 1 < chars.len() {
                        out.push(chars[i + 1]);
                        i += 2;
                        continue;
                    }
                    if chars[i] == '"' {
                        break;
                    }
                    i += 1;
                }
                last_sig = Some('"');
                i += 1;
                continue;
            }
            '{' | '[' => stack.push(c),
            '}' | ']' => {
                stack.pop();
            }
            ',' => {
                let next = chars[i + 1..].iter().find(|ch| !ch.is_whitespace());
                if matches!(next, Some('}') | Some(']')) {
                    i += 1;
                    continue;
                }
            }
            d if d.is_ascii_digit() && stack.last() == Some(&'{') && matches!(last_sig, Some('{') | Some(',')) => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let next = chars[i..].iter().find(|ch| !ch.is_whitespace());
                if next == Some(&':') {
                    out.push('"');
                    out.extend(&chars[start..i]);
                    out.push('"');
                } else {
                    out.extend(&chars[start..i]);
                }
                last_sig = Some('0');
                continue;
            }
            _ => {}
        }
        out.push(c);
        if !c.is_whitespace() {
            last_sig = Some(c);
        }
        i += 1;
    }
    out
}

pub(crate) fn parse_object(raw: &[u8]) -> Result<Map<String, Value>, ParseError> {
    if raw.len() > MAX_RECORD_LEN {
        return Err(ParseError::Oversize(raw.len()));
    }
    let text = std::str::from_utf8(raw).map_err(|_| ParseError::NotUtf8)?;
    let value: Value = serde_json::from_str(&normalize_lenient(text)).map_err(|e| ParseError::Json(e.to_string()))?;
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(ParseError::NotObject),
    }
}

pub(crate) fn record_from_object(obj: Map<String, Value>) -> Result<DomainRecord, ParseError> {
    let record: DomainRecord =
        serde_json::from_value(Value::Object(obj)).map_err(|e| field_err("record", e.to_string()))?;
    record.check("")?;
    Ok(record)
}

pub fn parse_record(raw: &[u8]) -> Result<DomainRecord, ParseError> {
    record_from_object(parse_object(raw)?)
}

/// Compact standard JSON.
pub fn serialize_record(record: &DomainRecord) -> Vec<u8> {
    serde_json::to_vec(record).expect("records always serialize")
}

fn deep_merge(base: &mut Map<String, Value>, update: Map<String, Value>) {
    for (k, v) in update {
        match (base.get_mut(&k), v) {
            (Some(Value::Object(b)), Value::Object(u)) => deep_merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies a `NameUpdate` value to the stored one. Objects merge key by key,
/// recursively; a top-level `"_replace": true` replaces the record wholesale.
pub fn merge_value(old: &[u8], update: &[u8]) -> Result<Vec<u8>, ParseError> {
    let mut update = parse_object(update)?;
    let merged = if update.get("_replace") == Some(&Value::Bool(true)) {
        update.remove("_replace");
        update
    } else {
        let mut base = parse_object(old)?;
        deep_merge(&mut base, update);
        base
    };
    Ok(serde_json::to_vec(&Value::Object(merged)).expect("JSON values serialize"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// A full listing in the usual published layout.
    pub(crate) const LISTING: &str = r#"{
    "ip"      : "192.0.2.44",
    "tor"     : "a2b3c4d5e6f7g2h3.onion",
    "email"   : "ops@example.org",
    "info"    : "Example Operator",
    "tls": {
        "tcp": {
            443: [[1, "5A1C9E07B3D24F68A0E1C7B95D3F2A8164E0B7C2", 1]]
        }
    },
    "map":
    {
        "www" : { "ip": "192.0.2.44" },
    }
}"#;

    #[test]
    fn parses_listing() {
        let r = parse_record(LISTING.as_bytes()).unwrap();
        assert_eq!(r.ip.as_deref(), Some("192.0.2.44"));
        assert_eq!(r.tor.as_deref(), Some("a2b3c4d5e6f7g2h3.onion"));
        let assoc = &r.tls.as_ref().unwrap()["tcp"]["443"][0];
        assert_eq!(assoc, &TlsAssociation(1, "5A1C9E07B3D24F68A0E1C7B95D3F2A8164E0B7C2".into(), 1));
        assert_eq!(r.map.as_ref().unwrap()["www"].ip.as_deref(), Some("192.0.2.44"));
        assert!(r.minimalt.is_none());
    }

    #[test]
    fn empty_object_is_valid() {
        assert_eq!(parse_record(b"{}").unwrap(), DomainRecord::default());
    }

    #[test]
    fn oversize_rejected() {
        let mut raw = b"{\"info\":\"".to_vec();
        raw.extend(std::iter::repeat_n(b'a', 5000));
        raw.extend_from_slice(b"\"}");
        assert!(matches!(parse_record(&raw), Err(ParseError::Oversize(_))));
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(parse_record(b"not json"), Err(ParseError::Json(_))));
        assert_eq!(parse_record(b"[1,2]"), Err(ParseError::NotObject));
        assert!(matches!(parse_record(br#"{"ip": 5}"#), Err(ParseError::Field { .. })));
        assert!(matches!(parse_record(br#"{"ip": "1.2.3"}"#), Err(ParseError::Field { .. })));
        assert!(matches!(parse_record(br#"{"tls": {"tcp": {"x": []}}}"#), Err(ParseError::Field { .. })));
        // comments are documentation only
        assert!(parse_record(b"{\"ip\": \"1.2.3.4\" // home\n}").is_err());
    }

    #[test]
    fn minimalt_section_requires_keys() {
        let good = format!(r#"{{"minimaLT": {{"port": 80, "id_key": "{}", "eph_key": "{}"}}}}"#, "11".repeat(32), "22".repeat(32));
        let r = parse_record(good.as_bytes()).unwrap();
        assert_eq!(r.minimalt.as_ref().unwrap().eph_key, Key32([0x22; 32]));
        let short = format!(r#"{{"minimaLT": {{"port": 80, "id_key": "{}", "eph_key": "{}"}}}}"#, "11".repeat(32), "22".repeat(31));
        assert!(parse_record(short.as_bytes()).is_err());
        let missing = format!(r#"{{"minimaLT": {{"port": 80, "eph_key": "{}"}}}}"#, "22".repeat(32));
        assert!(parse_record(missing.as_bytes()).is_err());
        let zero = format!(r#"{{"minimaLT": {{"port": 0, "id_key": "{}", "eph_key": "{}"}}}}"#, "11".repeat(32), "22".repeat(32));
        assert!(parse_record(zero.as_bytes()).is_err());
    }

    #[test]
    fn unknown_fields_survive_reserialization() {
        let raw = br#"{"ip":"1.2.3.4","future":{"x":[1,2,{"y":null}]},"minimaLT":{"port":9,"id_key":"0000000000000000000000000000000000000000000000000000000000000000","eph_key":"0101010101010101010101010101010101010101010101010101010101010101","cipher":"x"}}"#;
        let r = parse_record(raw).unwrap();
        assert!(r.extra.contains_key("future"));
        let again = parse_record(&serialize_record(&r)).unwrap();
        assert_eq!(again, r);
        assert_eq!(again.minimalt.unwrap().extra["cipher"], "x");
    }

    #[test]
    fn normalizer_leaves_strings_alone() {
        let s = r#"{"a": "x, }", "b": "443: 1"}"#;
        assert_eq!(normalize_lenient(s), s);
        assert_eq!(normalize_lenient("[1, 2, ]"), "[1, 2 ]");
        assert_eq!(normalize_lenient("{443: 1, 80 : 2}"), r#"{"443": 1, "80" : 2}"#);
    }

    #[test]
    fn merge_replaces_only_given_leaves() {
        let old = br#"{"ip":"1.2.3.4","minimaLT":{"port":80,"id_key":"aa","eph_key":"bb"}}"#;
        let merged = merge_value(old, br#"{"minimaLT":{"eph_key":"cc"}}"#).unwrap();
        let v: Value = serde_json::from_slice(&merged).unwrap();
        assert_eq!(v["ip"], "1.2.3.4");
        assert_eq!(v["minimaLT"]["port"], 80);
        assert_eq!(v["minimaLT"]["eph_key"], "cc");
        let replaced = merge_value(old, br#"{"_replace":true,"info":"new"}"#).unwrap();
        assert_eq!(replaced, br#"{"info":"new"}"#.to_vec());
    }

    fn arb_record() -> impl Strategy<Value = DomainRecord> {
        (
            proptest::option::of((0u8..=255, 0u8..=255, 0u8..=255, 0u8..=255)),
            proptest::option::of("[a-z]{1,12}"),
            proptest::option::of(("[a-z]{1,6}", 1u16..=u16::MAX, proptest::collection::vec(any::<u8>(), 1..20))),
            proptest::option::of((1u16..=u16::MAX, any::<[u8; 32]>(), any::<[u8; 32]>())),
            proptest::collection::btree_map("[a-z]{1,8}", "[ -~]{0,10}", 0..3),
        )
            .prop_map(|(ip, info, tls, mlt, extra)| DomainRecord {
                ip: ip.map(|(a, b, c, d)| format!("{a}.{b}.{c}.{d}")),
                info,
                tls: tls.map(|(proto, port, fp)| {
                    BTreeMap::from([(proto, BTreeMap::from([(port.to_string(), vec![TlsAssociation(1, hex::encode(fp), 1)])]))])
                }),
                minimalt: mlt.map(|(port, id, eph)| MinimaLTSection {
                    ip: None,
                    port,
                    id_key: Key32(id),
                    eph_key: Key32(eph),
                    extra: Map::new(),
                }),
                extra: extra.into_iter().map(|(k, v)| (format!("x-{k}"), Value::String(v))).collect(),
                ..DomainRecord::default()
            })
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(r in arb_record()) {
            let bytes = serialize_record(&r);
            prop_assert_eq!(parse_record(&bytes).unwrap(), r);
        }

        #[test]
        fn eph_merge_is_idempotent(r in arb_record(), key in any::<[u8; 32]>()) {
            let base = serialize_record(&r);
            let update = format!(r#"{{"minimaLT":{{"eph_key":"{}"}}}}"#, hex::encode(key));
            let once = merge_value(&base, update.as_bytes()).unwrap();
            let twice = merge_value(&once, update.as_bytes()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
