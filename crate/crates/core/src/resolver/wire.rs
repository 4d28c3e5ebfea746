//! Signed query/response datagrams. All integers big-endian.
//!
//! ```text
//! query    = "NMC1" | qid u32 | len u16 | fqdn
//! response = "NMC1" | qid u32 | status u8 | len u32 | record | height u64 | sig 64
//! ```
//! The signature is over `qid | status | len | record | height`.

use crate::chaincore::{KeyPair, PublicKey, Signature};
use crate::codec::{Encoder, Reader};

pub const MAGIC: &[u8; 4] = b"NMC1";
pub const MAX_DATAGRAM: usize = 65_507;
pub const MAX_FQDN_LEN: usize = 253;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    Expired = 2,
    Error = 3,
}

impl Status {
    pub fn from_u8(v: u8) -> Option<Status> {
        Some(match v {
            0 => Status::Ok,
            1 => Status::NotFound,
            2 => Status::Expired,
            3 => Status::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub qid: u32,
    pub fqdn: String,
}

impl Query {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.fqdn.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.qid.to_be_bytes());
        out.extend_from_slice(&(self.fqdn.len() as u16).to_be_bytes());
        out.extend_from_slice(self.fqdn.as_bytes());
        out
    }

    /// `None` for anything malformed, including trailing bytes.
    pub fn decode(bytes: &[u8]) -> Option<Query> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return None;
        }
        let qid = r.u32()?;
        let len = r.u16()? as usize;
        if len > MAX_FQDN_LEN {
            return None;
        }
        let fqdn = std::str::from_utf8(r.take(len)?).ok()?.to_string();
        (r.remaining() == 0).then_some(Query { qid, fqdn })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub qid: u32,
    pub status: Status,
    /// Record JSON for `Ok`, a short reason for `Error`, empty otherwise.
    pub record: Vec<u8>,
    pub height: u64,
    pub signature: Signature,
}

fn signed_bytes(qid: u32, status: u8, record: &[u8], height: u64) -> Vec<u8> {
    let mut e = Encoder::new();
    e.u32(qid).u8(status).bytes(record).u64(height);
    e.finish()
}

impl Response {
    pub fn sign(key: &KeyPair, qid: u32, status: Status, record: Vec<u8>, height: u64) -> Response {
        let signature = key.sign(&signed_bytes(qid, status as u8, &record, height));
        Response { qid, status, record, height, signature }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 85 + self.record.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&signed_bytes(self.qid, self.status as u8, &self.record, self.height));
        out.extend_from_slice(&self.signature.0);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyError {
    /// Framing or signature failure. Nothing in the datagram is trustworthy.
    BadSignature,
    /// Authentic, but answers some other query.
    QidMismatch,
}

/// Checks framing then signature, and only then the qid, so that no field of
/// an unauthenticated datagram influences the outcome beyond rejection.
pub fn verify_response(server: &PublicKey, expected_qid: u32, bytes: &[u8]) -> Result<Response, VerifyError> {
    let parsed = (|| {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return None;
        }
        let qid = r.u32()?;
        let status = r.u8()?;
        let len = r.u32()? as usize;
        let record = r.take(len)?.to_vec();
        let height = r.u64()?;
        let sig = Signature(r.array::<64>()?);
        (r.remaining() == 0).then_some((qid, status, record, height, sig))
    })();
    let (qid, status, record, height, signature) = parsed.ok_or(VerifyError::BadSignature)?;
    if !server.verify(&signed_bytes(qid, status, &record, height), &signature) {
        return Err(VerifyError::BadSignature);
    }
    let status = Status::from_u8(status).ok_or(VerifyError::BadSignature)?;
    if qid != expected_qid {
        return Err(VerifyError::QidMismatch);
    }
    Ok(Response { qid, status, record, height, signature })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_round_trip_and_rejects() {
        let q = Query { qid: 0xdeadbeef, fqdn: "www.x.bit".into() };
        let b = q.encode();
        assert_eq!(&b[..4], b"NMC1");
        assert_eq!(Query::decode(&b), Some(q));
        let mut wrong = b.clone();
        wrong[0] = b'X';
        assert_eq!(Query::decode(&wrong), None);
        assert_eq!(Query::decode(&b[..b.len() - 1]), None);
        let mut long = b.clone();
        long.push(0);
        assert_eq!(Query::decode(&long), None);
    }

    #[test]
    fn response_verifies_only_under_signer() {
        let k = KeyPair::from_private_bytes(&[9; 32]).unwrap();
        let other = KeyPair::from_private_bytes(&[10; 32]).unwrap();
        let r = Response::sign(&k, 7, Status::Ok, b"{}".to_vec(), 12);
        let bytes = r.encode();
        assert_eq!(bytes.len(), 4 + 4 + 1 + 4 + 2 + 8 + 64);
        assert_eq!(verify_response(&k.public_key(), 7, &bytes), Ok(r));
        assert_eq!(verify_response(&k.public_key(), 8, &bytes), Err(VerifyError::QidMismatch));
        assert_eq!(verify_response(&other.public_key(), 7, &bytes), Err(VerifyError::BadSignature));
        let resigned = Response::sign(&other, 7, Status::Ok, b"{}".to_vec(), 12).encode();
        assert_eq!(verify_response(&k.public_key(), 7, &resigned), Err(VerifyError::BadSignature));
    }
}
