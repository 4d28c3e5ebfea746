//! Pinned-key resolver client.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use rand::RngCore;
use thiserror::Error;

use crate::chaincore::PublicKey;
use crate::nameregistry::{parse_record, DomainRecord};

use super::wire::{verify_response, Query, Status, VerifyError, MAX_DATAGRAM};

pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no answer after {0} attempts")]
    Timeout(u32),
    #[error("response signature invalid")]
    BadSignature,
    #[error("resolver key does not match the pinned fingerprint")]
    FingerprintMismatch,
    #[error("name not found")]
    NotFound,
    #[error("name expired")]
    Expired,
    #[error("resolver error: {0}")]
    Server(String),
    #[error("resolver returned an unreadable record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Out-of-band resolver identity: its public key and the fingerprint the
/// user pinned for it.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub server: SocketAddr,
    pub server_key: PublicKey,
    pub pinned_fingerprint: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub record: DomainRecord,
    pub raw: Vec<u8>,
    pub height: u64,
}

/// Maps a verified status onto the caller's result.
pub fn answer_from(status: Status, record: Vec<u8>, height: u64) -> Result<Answer, ClientError> {
    match status {
        Status::Ok => {
            let parsed = parse_record(&record).map_err(|e| ClientError::BadRecord(e.to_string()))?;
            Ok(Answer { record: parsed, raw: record, height })
        }
        Status::NotFound => Err(ClientError::NotFound),
        Status::Expired => Err(ClientError::Expired),
        Status::Error => Err(ClientError::Server(String::from_utf8_lossy(&record).into_owned())),
    }
}

/// Sends one query and waits `timeout` per attempt, retrying up to
/// [`MAX_RETRIES`] times. Datagrams that verify but carry another qid are
/// ignored.
pub fn client_resolve(cfg: &ClientConfig, fqdn: &str, timeout: Duration) -> Result<Answer, ClientError> {
    if cfg.server_key.fingerprint() != cfg.pinned_fingerprint {
        return Err(ClientError::FingerprintMismatch);
    }
    let bind: SocketAddr = if cfg.server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
    let socket = UdpSocket::bind(bind)?;
    let qid = rand::thread_rng().next_u32();
    let query = Query { qid, fqdn: fqdn.to_string() }.encode();
    let mut buf = vec![0u8; MAX_DATAGRAM];
    for _ in 0..=MAX_RETRIES {
        socket.send_to(&query, cfg.server)?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            socket.set_read_timeout(Some(left))?;
            let (n, peer) = match socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break,
                // ICMP port unreachable surfaces as ConnectionRefused on some hosts
                Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => continue,
                Err(e) => return Err(e.into()),
            };
            if peer != cfg.server {
                continue;
            }
            match verify_response(&cfg.server_key, qid, &buf[..n]) {
                Ok(r) => return answer_from(r.status, r.record, r.height),
                Err(VerifyError::QidMismatch) => continue,
                Err(VerifyError::BadSignature) => return Err(ClientError::BadSignature),
            }
        }
    }
    Err(ClientError::Timeout(MAX_RETRIES + 1))
}
