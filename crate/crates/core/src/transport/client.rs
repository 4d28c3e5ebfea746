//! The initiating end: 0-RTT connect, puzzle answers and client-driven rekeys.

use std::collections::VecDeque;
use std::net::SocketAddr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use x25519_dalek::{EphemeralSecret, PublicKey as XPublic};

use super::crypto::{Direction, TunnelKey};
use super::puzzle::Puzzle;
use super::stream::StreamError;
use super::tunnel::{map_stream_event, Event, Layout, RekeyReason, Session, Transmit, TransportConfig};
use super::wire::{Packet, Rpc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConnectError {
    #[error("server ephemeral key must be a 32-byte Curve25519 public key")]
    BadKey,
    #[error("first data does not fit in the send buffer")]
    FirstDataTooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RekeyError {
    #[error("a rekey is already in progress")]
    RekeyInProgress,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub rekeys: u32,
    pub puzzles_solved: u32,
    pub puzzle_attempts: u64,
}

struct PendingNext {
    next_tid: u64,
    dummy: [u8; 32],
    ticket: u64,
    reason: RekeyReason,
}

pub struct ClientTunnel {
    cfg: TransportConfig,
    rng: ChaCha20Rng,
    s: Session,
    /// Public key shown in the INIT layout until the server confirms.
    presented: [u8; 32],
    puzzle: Option<([u8; 16], u64)>,
    confirmed: bool,
    ever_confirmed: bool,
    pending: Option<PendingNext>,
    queued: Option<RekeyReason>,
    probe_deadline: Option<u64>,
    probe_interval: u64,
    close_ticket: Option<u64>,
    closed: bool,
    first_conn: u32,
    events: VecDeque<Event>,
    out: VecDeque<Transmit>,
    pub stats: ClientStats,
}

fn random_tid(rng: &mut ChaCha20Rng, avoid: u64) -> u64 {
    loop {
        let t = rng.next_u64();
        if t != 0 && t != avoid {
            return t;
        }
    }
}

impl ClientTunnel {
    /// Opens a tunnel to the holder of `server_eph` and queues `first_data`
    /// on the first connection, so it leaves in the INIT packet.
    pub fn connect(
        cfg: TransportConfig,
        server_eph: &[u8],
        remote: SocketAddr,
        first_data: &[u8],
        now: u64,
        seed: [u8; 32],
    ) -> Result<Self, ConnectError> {
        let server: [u8; 32] = server_eph.try_into().map_err(|_| ConnectError::BadKey)?;
        let mut rng = ChaCha20Rng::from_seed(seed);
        let tid = random_tid(&mut rng, 0);
        let secret = EphemeralSecret::random_from_rng(&mut rng);
        let public = XPublic::from(&secret);
        // consumes the private key
        let shared = secret.diffie_hellman(&XPublic::from(server));
        if !shared.was_contributory() {
            return Err(ConnectError::BadKey);
        }
        let key = TunnelKey::derive(shared.as_bytes(), tid);
        let mut s = Session::new(tid, key, Direction::ClientToServer, remote, &cfg, now);
        let first_conn = s.rel.open_conn();
        if s.rel.send(first_conn, first_data).map_err(|_| ConnectError::BadKey)? < first_data.len() {
            return Err(ConnectError::FirstDataTooLarge);
        }
        if first_data.is_empty() {
            s.rel.request_probe();
        }
        let probe_interval = cfg.stream.initial_rto_ms;
        let mut c = ClientTunnel {
            cfg,
            rng,
            s,
            presented: public.to_bytes(),
            puzzle: None,
            confirmed: false,
            ever_confirmed: false,
            pending: None,
            queued: None,
            probe_deadline: None,
            probe_interval,
            close_ticket: None,
            closed: false,
            first_conn,
            events: VecDeque::new(),
            out: VecDeque::new(),
            stats: ClientStats::default(),
        };
        c.flush(now);
        Ok(c)
    }

    pub fn tid(&self) -> u64 {
        self.s.tid
    }

    pub fn generation(&self) -> u32 {
        self.s.generation
    }

    pub fn key(&self) -> &TunnelKey {
        &self.s.key
    }

    pub fn first_conn(&self) -> u32 {
        self.first_conn
    }

    pub fn remote(&self) -> SocketAddr {
        self.s.remote
    }

    /// True while sent data or control messages await acknowledgment.
    pub fn has_unacked(&self) -> bool {
        self.s.rel.has_unacked()
    }

    pub fn is_confirmed(&self) -> bool {
        self.confirmed
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn rekey_pending(&self) -> bool {
        self.pending.is_some() || !self.confirmed
    }

    /// The public key currently shown in INIT-layout packets.
    pub fn presented_key(&self) -> [u8; 32] {
        self.presented
    }

    pub fn stream_stats(&self) -> &super::stream::StreamStats {
        &self.s.rel.stats
    }

    pub fn open_conn(&mut self) -> u32 {
        self.s.rel.open_conn()
    }

    pub fn send(&mut self, conn: u32, data: &[u8]) -> Result<usize, StreamError> {
        if self.closed {
            return Err(StreamError::ConnClosed);
        }
        self.s.rel.send(conn, data)
    }

    pub fn finish(&mut self, conn: u32) -> Result<(), StreamError> {
        self.s.rel.finish(conn)
    }

    pub fn read(&mut self, conn: u32, max: usize) -> Vec<u8> {
        self.s.rel.read(conn, max)
    }

    pub fn readable_len(&self, conn: u32) -> usize {
        self.s.rel.readable_len(conn)
    }

    pub fn peer_finished(&self, conn: u32) -> bool {
        self.s.rel.peer_finished(conn)
    }

    pub fn send_complete(&self, conn: u32) -> bool {
        self.s.rel.send_complete(conn)
    }

    /// Starts a rekey now.
    pub fn rekey(&mut self) -> Result<(), RekeyError> {
        if self.rekey_pending() {
            return Err(RekeyError::RekeyInProgress);
        }
        self.initiate(RekeyReason::Manual);
        Ok(())
    }

    pub fn close(&mut self) {
        if self.close_ticket.is_none() && !self.closed {
            self.close_ticket = Some(self.s.rel.send_rpc(Rpc::Close));
        }
    }

    fn layout(&self) -> Layout {
        match (self.confirmed, self.puzzle) {
            (true, _) => Layout::Data,
            (false, None) => Layout::Init { eph_pub: self.presented },
            (false, Some((nonce, solution))) => Layout::InitPuzzled { nonce, solution, eph_pub: self.presented },
        }
    }

    fn initiate(&mut self, reason: RekeyReason) {
        let next_tid = random_tid(&mut self.rng, self.s.tid);
        // the private half is dropped here and never used
        let dummy = XPublic::from(&EphemeralSecret::random_from_rng(&mut self.rng)).to_bytes();
        let ticket = self.s.rel.send_rpc(Rpc::NextTid { next_tid, pubkey: dummy });
        self.pending = Some(PendingNext { next_tid, dummy, ticket, reason });
    }

    fn request_rekey(&mut self, reason: RekeyReason) {
        if self.rekey_pending() {
            if self.queued != Some(RekeyReason::AddressChange) {
                self.queued = Some(reason);
            }
        } else {
            self.initiate(reason);
        }
    }

    fn maybe_rekey(&mut self, now: u64) {
        if !self.confirmed || self.pending.is_some() || self.closed || self.close_ticket.is_some() {
            return;
        }
        let reason = self.queued.take().or_else(|| {
            let by_bytes = self.s.gen_bytes() >= self.cfg.rekey_bytes;
            let by_time = now >= self.s.gen_started_at + self.cfg.rekey_interval_ms;
            (by_bytes || by_time).then_some(RekeyReason::Threshold)
        });
        if let Some(r) = reason {
            self.initiate(r);
        }
    }

    fn switch(&mut self, now: u64) {
        let p = self.pending.take().expect("called with a pending rekey");
        self.s.advance(p.next_tid, now);
        self.presented = p.dummy;
        self.puzzle = None;
        self.confirmed = false;
        self.stats.rekeys += 1;
        self.s.rel.request_probe();
        self.probe_interval = self.s.rel.rto();
        self.events.push_back(Event::Rekeyed { generation: self.s.generation, reason: p.reason });
    }

    fn flush(&mut self, now: u64) {
        if self.closed {
            return;
        }
        self.maybe_rekey(now);
        let mut out = Vec::new();
        self.s.drain(now, self.layout(), &mut out);
        if !out.is_empty() && !self.confirmed {
            self.probe_deadline.get_or_insert(now + self.probe_interval);
        }
        self.out.extend(out);
    }

    pub fn poll_transmit(&mut self, now: u64) -> Option<Transmit> {
        if self.out.is_empty() {
            self.flush(now);
        }
        self.out.pop_front()
    }

    pub fn poll_event(&mut self) -> Option<Event> {
        self.events.pop_front()
    }

    pub fn poll_timeout(&self) -> Option<u64> {
        if self.closed {
            return None;
        }
        let rekey_at = (self.confirmed && self.pending.is_none()).then_some(self.s.gen_started_at + self.cfg.rekey_interval_ms);
        [self.s.rel.poll_timeout(), self.probe_deadline, rekey_at].into_iter().flatten().min()
    }

    pub fn handle_timeout(&mut self, now: u64) {
        self.s.rel.handle_timeout(now);
        if self.probe_deadline.is_some_and(|d| d <= now) {
            self.probe_deadline = None;
            if !self.confirmed {
                if !self.s.rel.has_unacked() {
                    self.s.rel.request_probe();
                }
                self.probe_interval = (self.probe_interval * 2).min(self.cfg.stream.max_rto_ms);
            }
        }
    }

    pub fn handle_datagram(&mut self, now: u64, _from: SocketAddr, bytes: &[u8]) {
        if self.closed {
            return;
        }
        let Some(p) = Packet::parse(bytes) else { return };
        match p {
            Packet::Puzzle { tid, nonce, difficulty } if tid == self.s.tid && !self.confirmed => {
                if self.puzzle.is_some_and(|(n, _)| n == nonce) {
                    return;
                }
                let Some((solution, attempts)) = (Puzzle { nonce, difficulty }).solve(&self.presented) else { return };
                self.puzzle = Some((nonce, solution));
                self.stats.puzzles_solved += 1;
                self.stats.puzzle_attempts += attempts;
                self.s.rel.resend_all();
                if !self.s.rel.has_unacked() {
                    self.s.rel.request_probe();
                }
            }
            Packet::Data { tid, .. } if tid == self.s.tid => {
                if let Some((frame, _)) = self.s.open(&p) {
                    self.on_authenticated(now, frame);
                }
            }
            _ => {}
        }
    }

    fn on_authenticated(&mut self, now: u64, frame: super::wire::Frame) {
        if !self.confirmed {
            self.confirmed = true;
            self.probe_deadline = None;
            self.probe_interval = self.cfg.stream.initial_rto_ms;
            self.puzzle = None;
            if !self.ever_confirmed {
                self.ever_confirmed = true;
                self.events.push_back(Event::Connected);
            }
        }
        self.s.rel.on_frame(now, frame);
        while let Some(e) = self.s.rel.poll_event() {
            match map_stream_event(e) {
                Ok(ev) => self.events.push_back(ev),
                Err(Rpc::RekeyRequest) => self.request_rekey(RekeyReason::AddressChange),
                Err(Rpc::Close) => {
                    self.closed = true;
                    self.events.push_back(Event::Closed);
                }
                Err(_) => {}
            }
        }
        if self.pending.as_ref().is_some_and(|p| self.s.rel.ticket_acked(p.ticket)) {
            self.switch(now);
        }
        if self.close_ticket.is_some_and(|t| self.s.rel.ticket_acked(t)) {
            self.closed = true;
            self.events.push_back(Event::Closed);
        }
    }
}
