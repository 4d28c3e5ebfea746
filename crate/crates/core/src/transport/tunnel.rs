//! State shared by both tunnel ends: keys, packet counters, replay window,
//! layouts and the stream engine.

use std::net::SocketAddr;

use super::crypto::{Direction, TunnelKey};
use super::stream::{Reliable, StreamConfig, StreamEvent};
use super::wire::{Frame, Packet, Rpc};

/// Counters probed past the newest one seen when decrypting.
pub const COUNTER_LOOKAHEAD: u32 = 256;
/// Counters below the newest one still accepted once each.
pub const REPLAY_WINDOW: u32 = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportConfig {
    pub stream: StreamConfig,
    /// Client rekeys after this many application bytes under one key.
    pub rekey_bytes: u64,
    /// ...or after this long under one key.
    pub rekey_interval_ms: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig { stream: StreamConfig::default(), rekey_bytes: 1 << 20, rekey_interval_ms: 60_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RekeyReason {
    Threshold,
    AddressChange,
    Manual,
    /// Server side: the client moved the tunnel.
    Peer,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    /// Client: the first authenticated server packet arrived.
    Connected,
    /// Server: a new tunnel was admitted.
    Accepted,
    ConnOpened(u32),
    Readable(u32),
    Finished(u32),
    Rekeyed { generation: u32, reason: RekeyReason },
    AddressChanged { from: SocketAddr, to: SocketAddr },
    Closed,
}

/// What the sender knows about an outgoing datagram, for traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketInfo {
    pub kind: u8,
    pub tid: u64,
    pub generation: u32,
    pub counter: u32,
    pub seq: u32,
    pub conn: u32,
    pub flags: u8,
    pub payload_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmit {
    pub dst: SocketAddr,
    pub payload: Vec<u8>,
    pub info: PacketInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layout {
    Data,
    Init { eph_pub: [u8; 32] },
    InitPuzzled { nonce: [u8; 16], solution: u64, eph_pub: [u8; 32] },
}

impl Layout {
    pub fn packet<'a>(&self, tid: u64, ct: &'a [u8]) -> Packet<'a> {
        match *self {
            Layout::Data => Packet::Data { tid, ct },
            Layout::Init { eph_pub } => Packet::Init { tid, eph_pub, ct },
            Layout::InitPuzzled { nonce, solution, eph_pub } => Packet::InitPuzzled { tid, nonce, solution, eph_pub, ct },
        }
    }
}

/// Counters seen under the current key: the newest and a bitmap below it.
#[derive(Debug, Clone, Default)]
pub(crate) struct ReplayWindow {
    max: Option<u32>,
    bits: u128,
}

impl ReplayWindow {
    fn seen(&self, c: u32) -> bool {
        match self.max {
            None => false,
            Some(m) if c > m => false,
            Some(m) => m - c >= REPLAY_WINDOW || self.bits & (1u128 << (m - c)) != 0,
        }
    }

    /// Counters to try, most likely first.
    pub fn candidates(&self) -> Vec<u32> {
        match self.max {
            None => (0..COUNTER_LOOKAHEAD).collect(),
            Some(m) => {
                let ahead = (1..=COUNTER_LOOKAHEAD).filter_map(|d| m.checked_add(d));
                let behind = (1..REPLAY_WINDOW).filter_map(|d| m.checked_sub(d)).filter(|&c| !self.seen(c));
                ahead.chain(behind).collect()
            }
        }
    }

    /// Records `c`; true when it is the newest so far.
    pub fn mark(&mut self, c: u32) -> bool {
        match self.max {
            Some(m) if c <= m => {
                self.bits |= 1u128 << (m - c);
                false
            }
            Some(m) => {
                let shift = c - m;
                self.bits = if shift >= 128 { 0 } else { self.bits << shift };
                self.bits |= 1;
                self.max = Some(c);
                true
            }
            None => {
                self.bits = 1;
                self.max = Some(c);
                true
            }
        }
    }
}

/// Trial-decrypts `ct` under `key` for each candidate counter.
pub(crate) fn trial_open(key: &TunnelKey, generation: u32, dir: Direction, aad: &[u8], ct: &[u8], candidates: &[u32]) -> Option<(u32, Frame)> {
    let cipher = key.cipher();
    candidates.iter().find_map(|&c| {
        let pt = cipher.open(generation, dir, c, aad, ct)?;
        Frame::decode(&pt).map(|f| (c, f))
    })
}

pub(crate) struct Session {
    pub tid: u64,
    pub key: TunnelKey,
    pub generation: u32,
    pub send_dir: Direction,
    pub counter: u32,
    pub replay: ReplayWindow,
    pub remote: SocketAddr,
    pub rel: Reliable,
    pub gen_started_at: u64,
    pub gen_bytes_base: u64,
}

impl Session {
    pub fn new(tid: u64, key: TunnelKey, send_dir: Direction, remote: SocketAddr, cfg: &TransportConfig, now: u64) -> Self {
        Session {
            tid,
            key,
            generation: 0,
            send_dir,
            counter: 0,
            replay: ReplayWindow::default(),
            remote,
            rel: Reliable::new(cfg.stream.clone(), send_dir == Direction::ClientToServer),
            gen_started_at: now,
            gen_bytes_base: 0,
        }
    }

    fn recv_dir(&self) -> Direction {
        match self.send_dir {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        }
    }

    pub fn seal(&mut self, layout: Layout, frame: &Frame) -> Transmit {
        let counter = self.counter;
        self.counter += 1;
        let aad = layout.packet(self.tid, &[]).header();
        let ct = self.key.seal(self.generation, self.send_dir, counter, &aad, &frame.encode());
        let payload = layout.packet(self.tid, &ct).encode();
        Transmit {
            dst: self.remote,
            info: PacketInfo {
                kind: payload[4],
                tid: self.tid,
                generation: self.generation,
                counter,
                seq: frame.seq,
                conn: frame.conn,
                flags: frame.flags,
                payload_len: frame.payload.len(),
            },
            payload,
        }
    }

    /// Authenticates a packet addressed to this session. Returns the frame
    /// and whether its counter is the newest seen.
    pub fn open(&mut self, p: &Packet<'_>) -> Option<(Frame, bool)> {
        let aad = p.header();
        let (c, f) = trial_open(&self.key, self.generation, self.recv_dir(), &aad, p.ciphertext(), &self.replay.candidates())?;
        Some((f, self.replay.mark(c)))
    }

    /// Moves to the next hash-chain key under a new tunnel id.
    pub fn advance(&mut self, next_tid: u64, now: u64) {
        self.tid = next_tid;
        self.key.advance();
        self.generation += 1;
        self.counter = 0;
        self.replay = ReplayWindow::default();
        self.gen_started_at = now;
        self.gen_bytes_base = self.rel.app_bytes();
    }

    /// Application bytes moved under the current key.
    pub fn gen_bytes(&self) -> u64 {
        self.rel.app_bytes() - self.gen_bytes_base
    }

    pub fn drain(&mut self, now: u64, layout: Layout, out: &mut Vec<Transmit>) {
        while let Some(f) = self.rel.next_frame(now) {
            out.push(self.seal(layout, &f));
        }
    }
}

/// Splits stream events into application events and control messages.
pub(crate) fn map_stream_event(e: StreamEvent) -> Result<Event, Rpc> {
    match e {
        StreamEvent::Opened(c) => Ok(Event::ConnOpened(c)),
        StreamEvent::Readable(c) => Ok(Event::Readable(c)),
        StreamEvent::Finished(c) => Ok(Event::Finished(c)),
        StreamEvent::Rpc(r) => Err(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_window_accepts_each_counter_once() {
        let mut w = ReplayWindow::default();
        assert_eq!(w.candidates().len(), COUNTER_LOOKAHEAD as usize);
        assert!(w.mark(5));
        assert!(!w.candidates().contains(&5));
        assert!(w.candidates().contains(&4));
        assert!(w.candidates().contains(&6));
        assert!(!w.mark(4));
        assert!(!w.candidates().contains(&4));
        assert!(w.mark(300));
        assert!(!w.candidates().contains(&5));
        assert!(w.candidates().contains(&299));
        assert_eq!(w.candidates()[0], 301);
    }
}
