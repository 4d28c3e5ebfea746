//! The accepting end: admission, puzzles under load, rekey switching and
//! address tracking.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::SocketAddr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use super::crypto::{Direction, TunnelKey};
use super::puzzle::{issue_nonce, Puzzle};
use super::stream::{StreamError, StreamStats};
use super::tunnel::{
    map_stream_event, trial_open, Event, Layout, PacketInfo, RekeyReason, Session, Transmit, TransportConfig, COUNTER_LOOKAHEAD,
};
use super::wire::{Frame, Packet, Rpc, TYPE_PUZZLE};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub transport: TransportConfig,
    pub puzzle_difficulty: u8,
    /// Treat the server as loaded once this many tunnels are open.
    pub load_threshold: Option<usize>,
    /// Rotate the ephemeral key this often.
    pub eph_epoch_ms: Option<u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { transport: TransportConfig::default(), puzzle_difficulty: 12, load_threshold: None, eph_epoch_ms: None }
    }
}

/// Names one tunnel for its whole life, across rekeys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TunnelHandle(pub u64);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub accepted: u64,
    pub puzzles_sent: u64,
    pub dropped: u64,
    pub rekeys: u64,
    pub address_changes: u64,
}

struct Tunnel {
    s: Session,
    /// Key shown by the client in INIT-layout packets of this generation.
    init_pubkey: [u8; 32],
    announced: Option<u64>,
    closed: bool,
}

pub struct Server {
    cfg: ServerConfig,
    eph: StaticSecret,
    eph_pub: [u8; 32],
    /// Still accepted for new tunnels until the next rotation.
    prev_eph: Option<StaticSecret>,
    rotated_at: u64,
    rng: ChaCha20Rng,
    puzzle_secret: [u8; 32],
    load_flag: bool,
    tunnels: BTreeMap<TunnelHandle, Tunnel>,
    by_tid: HashMap<u64, TunnelHandle>,
    /// Announced next tunnel ids and the key their first packet must show.
    pending: HashMap<u64, (TunnelHandle, [u8; 32])>,
    next_handle: u64,
    events: VecDeque<(TunnelHandle, Event)>,
    rotations: VecDeque<[u8; 32]>,
    out: VecDeque<Transmit>,
    pub stats: ServerStats,
}

impl Server {
    pub fn new(cfg: ServerConfig, eph: StaticSecret, seed: [u8; 32], now: u64) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let mut puzzle_secret = [0u8; 32];
        rng.fill_bytes(&mut puzzle_secret);
        Server {
            cfg,
            eph_pub: XPublic::from(&eph).to_bytes(),
            eph,
            prev_eph: None,
            rotated_at: now,
            rng,
            puzzle_secret,
            load_flag: false,
            tunnels: BTreeMap::new(),
            by_tid: HashMap::new(),
            pending: HashMap::new(),
            next_handle: 1,
            events: VecDeque::new(),
            rotations: VecDeque::new(),
            out: VecDeque::new(),
            stats: ServerStats::default(),
        }
    }

    pub fn eph_public(&self) -> [u8; 32] {
        self.eph_pub
    }

    /// Installs a new ephemeral key; the previous one stays valid for new
    /// tunnels until the next rotation.
    pub fn rotate_eph_key(&mut self, new: StaticSecret, now: u64) {
        self.eph_pub = XPublic::from(&new).to_bytes();
        self.prev_eph = Some(std::mem::replace(&mut self.eph, new));
        self.rotated_at = now;
        self.rotations.push_back(self.eph_pub);
    }

    /// Public keys installed by epoch rotation, oldest first.
    pub fn poll_rotation(&mut self) -> Option<[u8; 32]> {
        self.rotations.pop_front()
    }

    pub fn set_load(&mut self, loaded: bool) {
        self.load_flag = loaded;
    }

    pub fn is_loaded(&self) -> bool {
        self.load_flag || self.cfg.load_threshold.is_some_and(|t| self.tunnels.len() >= t)
    }

    pub fn tunnel_count(&self) -> usize {
        self.tunnels.len()
    }

    pub fn handles(&self) -> impl Iterator<Item = TunnelHandle> + '_ {
        self.tunnels.keys().copied()
    }

    pub fn generation(&self, h: TunnelHandle) -> Option<u32> {
        self.tunnels.get(&h).map(|t| t.s.generation)
    }

    pub fn tid(&self, h: TunnelHandle) -> Option<u64> {
        self.tunnels.get(&h).map(|t| t.s.tid)
    }

    pub fn key(&self, h: TunnelHandle) -> Option<&TunnelKey> {
        self.tunnels.get(&h).map(|t| &t.s.key)
    }

    pub fn remote(&self, h: TunnelHandle) -> Option<SocketAddr> {
        self.tunnels.get(&h).map(|t| t.s.remote)
    }

    pub fn stream_stats(&self, h: TunnelHandle) -> Option<&StreamStats> {
        self.tunnels.get(&h).map(|t| &t.s.rel.stats)
    }

    fn tunnel(&mut self, h: TunnelHandle) -> Result<&mut Tunnel, StreamError> {
        self.tunnels.get_mut(&h).filter(|t| !t.closed).ok_or(StreamError::ConnClosed)
    }

    pub fn open_conn(&mut self, h: TunnelHandle) -> Result<u32, StreamError> {
        Ok(self.tunnel(h)?.s.rel.open_conn())
    }

    pub fn send(&mut self, h: TunnelHandle, conn: u32, data: &[u8]) -> Result<usize, StreamError> {
        self.tunnel(h)?.s.rel.send(conn, data)
    }

    pub fn finish(&mut self, h: TunnelHandle, conn: u32) -> Result<(), StreamError> {
        self.tunnel(h)?.s.rel.finish(conn)
    }

    pub fn read(&mut self, h: TunnelHandle, conn: u32, max: usize) -> Vec<u8> {
        self.tunnels.get_mut(&h).map(|t| t.s.rel.read(conn, max)).unwrap_or_default()
    }

    pub fn readable_len(&self, h: TunnelHandle, conn: u32) -> usize {
        self.tunnels.get(&h).map_or(0, |t| t.s.rel.readable_len(conn))
    }

    pub fn peer_finished(&self, h: TunnelHandle, conn: u32) -> bool {
        self.tunnels.get(&h).is_some_and(|t| t.s.rel.peer_finished(conn))
    }

    pub fn poll_event(&mut self) -> Option<(TunnelHandle, Event)> {
        self.events.pop_front()
    }

    pub fn handle_datagram(&mut self, now: u64, from: SocketAddr, bytes: &[u8]) {
        let Some(p) = Packet::parse(bytes) else {
            self.stats.dropped += 1;
            return;
        };
        let accepted = match p {
            Packet::Data { tid, .. } => match self.by_tid.get(&tid) {
                Some(&h) => self.on_known(h, now, from, &p),
                None => false,
            },
            Packet::Init { tid, eph_pub, .. } | Packet::InitPuzzled { tid, eph_pub, .. } => {
                if let Some(&h) = self.by_tid.get(&tid) {
                    self.tunnels[&h].init_pubkey == eph_pub && self.on_known(h, now, from, &p)
                } else if self.pending.get(&tid).is_some_and(|&(_, k)| k == eph_pub) && self.try_switch(now, from, &p) {
                    true
                } else {
                    self.admit(now, from, &p)
                }
            }
            Packet::Puzzle { .. } => false,
        };
        if !accepted {
            self.stats.dropped += 1;
        }
    }

    fn on_known(&mut self, h: TunnelHandle, now: u64, from: SocketAddr, p: &Packet<'_>) -> bool {
        let t = self.tunnels.get_mut(&h).expect("indexed tunnel exists");
        let Some((frame, newest)) = t.s.open(p) else { return false };
        if newest {
            self.note_source(h, from);
        }
        self.on_frame(h, now, frame);
        true
    }

    fn note_source(&mut self, h: TunnelHandle, from: SocketAddr) {
        let t = self.tunnels.get_mut(&h).expect("indexed tunnel exists");
        if t.s.remote == from {
            return;
        }
        let old = std::mem::replace(&mut t.s.remote, from);
        t.s.rel.send_rpc(Rpc::RekeyRequest);
        self.stats.address_changes += 1;
        self.events.push_back((h, Event::AddressChanged { from: old, to: from }));
    }

    /// First packet under an announced tunnel id: must open under the next key.
    fn try_switch(&mut self, now: u64, from: SocketAddr, p: &Packet<'_>) -> bool {
        let (tid, eph_pub) = match *p {
            Packet::Init { tid, eph_pub, .. } | Packet::InitPuzzled { tid, eph_pub, .. } => (tid, eph_pub),
            _ => return false,
        };
        let (h, _) = self.pending[&tid];
        let t = self.tunnels.get_mut(&h).expect("pending entries name live tunnels");
        let candidates: Vec<u32> = (0..COUNTER_LOOKAHEAD).collect();
        let Some((c, frame)) =
            trial_open(&t.s.key.next(), t.s.generation + 1, Direction::ClientToServer, &p.header(), p.ciphertext(), &candidates)
        else {
            return false;
        };
        self.pending.remove(&tid);
        self.by_tid.remove(&t.s.tid);
        t.s.advance(tid, now);
        t.s.replay.mark(c);
        t.init_pubkey = eph_pub;
        t.announced = None;
        let generation = t.s.generation;
        self.by_tid.insert(tid, h);
        self.stats.rekeys += 1;
        self.events.push_back((h, Event::Rekeyed { generation, reason: RekeyReason::Peer }));
        self.note_source(h, from);
        self.on_frame(h, now, frame);
        true
    }

    /// Fresh tunnel: puzzle gate, then DH against the current and previous key.
    fn admit(&mut self, now: u64, from: SocketAddr, p: &Packet<'_>) -> bool {
        let (tid, eph_pub) = match *p {
            Packet::Init { tid, eph_pub, .. } => {
                if self.is_loaded() {
                    self.send_puzzle(from, tid, &eph_pub);
                    return true;
                }
                (tid, eph_pub)
            }
            Packet::InitPuzzled { tid, nonce, solution, eph_pub, .. } => {
                let expected = issue_nonce(&self.puzzle_secret, tid, &eph_pub);
                let puzzle = Puzzle { nonce, difficulty: self.cfg.puzzle_difficulty };
                if nonce != expected || !puzzle.verify(solution, &eph_pub) {
                    return false;
                }
                (tid, eph_pub)
            }
            _ => return false,
        };
        if tid == 0 || self.pending.contains_key(&tid) {
            return false;
        }
        let client = XPublic::from(eph_pub);
        let candidates: Vec<u32> = (0..COUNTER_LOOKAHEAD).collect();
        let opened = [Some(&self.eph), self.prev_eph.as_ref()].into_iter().flatten().find_map(|secret| {
            let shared = secret.diffie_hellman(&client);
            if !shared.was_contributory() {
                return None;
            }
            let key = TunnelKey::derive(shared.as_bytes(), tid);
            let (c, frame) = trial_open(&key, 0, Direction::ClientToServer, &p.header(), p.ciphertext(), &candidates)?;
            Some((key, c, frame))
        });
        let Some((key, c, frame)) = opened else { return false };
        let h = TunnelHandle(self.next_handle);
        self.next_handle += 1;
        let mut s = Session::new(tid, key, Direction::ServerToClient, from, &self.cfg.transport, now);
        s.replay.mark(c);
        self.tunnels.insert(h, Tunnel { s, init_pubkey: eph_pub, announced: None, closed: false });
        self.by_tid.insert(tid, h);
        self.stats.accepted += 1;
        self.events.push_back((h, Event::Accepted));
        self.on_frame(h, now, frame);
        true
    }

    fn send_puzzle(&mut self, to: SocketAddr, tid: u64, eph_pub: &[u8; 32]) {
        let nonce = issue_nonce(&self.puzzle_secret, tid, eph_pub);
        let difficulty = self.cfg.puzzle_difficulty;
        let payload = Packet::Puzzle { tid, nonce, difficulty }.encode();
        self.stats.puzzles_sent += 1;
        self.out.push_back(Transmit {
            dst: to,
            info: PacketInfo { kind: TYPE_PUZZLE, tid, generation: 0, counter: 0, seq: 0, conn: 0, flags: 0, payload_len: 0 },
            payload,
        });
    }

    fn on_frame(&mut self, h: TunnelHandle, now: u64, frame: Frame) {
        let t = self.tunnels.get_mut(&h).expect("live tunnel");
        t.s.rel.on_frame(now, frame);
        while let Some(e) = t.s.rel.poll_event() {
            match map_stream_event(e) {
                Ok(ev) => self.events.push_back((h, ev)),
                Err(Rpc::NextTid { next_tid, pubkey }) => {
                    if let Some(old) = t.announced.take() {
                        self.pending.remove(&old);
                    }
                    if next_tid != 0 && !self.by_tid.contains_key(&next_tid) && !self.pending.contains_key(&next_tid) {
                        self.pending.insert(next_tid, (h, pubkey));
                        t.announced = Some(next_tid);
                    }
                }
                Err(Rpc::Close) => {
                    if !t.closed {
                        t.closed = true;
                        self.events.push_back((h, Event::Closed));
                    }
                }
                Err(_) => {}
            }
        }
    }

    fn flush(&mut self, now: u64) {
        let mut out = Vec::new();
        let mut done = Vec::new();
        for (&h, t) in self.tunnels.iter_mut() {
            t.s.drain(now, Layout::Data, &mut out);
            if t.closed {
                done.push(h);
            }
        }
        self.out.extend(out);
        for h in done {
            let t = self.tunnels.remove(&h).expect("listed");
            self.by_tid.remove(&t.s.tid);
            if let Some(a) = t.announced {
                self.pending.remove(&a);
            }
        }
    }

    pub fn poll_transmit(&mut self, now: u64) -> Option<Transmit> {
        if self.out.is_empty() {
            self.flush(now);
        }
        self.out.pop_front()
    }

    pub fn poll_timeout(&self) -> Option<u64> {
        let epoch = self.cfg.eph_epoch_ms.map(|e| self.rotated_at + e);
        self.tunnels.values().filter_map(|t| t.s.rel.poll_timeout()).chain(epoch).min()
    }

    pub fn handle_timeout(&mut self, now: u64) {
        for t in self.tunnels.values_mut() {
            t.s.rel.handle_timeout(now);
        }
        if self.cfg.eph_epoch_ms.is_some_and(|e| now >= self.rotated_at + e) {
            let next = StaticSecret::random_from_rng(&mut self.rng);
            self.rotate_eph_key(next, now);
        }
    }
}
