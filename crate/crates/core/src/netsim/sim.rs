//! The event loop: virtual time, link impairments and the trace.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::net::SocketAddr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use x25519_dalek::StaticSecret;

use super::hosts::{ClientHost, ServerHost};
use crate::transport::app::DocServer;
use crate::transport::wire::kind_name;
use crate::transport::{ConnectError, PacketInfo, Server, ServerConfig, TransportConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// One-way latency in ms.
    pub latency_ms: u64,
    pub loss: f64,
    /// Probability that a datagram is held back by up to one latency.
    pub reorder: f64,
    /// Link rate in bytes per ms, shared by all datagrams a host sends.
    pub bandwidth: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 0, latency_ms: 50, loss: 0.0, reorder: 0.0, bandwidth: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HostId(pub usize);

#[allow(clippy::large_enum_variant)]
pub enum Host {
    Client(ClientHost),
    Server(ServerHost),
}

impl Host {
    pub fn name(&self) -> &str {
        match self {
            Host::Client(c) => &c.name,
            Host::Server(s) => &s.name,
        }
    }

    pub fn addr(&self) -> SocketAddr {
        match self {
            Host::Client(c) => c.addr,
            Host::Server(s) => s.addr,
        }
    }

    fn set_addr(&mut self, a: SocketAddr) {
        match self {
            Host::Client(c) => c.addr = a,
            Host::Server(s) => s.addr = a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub t: u64,
    pub ev: &'static str,
    pub host: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub src: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dst: Option<String>,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub ptype: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counter: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conn: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flags: Option<u8>,
    /// Application payload bytes in the frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl TraceEvent {
    fn bare(t: u64, ev: &'static str, host: &str) -> Self {
        TraceEvent {
            t,
            ev,
            host: host.to_string(),
            src: None,
            dst: None,
            ptype: None,
            tid: None,
            generation: None,
            counter: None,
            conn: None,
            seq: None,
            flags: None,
            payload: None,
            bytes: None,
            detail: None,
        }
    }

    fn datagram(t: u64, ev: &'static str, host: &str, d: &Datagram) -> Self {
        TraceEvent {
            src: Some(d.src.to_string()),
            dst: Some(d.dst.to_string()),
            ptype: Some(kind_name(d.info.kind)),
            tid: Some(format!("{:016x}", d.info.tid)),
            generation: Some(d.info.generation),
            counter: Some(d.info.counter),
            conn: Some(d.info.conn),
            seq: Some(d.info.seq),
            flags: Some(d.info.flags),
            payload: Some(d.info.payload_len),
            bytes: Some(d.payload.len()),
            ..TraceEvent::bare(t, ev, host)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace events serialize")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NetStats {
    pub sent: u64,
    pub delivered: u64,
    /// Dropped by the link or addressed to no one.
    pub lost: u64,
    pub reordered: u64,
    /// Still on the wire when the statistics were taken.
    pub in_flight: u64,
}

#[derive(Debug, Clone)]
struct Datagram {
    src: SocketAddr,
    dst: SocketAddr,
    payload: Vec<u8>,
    info: PacketInfo,
}

enum Pending {
    Deliver(Datagram),
    Timer(HostId),
    Call(Box<dyn FnOnce(&mut Sim)>),
}

pub struct Sim {
    pub cfg: SimConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    pending: HashMap<u64, Pending>,
    rng: ChaCha8Rng,
    hosts: Vec<Host>,
    by_addr: HashMap<SocketAddr, HostId>,
    by_name: HashMap<String, HostId>,
    timers: Vec<Option<u64>>,
    link_free: Vec<u64>,
    pub trace: Vec<TraceEvent>,
    pub stats: NetStats,
}

impl Sim {
    pub fn new(cfg: SimConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Sim {
            cfg,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            rng,
            hosts: Vec::new(),
            by_addr: HashMap::new(),
            by_name: HashMap::new(),
            timers: Vec::new(),
            link_free: Vec::new(),
            trace: Vec::new(),
            stats: NetStats::default(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// A 32-byte seed drawn from the simulation RNG.
    pub fn seed(&mut self) -> [u8; 32] {
        self.rng.gen()
    }

    fn add(&mut self, host: Host) -> HostId {
        let id = HostId(self.hosts.len());
        self.by_addr.insert(host.addr(), id);
        self.by_name.insert(host.name().to_string(), id);
        self.hosts.push(host);
        self.timers.push(None);
        self.link_free.push(0);
        id
    }

    pub fn add_client(&mut self, name: &str, addr: SocketAddr, transport: TransportConfig) -> HostId {
        self.add(Host::Client(ClientHost::new(name, addr, transport)))
    }

    /// A server with a fresh ephemeral key drawn from the simulation RNG.
    pub fn add_server(&mut self, name: &str, addr: SocketAddr, cfg: ServerConfig, docs: DocServer) -> HostId {
        let eph = StaticSecret::random_from_rng(&mut self.rng);
        self.add_server_with_key(name, addr, cfg, eph, docs)
    }

    pub fn add_server_with_key(&mut self, name: &str, addr: SocketAddr, cfg: ServerConfig, eph: StaticSecret, docs: DocServer) -> HostId {
        let seed = self.seed();
        let server = Server::new(cfg, eph, seed, self.now);
        let id = self.add(Host::Server(ServerHost::new(name, addr, server, docs)));
        self.reschedule(id);
        id
    }

    pub fn host_id(&self, name: &str) -> Option<HostId> {
        self.by_name.get(name).copied()
    }

    pub fn host(&self, id: HostId) -> &Host {
        &self.hosts[id.0]
    }

    pub fn client(&mut self, id: HostId) -> &mut ClientHost {
        match &mut self.hosts[id.0] {
            Host::Client(c) => c,
            Host::Server(_) => panic!("host {} is a server", id.0),
        }
    }

    pub fn server(&mut self, id: HostId) -> &mut ServerHost {
        match &mut self.hosts[id.0] {
            Host::Server(s) => s,
            Host::Client(_) => panic!("host {} is a client", id.0),
        }
    }

    pub fn client_ref(&self, id: HostId) -> &ClientHost {
        match &self.hosts[id.0] {
            Host::Client(c) => c,
            Host::Server(_) => panic!("host {} is a server", id.0),
        }
    }

    pub fn server_ref(&self, id: HostId) -> &ServerHost {
        match &self.hosts[id.0] {
            Host::Server(s) => s,
            Host::Client(_) => panic!("host {} is a client", id.0),
        }
    }

    fn push(&mut self, at: u64, p: Pending) {
        let seq = self.seq;
        self.seq += 1;
        self.pending.insert(seq, p);
        self.queue.push(Reverse((at, seq)));
    }

    /// Runs `f` at virtual time `at`.
    pub fn schedule(&mut self, at: u64, f: impl FnOnce(&mut Sim) + 'static) {
        self.push(at.max(self.now), Pending::Call(Box::new(f)));
    }

    pub fn note(&mut self, host: &str, detail: String) {
        let mut e = TraceEvent::bare(self.now, "action", host);
        e.detail = Some(detail);
        self.trace.push(e);
    }

    /// Starts a fetch from `client` to `server`, using the server's current
    /// ephemeral key as the published one.
    pub fn fetch(&mut self, client: HostId, server: HostId, path: &str) -> Result<(), ConnectError> {
        let (addr, eph) = {
            let s = self.server_ref(server);
            (s.addr, s.server.eph_public())
        };
        let seed = self.seed();
        let now = self.now;
        self.client(client).fetch(now, addr, &eph, path, seed)?;
        self.service(client);
        Ok(())
    }

    /// Opens a tunnel with no application data.
    pub fn connect(&mut self, client: HostId, server: HostId) -> Result<u32, ConnectError> {
        let (addr, eph) = {
            let s = self.server_ref(server);
            (s.addr, s.server.eph_public())
        };
        let seed = self.seed();
        let now = self.now;
        let conn = self.client(client).connect(now, addr, &eph, &[], seed)?;
        self.service(client);
        Ok(conn)
    }

    /// Moves a host; datagrams still addressed to the old address are lost.
    pub fn change_address(&mut self, id: HostId, to: SocketAddr) {
        let from = self.hosts[id.0].addr();
        self.by_addr.remove(&from);
        self.by_addr.insert(to, id);
        self.hosts[id.0].set_addr(to);
        let name = self.hosts[id.0].name().to_string();
        self.note(&name, format!("address {from} -> {to}"));
    }

    pub fn set_load(&mut self, id: HostId, on: bool) {
        self.server(id).server.set_load(on);
        let name = self.hosts[id.0].name().to_string();
        self.note(&name, format!("load {on}"));
    }

    /// Lets a host react to whatever changed, then sends what it produced.
    pub fn service(&mut self, id: HostId) {
        let now = self.now;
        match &mut self.hosts[id.0] {
            Host::Client(c) => c.service(now),
            Host::Server(s) => s.service(now),
        }
        loop {
            let (src, t) = match &mut self.hosts[id.0] {
                Host::Client(c) => (c.addr, c.poll_transmit(now)),
                Host::Server(s) => (s.addr, s.server.poll_transmit(now)),
            };
            let Some(t) = t else { break };
            self.transmit(id, Datagram { src, dst: t.dst, payload: t.payload, info: t.info });
        }
        self.reschedule(id);
    }

    fn transmit(&mut self, id: HostId, d: Datagram) {
        self.stats.sent += 1;
        let host = self.hosts[id.0].name().to_string();
        self.trace.push(TraceEvent::datagram(self.now, "send", &host, &d));
        let mut depart = self.now;
        if let Some(bw) = self.cfg.bandwidth {
            let start = self.link_free[id.0].max(self.now);
            depart = start + (d.payload.len() as u64).div_ceil(bw.max(1));
            self.link_free[id.0] = depart;
        }
        if self.cfg.loss > 0.0 && self.rng.gen_bool(self.cfg.loss.clamp(0.0, 1.0)) {
            self.stats.lost += 1;
            let mut e = TraceEvent::datagram(self.now, "drop", &host, &d);
            e.detail = Some("link".into());
            self.trace.push(e);
            return;
        }
        let mut at = depart + self.cfg.latency_ms;
        if self.cfg.reorder > 0.0 && self.rng.gen_bool(self.cfg.reorder.clamp(0.0, 1.0)) {
            self.stats.reordered += 1;
            at += self.rng.gen_range(1..=self.cfg.latency_ms.max(1));
        }
        self.push(at, Pending::Deliver(d));
    }

    fn reschedule(&mut self, id: HostId) {
        let next = match &self.hosts[id.0] {
            Host::Client(c) => c.poll_timeout(),
            Host::Server(s) => s.server.poll_timeout(),
        };
        if let Some(at) = next {
            if self.timers[id.0] != Some(at) {
                self.timers[id.0] = Some(at);
                self.push(at.max(self.now), Pending::Timer(id));
            }
        }
    }

    /// Processes the next event; false when none is left before `limit`.
    pub fn step(&mut self, limit: u64) -> bool {
        let Some(&Reverse((at, seq))) = self.queue.peek() else { return false };
        if at > limit {
            return false;
        }
        self.queue.pop();
        self.now = at;
        match self.pending.remove(&seq).expect("queued events are stored") {
            Pending::Deliver(d) => self.deliver(d),
            Pending::Timer(id) => {
                if self.timers[id.0] == Some(at) {
                    self.timers[id.0] = None;
                }
                let due = match &self.hosts[id.0] {
                    Host::Client(c) => c.poll_timeout(),
                    Host::Server(s) => s.server.poll_timeout(),
                };
                if due.is_some_and(|d| d <= at) {
                    match &mut self.hosts[id.0] {
                        Host::Client(c) => c.handle_timeout(at),
                        Host::Server(s) => s.server.handle_timeout(at),
                    }
                }
                self.service(id);
            }
            Pending::Call(f) => f(self),
        }
        true
    }

    fn deliver(&mut self, d: Datagram) {
        let Some(&id) = self.by_addr.get(&d.dst) else {
            self.stats.lost += 1;
            let mut e = TraceEvent::datagram(self.now, "drop", "-", &d);
            e.detail = Some("unroutable".into());
            self.trace.push(e);
            return;
        };
        self.stats.delivered += 1;
        let host = self.hosts[id.0].name().to_string();
        self.trace.push(TraceEvent::datagram(self.now, "deliver", &host, &d));
        let now = self.now;
        match &mut self.hosts[id.0] {
            Host::Client(c) => c.handle_datagram(now, d.src, &d.payload),
            Host::Server(s) => s.server.handle_datagram(now, d.src, &d.payload),
        }
        self.service(id);
    }

    pub fn run_until(&mut self, t: u64) {
        while self.step(t) {}
        self.now = self.now.max(t);
    }

    /// Runs until `done` holds or virtual time passes `limit`; true if `done`.
    pub fn run_while(&mut self, limit: u64, mut done: impl FnMut(&Sim) -> bool) -> bool {
        loop {
            if done(self) {
                return true;
            }
            if !self.step(limit) {
                return done(self);
            }
        }
    }

    pub fn net_stats(&self) -> NetStats {
        let in_flight = self.pending.values().filter(|p| matches!(p, Pending::Deliver(_))).count() as u64;
        NetStats { in_flight, ..self.stats.clone() }
    }

    pub fn hosts(&self) -> impl Iterator<Item = (HostId, &Host)> {
        self.hosts.iter().enumerate().map(|(i, h)| (HostId(i), h))
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace.iter().map(|e| e.to_json() + "\n").collect()
    }
}
