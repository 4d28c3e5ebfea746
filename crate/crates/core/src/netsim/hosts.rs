//! Simulated endpoints wrapping the transport state machines.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;

use crate::transport::app::{parse_reply, request, DocServer, Reply};
use crate::transport::{ClientTunnel, ConnectError, Event, Server, Transmit, TransportConfig, TunnelHandle};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetch {
    pub path: String,
    pub conn: u32,
    pub started_at: u64,
    pub first_byte_at: Option<u64>,
    pub completed_at: Option<u64>,
    pub body: Vec<u8>,
    pub reply: Option<Reply>,
}

#[derive(Debug, Clone, Default)]
struct OutStream {
    data: Vec<u8>,
    sent: usize,
    finish: bool,
    finished: bool,
}

pub struct ClientHost {
    pub name: String,
    pub addr: SocketAddr,
    pub transport: TransportConfig,
    pub tunnel: Option<ClientTunnel>,
    pub fetches: Vec<Fetch>,
    /// Bytes delivered on connections that are not fetches.
    pub received: BTreeMap<u32, Vec<u8>>,
    pub events: Vec<(u64, Event)>,
    outgoing: BTreeMap<u32, OutStream>,
}

impl ClientHost {
    pub fn new(name: impl Into<String>, addr: SocketAddr, transport: TransportConfig) -> Self {
        ClientHost {
            name: name.into(),
            addr,
            transport,
            tunnel: None,
            fetches: Vec::new(),
            received: BTreeMap::new(),
            events: Vec::new(),
            outgoing: BTreeMap::new(),
        }
    }

    /// Opens the tunnel with `first_data` on its first connection.
    pub fn connect(&mut self, now: u64, server: SocketAddr, eph: &[u8], first_data: &[u8], seed: [u8; 32]) -> Result<u32, ConnectError> {
        let t = ClientTunnel::connect(self.transport.clone(), eph, server, first_data, now, seed)?;
        let conn = t.first_conn();
        self.tunnel = Some(t);
        Ok(conn)
    }

    /// Requests `path`; the request rides in the INIT when no tunnel exists yet.
    pub fn fetch(&mut self, now: u64, server: SocketAddr, eph: &[u8], path: &str, seed: [u8; 32]) -> Result<(), ConnectError> {
        let req = request(path);
        let conn = match self.tunnel.as_mut() {
            None => return self.connect(now, server, eph, &req, seed).map(|conn| self.start_fetch(now, path, conn)),
            Some(t) => t.open_conn(),
        };
        self.outgoing.insert(conn, OutStream { data: req, sent: 0, finish: false, finished: false });
        self.start_fetch(now, path, conn);
        Ok(())
    }

    fn start_fetch(&mut self, now: u64, path: &str, conn: u32) {
        self.fetches.push(Fetch {
            path: path.to_string(),
            conn,
            started_at: now,
            first_byte_at: None,
            completed_at: None,
            body: Vec::new(),
            reply: None,
        });
    }

    /// Queues `data` on `conn` and closes it once sent.
    pub fn stream(&mut self, conn: u32, data: Vec<u8>) {
        self.outgoing.insert(conn, OutStream { data, sent: 0, finish: true, finished: false });
    }

    /// Every queued stream is sent, closed and acknowledged.
    pub fn streams_done(&self) -> bool {
        let acked = |conn: u32| self.tunnel.as_ref().is_some_and(|t| t.send_complete(conn));
        self.outgoing.iter().all(|(&c, s)| !s.finish || (s.finished && acked(c)))
    }

    pub fn fetches_done(&self) -> bool {
        self.fetches.iter().all(|f| f.completed_at.is_some())
    }

    pub(crate) fn service(&mut self, now: u64) {
        let Some(t) = self.tunnel.as_mut() else { return };
        while let Some(ev) = t.poll_event() {
            if let Event::Readable(conn) | Event::Finished(conn) = ev {
                let data = t.read(conn, usize::MAX);
                match self.fetches.iter_mut().find(|f| f.conn == conn) {
                    Some(f) => {
                        if !data.is_empty() && f.first_byte_at.is_none() {
                            f.first_byte_at = Some(now);
                        }
                        f.body.extend(data);
                        if t.peer_finished(conn) && f.completed_at.is_none() {
                            f.completed_at = Some(now);
                            f.reply = parse_reply(&f.body);
                        }
                    }
                    None => self.received.entry(conn).or_default().extend(data),
                }
            }
            self.events.push((now, ev));
        }
        for (&conn, s) in self.outgoing.iter_mut() {
            if s.sent < s.data.len() {
                if let Ok(n) = t.send(conn, &s.data[s.sent..]) {
                    s.sent += n;
                }
            }
            if s.sent == s.data.len() && s.finish && !s.finished && t.finish(conn).is_ok() {
                s.finished = true;
            }
        }
    }

    pub(crate) fn poll_transmit(&mut self, now: u64) -> Option<Transmit> {
        self.tunnel.as_mut()?.poll_transmit(now)
    }

    pub(crate) fn poll_timeout(&self) -> Option<u64> {
        self.tunnel.as_ref()?.poll_timeout()
    }

    pub(crate) fn handle_timeout(&mut self, now: u64) {
        if let Some(t) = self.tunnel.as_mut() {
            t.handle_timeout(now);
        }
    }

    pub(crate) fn handle_datagram(&mut self, now: u64, from: SocketAddr, bytes: &[u8]) {
        if let Some(t) = self.tunnel.as_mut() {
            t.handle_datagram(now, from, bytes);
        }
    }
}

pub struct ServerHost {
    pub name: String,
    pub addr: SocketAddr,
    pub server: Server,
    pub docs: DocServer,
    /// Store everything read instead of answering requests.
    pub sink: bool,
    pub received: BTreeMap<(TunnelHandle, u32), Vec<u8>>,
    pub finished: BTreeSet<(TunnelHandle, u32)>,
    pub events: Vec<(u64, TunnelHandle, Event)>,
    pub rotations: Vec<(u64, [u8; 32])>,
}

impl ServerHost {
    pub fn new(name: impl Into<String>, addr: SocketAddr, server: Server, docs: DocServer) -> Self {
        ServerHost {
            name: name.into(),
            addr,
            server,
            docs,
            sink: false,
            received: BTreeMap::new(),
            finished: BTreeSet::new(),
            events: Vec::new(),
            rotations: Vec::new(),
        }
    }

    pub(crate) fn service(&mut self, now: u64) {
        while let Some((h, ev)) = self.server.poll_event() {
            if self.sink {
                if let Event::Readable(conn) | Event::Finished(conn) = ev {
                    let data = self.server.read(h, conn, usize::MAX);
                    self.received.entry((h, conn)).or_default().extend(data);
                    if self.server.peer_finished(h, conn) {
                        self.finished.insert((h, conn));
                    }
                }
            } else {
                self.docs.on_event(&mut self.server, h, &ev);
            }
            self.events.push((now, h, ev));
        }
        self.docs.pump(&mut self.server);
        while let Some(k) = self.server.poll_rotation() {
            self.rotations.push((now, k));
        }
    }
}
