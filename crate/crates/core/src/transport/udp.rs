//! Real-socket drivers: a blocking server loop and a one-shot document fetch.

use std::io::{self, Write};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde_json::json;
use thiserror::Error;

use super::app::{parse_reply, request, DocServer, Reply};
use super::client::{ClientTunnel, ConnectError};
use super::server::Server;
use super::tunnel::{PacketInfo, TransportConfig};
use super::wire::{kind_name, Packet, MTU};

const IDLE_POLL: Duration = Duration::from_millis(50);

/// Milliseconds since construction.
pub struct Clock(Instant);

impl Clock {
    pub fn new() -> Self {
        Clock(Instant::now())
    }

    pub fn now(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

impl Default for Clock {
    fn default() -> Self {
        Self::new()
    }
}

/// One JSON line per datagram.
pub fn trace_out(t_ms: u64, dst: SocketAddr, info: &PacketInfo, len: usize) -> String {
    json!({
        "t_ms": t_ms, "dir": "out", "peer": dst.to_string(), "type": kind_name(info.kind),
        "tid": format!("{:016x}", info.tid), "generation": info.generation, "counter": info.counter,
        "conn": info.conn, "seq": info.seq, "flags": info.flags, "payload": info.payload_len, "bytes": len,
    })
    .to_string()
}

pub fn trace_in(t_ms: u64, src: SocketAddr, bytes: &[u8]) -> String {
    let (kind, tid) = Packet::parse(bytes).map_or(("malformed", 0), |p| (kind_name(p.kind()), p.tid()));
    json!({
        "t_ms": t_ms, "dir": "in", "peer": src.to_string(), "type": kind,
        "tid": format!("{tid:016x}"), "bytes": bytes.len(),
    })
    .to_string()
}

fn wait_for(deadline: Option<u64>, now: u64) -> Duration {
    let d = deadline.map_or(IDLE_POLL, |d| Duration::from_millis(d.saturating_sub(now)));
    d.clamp(Duration::from_millis(1), IDLE_POLL)
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

/// Serves documents until `stop` is set. `on_rotation` sees each ephemeral
/// public key installed by epoch rotation.
pub fn serve(
    socket: &UdpSocket,
    server: &mut Server,
    docs: &mut DocServer,
    stop: &AtomicBool,
    on_rotation: &mut dyn FnMut([u8; 32]),
) -> io::Result<()> {
    let clock = Clock::new();
    let mut buf = vec![0u8; 64 * 1024];
    while !stop.load(Ordering::Relaxed) {
        let now = clock.now();
        socket.set_read_timeout(Some(wait_for(server.poll_timeout(), now)))?;
        match socket.recv_from(&mut buf) {
            Ok((n, from)) => server.handle_datagram(clock.now(), from, &buf[..n]),
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e),
        }
        let now = clock.now();
        if server.poll_timeout().is_some_and(|d| d <= now) {
            server.handle_timeout(now);
        }
        while let Some((h, ev)) = server.poll_event() {
            docs.on_event(server, h, &ev);
        }
        docs.pump(server);
        while let Some(k) = server.poll_rotation() {
            on_rotation(k);
        }
        while let Some(t) = server.poll_transmit(now) {
            // a lost datagram is recovered by retransmission
            let _ = socket.send_to(&t.payload, t.dst);
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Connect(#[from] ConnectError),
    #[error("no complete reply within {0:?}")]
    Timeout(Duration),
    #[error("malformed reply")]
    BadReply,
}

/// Fetches `path` in a fresh tunnel; the request rides in the first packet.
pub fn fetch(
    server: SocketAddr,
    server_eph: &[u8],
    path: &str,
    timeout: Duration,
    mut trace: Option<&mut dyn Write>,
) -> Result<Reply, FetchError> {
    let bind: SocketAddr = if server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("literal");
    let socket = UdpSocket::bind(bind)?;
    let clock = Clock::new();
    let mut seed = [0u8; 32];
    rand::rngs::OsRng.fill_bytes(&mut seed);
    let mut c = ClientTunnel::connect(TransportConfig::default(), server_eph, server, &request(path), clock.now(), seed)?;
    let conn = c.first_conn();
    let mut body = Vec::new();
    let mut buf = vec![0u8; MTU * 4];
    loop {
        let now = clock.now();
        if c.poll_timeout().is_some_and(|d| d <= now) {
            c.handle_timeout(now);
        }
        while let Some(t) = c.poll_transmit(now) {
            if let Some(w) = trace.as_mut() {
                writeln!(w, "{}", trace_out(now, t.dst, &t.info, t.payload.len()))?;
            }
            socket.send_to(&t.payload, t.dst)?;
        }
        body.extend(c.read(conn, usize::MAX));
        if c.peer_finished(conn) && c.readable_len(conn) == 0 {
            return parse_reply(&body).ok_or(FetchError::BadReply);
        }
        if now >= timeout.as_millis() as u64 {
            return Err(FetchError::Timeout(timeout));
        }
        socket.set_read_timeout(Some(wait_for(c.poll_timeout(), now)))?;
        match socket.recv_from(&mut buf) {
            Ok((n, from)) => {
                if let Some(w) = trace.as_mut() {
                    writeln!(w, "{}", trace_in(clock.now(), from, &buf[..n]))?;
                }
                c.handle_datagram(clock.now(), from, &buf[..n]);
            }
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e.into()),
        }
    }
}

/// Runs [`serve`] on a background thread.
pub struct ServerThread {
    pub local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl ServerThread {
    pub fn spawn(bind: SocketAddr, mut server: Server, mut docs: DocServer) -> io::Result<Self> {
        let socket = UdpSocket::bind(bind)?;
        let local_addr = socket.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let join = std::thread::spawn(move || serve(&socket, &mut server, &mut docs, &flag, &mut |_| {}));
        Ok(ServerThread { local_addr, stop, join: Some(join) })
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::Relaxed);
        match self.join.take() {
            Some(j) => j.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerThread {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
