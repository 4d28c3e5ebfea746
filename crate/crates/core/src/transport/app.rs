//! A minimal document service over tunnel connections: one `GET <path>\n`
//! per connection, answered with `OK\n<body>` or `NOTFOUND\n`, then FIN.

use std::collections::{BTreeMap, HashMap};

use super::server::{Server, TunnelHandle};
use super::tunnel::Event;

const MAX_REQUEST: usize = 1024;

pub fn request(path: &str) -> Vec<u8> {
    format!("GET {path}\n").into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Found(Vec<u8>),
    NotFound,
    BadRequest,
}

/// Parses a complete response.
pub fn parse_reply(bytes: &[u8]) -> Option<Reply> {
    if let Some(body) = bytes.strip_prefix(b"OK\n") {
        Some(Reply::Found(body.to_vec()))
    } else if bytes == b"NOTFOUND\n" {
        Some(Reply::NotFound)
    } else if bytes == b"BAD\n" {
        Some(Reply::BadRequest)
    } else {
        None
    }
}

#[derive(Default)]
pub struct DocServer {
    docs: BTreeMap<String, Vec<u8>>,
    requests: HashMap<(TunnelHandle, u32), Vec<u8>>,
    /// Responses not yet fully accepted by the send buffer.
    outgoing: BTreeMap<(TunnelHandle, u32), (Vec<u8>, usize)>,
    pub served: u64,
}

impl DocServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, body: Vec<u8>) {
        self.docs.insert(path.into(), body);
    }

    pub fn on_event(&mut self, server: &mut Server, h: TunnelHandle, ev: &Event) {
        match *ev {
            Event::Readable(conn) | Event::Finished(conn) => {
                let key = (h, conn);
                if self.outgoing.contains_key(&key) {
                    server.read(h, conn, usize::MAX);
                    return;
                }
                let buf = self.requests.entry(key).or_default();
                buf.extend(server.read(h, conn, usize::MAX));
                let reply = match buf.iter().position(|&b| b == b'\n') {
                    Some(end) => answer(&self.docs, &buf[..end]),
                    None if buf.len() > MAX_REQUEST || server.peer_finished(h, conn) => b"BAD\n".to_vec(),
                    None => return,
                };
                self.requests.remove(&key);
                self.served += 1;
                self.outgoing.insert(key, (reply, 0));
            }
            Event::Closed => {
                self.requests.retain(|k, _| k.0 != h);
                self.outgoing.retain(|k, _| k.0 != h);
            }
            _ => {}
        }
        self.pump(server);
    }

    /// Moves pending response bytes into send buffers as space frees up.
    pub fn pump(&mut self, server: &mut Server) {
        let mut done = Vec::new();
        for (&(h, conn), (body, sent)) in self.outgoing.iter_mut() {
            match server.send(h, conn, &body[*sent..]) {
                Ok(n) => *sent += n,
                Err(_) => {
                    done.push((h, conn));
                    continue;
                }
            }
            if *sent == body.len() {
                let _ = server.finish(h, conn);
                done.push((h, conn));
            }
        }
        for k in done {
            self.outgoing.remove(&k);
        }
    }

    pub fn has_backlog(&self) -> bool {
        !self.outgoing.is_empty()
    }
}

fn answer(docs: &BTreeMap<String, Vec<u8>>, line: &[u8]) -> Vec<u8> {
    let Some(path) = std::str::from_utf8(line).ok().and_then(|l| l.strip_prefix("GET ")) else {
        return b"BAD\n".to_vec();
    };
    match docs.get(path.trim_end_matches('\r')) {
        Some(body) => [b"OK\n".as_slice(), body].concat(),
        None => b"NOTFOUND\n".to_vec(),
    }
}
