//! UDP resolver daemon.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime};

use thiserror::Error;

use crate::chaincore::{load_chain, ChainConfig, ChainService, ChainState, KeyPair};
use crate::nameregistry::{resolve, ResolveError};

use super::wire::{Query, Response, Status, MAX_DATAGRAM};

#[derive(Debug, Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindError {
    pub addr: SocketAddr,
    #[source]
    pub source: io::Error,
}

/// Where answers come from. Every query reads the latest state.
#[derive(Clone)]
pub enum ChainSource {
    /// A chain file, reloaded whenever its modification time or size changes.
    File { path: PathBuf, config: ChainConfig, cache: Arc<Mutex<Option<FileSnapshot>>> },
    Service(ChainService),
    Fixed(Arc<ChainState>),
}

pub struct FileSnapshot {
    stamp: (SystemTime, u64),
    state: Arc<ChainState>,
}

impl ChainSource {
    pub fn file(path: impl Into<PathBuf>, config: ChainConfig) -> Self {
        ChainSource::File { path: path.into(), config, cache: Arc::new(Mutex::new(None)) }
    }

    pub fn snapshot(&self) -> Option<Arc<ChainState>> {
        match self {
            ChainSource::Service(s) => Some(s.snapshot()),
            ChainSource::Fixed(s) => Some(s.clone()),
            ChainSource::File { path, config, cache } => {
                let mut cache = cache.lock().expect("source cache");
                let meta = std::fs::metadata(path).ok()?;
                let stamp = (meta.modified().ok()?, meta.len());
                if let Some(c) = cache.as_ref().filter(|c| c.stamp == stamp) {
                    return Some(c.state.clone());
                }
                match load_chain(path, config.clone()) {
                    Ok(node) => {
                        let state = Arc::new(node.state().clone());
                        *cache = Some(FileSnapshot { stamp, state: state.clone() });
                        Some(state)
                    }
                    // a writer mid-rename: keep serving the previous snapshot
                    Err(_) => cache.as_ref().map(|c| c.state.clone()),
                }
            }
        }
    }
}

pub struct ResolverConfig {
    pub listen: SocketAddr,
    pub key: KeyPair,
    pub source: ChainSource,
}

/// Answers one datagram. `None` means drop silently.
pub fn handle_datagram(key: &KeyPair, state: &ChainState, bytes: &[u8]) -> Option<Vec<u8>> {
    let q = Query::decode(bytes)?;
    let (status, record) = match resolve(state, &q.fqdn) {
        Ok(r) => (Status::Ok, r.raw),
        Err(ResolveError::NotFound) => (Status::NotFound, Vec::new()),
        Err(ResolveError::Expired) => (Status::Expired, Vec::new()),
        Err(e) => (Status::Error, e.to_string().into_bytes()),
    };
    Some(Response::sign(key, q.qid, status, record, state.height).encode())
}

pub struct ResolverHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ResolverHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the receive loop exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ResolverHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

pub fn serve(config: ResolverConfig) -> Result<ResolverHandle, BindError> {
    let bind_err = |source| BindError { addr: config.listen, source };
    let socket = UdpSocket::bind(config.listen).map_err(bind_err)?;
    socket.set_read_timeout(Some(Duration::from_millis(50))).map_err(bind_err)?;
    let addr = socket.local_addr().map_err(bind_err)?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let ResolverConfig { key, source, .. } = config;
    let thread = std::thread::spawn(move || {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !flag.load(Ordering::SeqCst) {
            let (n, peer) = match socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                Err(_) => continue,
            };
            let Some(state) = source.snapshot() else { continue };
            if let Some(reply) = handle_datagram(&key, &state, &buf[..n]) {
                let _ = socket.send_to(&reply, peer);
            }
        }
    });
    Ok(ResolverHandle { addr, stop, thread: Some(thread) })
}
