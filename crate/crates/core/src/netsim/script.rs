//! JSON scripts of timed host actions, and the trace they produce.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::baseline::{baseline_handshake_model, Baseline, TLS_FOUR_RTT_FIGURE};
use super::sim::{HostId, NetStats, Sim, SimConfig, TraceEvent};
use crate::transport::app::{DocServer, Reply};
use crate::transport::{ServerConfig, TransportConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("script is not valid JSON: {0}")]
    Parse(String),
    #[error("action {index}: unknown host {host:?}")]
    UnknownHost { index: usize, host: String },
    #[error("action {index}: host {host:?} defined twice")]
    DuplicateHost { index: usize, host: String },
    #[error("action {index}: unknown action {action:?}")]
    UnknownAction { index: usize, action: String },
    #[error("action {index} ({action}): {reason}")]
    BadArgs { index: usize, action: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct Action {
    pub time: u64,
    pub host: String,
    pub action: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct ConfigJson {
    seed: u64,
    latency_ms: u64,
    loss: f64,
    reorder: f64,
    bandwidth: Option<u64>,
}

impl Default for ConfigJson {
    fn default() -> Self {
        let d = SimConfig::default();
        ConfigJson { seed: d.seed, latency_ms: d.latency_ms, loss: d.loss, reorder: d.reorder, bandwidth: d.bandwidth }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptJson {
    Bare(Vec<Action>),
    WithConfig {
        #[serde(default)]
        config: Option<ConfigJson>,
        actions: Vec<Action>,
    },
}

/// Parses either a bare action list or `{"config": {...}, "actions": [...]}`.
/// The embedded config, if any, replaces `base`.
pub fn parse_script(text: &str, base: SimConfig) -> Result<(SimConfig, Vec<Action>), ScriptError> {
    let parsed: ScriptJson = serde_json::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))?;
    Ok(match parsed {
        ScriptJson::Bare(a) => (base, a),
        ScriptJson::WithConfig { config, actions } => {
            let cfg = config.map_or(base, |c| SimConfig {
                seed: c.seed,
                latency_ms: c.latency_ms,
                loss: c.loss,
                reorder: c.reorder,
                bandwidth: c.bandwidth,
            });
            (cfg, actions)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowReport {
    pub client: String,
    pub server: String,
    pub path: String,
    pub started_at: u64,
    pub first_byte_at: Option<u64>,
    pub completed_at: Option<u64>,
    pub rtt_to_first_byte: Option<f64>,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub flows: Vec<FlowReport>,
    pub retransmits: BTreeMap<String, u64>,
    pub net: NetStats,
    pub baselines: BTreeMap<&'static str, f64>,
}

impl Trace {
    pub fn events_jsonl(&self) -> String {
        self.events.iter().map(|e| e.to_json() + "\n").collect()
    }
}

/// Deterministic test payload for connection `conn`.
pub fn pattern(conn: u32, len: usize) -> Vec<u8> {
    (0..len).map(|i| ((i as u64 * 31 + conn as u64 * 7) % 251) as u8).collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Client,
    Server,
}

fn arg_str<'a>(a: &'a Action, index: usize, key: &str) -> Result<&'a str, ScriptError> {
    a.args.get(key).and_then(Value::as_str).ok_or_else(|| ScriptError::BadArgs {
        index,
        action: a.action.clone(),
        reason: format!("missing string argument {key:?}"),
    })
}

fn arg_addr(a: &Action, index: usize) -> Result<SocketAddr, ScriptError> {
    arg_str(a, index, "addr")?.parse().map_err(|e| ScriptError::BadArgs {
        index,
        action: a.action.clone(),
        reason: format!("addr: {e}"),
    })
}

fn arg_u64(a: &Action, key: &str) -> Option<u64> {
    a.args.get(key).and_then(Value::as_u64)
}

fn arg_bool(a: &Action, key: &str) -> Option<bool> {
    a.args.get(key).and_then(Value::as_bool)
}

/// Checks that every action names a defined host of the right role.
fn validate(actions: &[(usize, &Action)]) -> Result<(), ScriptError> {
    let mut roles: HashMap<&str, Role> = HashMap::new();
    for &(index, a) in actions {
        let need = |roles: &HashMap<&str, Role>, name: &str, role: Role| match roles.get(name) {
            Some(&r) if r == role => Ok(()),
            Some(_) => Err(ScriptError::BadArgs { index, action: a.action.clone(), reason: format!("{name:?} has the wrong role") }),
            None => Err(ScriptError::UnknownHost { index, host: name.to_string() }),
        };
        match a.action.as_str() {
            "define" => {
                let role = match arg_str(a, index, "role")? {
                    "client" => Role::Client,
                    "server" => Role::Server,
                    other => {
                        return Err(ScriptError::BadArgs { index, action: a.action.clone(), reason: format!("unknown role {other:?}") })
                    }
                };
                arg_addr(a, index)?;
                if roles.insert(a.host.as_str(), role).is_some() {
                    return Err(ScriptError::DuplicateHost { index, host: a.host.clone() });
                }
            }
            "fetch" => {
                need(&roles, &a.host, Role::Client)?;
                need(&roles, arg_str(a, index, "server")?, Role::Server)?;
                arg_str(a, index, "path")?;
            }
            "connect" | "send" => {
                need(&roles, &a.host, Role::Client)?;
                need(&roles, arg_str(a, index, "server")?, Role::Server)?;
            }
            "set_load" => need(&roles, &a.host, Role::Server)?,
            "rekey" => need(&roles, &a.host, Role::Client)?,
            "change_address" => {
                if !roles.contains_key(a.host.as_str()) {
                    return Err(ScriptError::UnknownHost { index, host: a.host.clone() });
                }
                arg_addr(a, index)?;
            }
            other => return Err(ScriptError::UnknownAction { index, action: other.to_string() }),
        }
    }
    Ok(())
}

fn apply(sim: &mut Sim, a: &Action) {
    let id = |sim: &Sim, name: &str| sim.host_id(name).expect("validated");
    let host = a.host.clone();
    let outcome: Result<(), String> = match a.action.as_str() {
        "define" => {
            let addr: SocketAddr = a.args["addr"].as_str().and_then(|s| s.parse().ok()).expect("validated");
            let mut transport = TransportConfig::default();
            if let Some(b) = arg_u64(a, "rekey_bytes") {
                transport.rekey_bytes = b;
            }
            if let Some(ms) = arg_u64(a, "rekey_interval_ms") {
                transport.rekey_interval_ms = ms;
            }
            if a.args["role"] == "client" {
                sim.add_client(&host, addr, transport);
            } else {
                let cfg = ServerConfig {
                    transport,
                    puzzle_difficulty: arg_u64(a, "puzzle_difficulty").map_or(12, |d| d.min(30) as u8),
                    load_threshold: arg_u64(a, "load_threshold").map(|t| t as usize),
                    eph_epoch_ms: arg_u64(a, "eph_epoch_ms"),
                };
                let mut docs = DocServer::new();
                if let Some(map) = a.args.get("docs").and_then(Value::as_object) {
                    for (path, body) in map {
                        docs.insert(path.clone(), body.as_str().unwrap_or_default().as_bytes().to_vec());
                    }
                }
                let sid = sim.add_server(&host, addr, cfg, docs);
                sim.server(sid).sink = arg_bool(a, "sink").unwrap_or(false);
                if arg_bool(a, "load") == Some(true) {
                    sim.set_load(sid, true);
                }
            }
            Ok(())
        }
        "fetch" => {
            let (c, s) = (id(sim, &host), id(sim, a.args["server"].as_str().expect("validated")));
            sim.fetch(c, s, a.args["path"].as_str().expect("validated")).map_err(|e| e.to_string())
        }
        "connect" => {
            let (c, s) = (id(sim, &host), id(sim, a.args["server"].as_str().expect("validated")));
            sim.connect(c, s).map(drop).map_err(|e| e.to_string())
        }
        "send" => {
            let (c, s) = (id(sim, &host), id(sim, a.args["server"].as_str().expect("validated")));
            let conns = arg_u64(a, "conns").unwrap_or(1).max(1) as usize;
            let bytes = arg_u64(a, "bytes").unwrap_or(0) as usize;
            send_streams(sim, c, s, conns, bytes)
        }
        "set_load" => {
            let s = id(sim, &host);
            sim.set_load(s, arg_bool(a, "on").unwrap_or(true));
            Ok(())
        }
        "rekey" => {
            let c = id(sim, &host);
            let r = match sim.client(c).tunnel.as_mut() {
                Some(t) => t.rekey().map_err(|e| e.to_string()),
                None => Err("no tunnel".to_string()),
            };
            sim.service(c);
            r
        }
        "change_address" => {
            let h = id(sim, &host);
            let to = a.args["addr"].as_str().and_then(|s| s.parse().ok()).expect("validated");
            sim.change_address(h, to);
            Ok(())
        }
        _ => unreachable!("validated"),
    };
    if let Err(e) = outcome {
        sim.note(&host, format!("{} failed: {e}", a.action));
    }
}

/// Opens `conns` connections (the first one the tunnel's own) and streams
/// `bytes` of [`pattern`] data on each.
pub fn send_streams(sim: &mut Sim, client: HostId, server: HostId, conns: usize, bytes: usize) -> Result<(), String> {
    if sim.client_ref(client).tunnel.is_none() {
        let first = sim.connect(client, server).map_err(|e| e.to_string())?;
        sim.client(client).stream(first, pattern(first, bytes));
    } else {
        let t = sim.client(client).tunnel.as_mut().expect("checked");
        let c = t.open_conn();
        sim.client(client).stream(c, pattern(c, bytes));
    }
    for _ in 1..conns {
        let c = sim.client(client).tunnel.as_mut().expect("connected").open_conn();
        sim.client(client).stream(c, pattern(c, bytes));
    }
    sim.service(client);
    Ok(())
}

fn all_done(sim: &Sim) -> bool {
    sim.hosts().all(|(_, h)| match h {
        super::sim::Host::Client(c) => c.fetches_done() && c.streams_done() && c.tunnel.as_ref().is_none_or(|t| !t.has_unacked()),
        super::sim::Host::Server(_) => true,
    })
}

/// Extra virtual time allowed after the last action for flows to finish.
pub const SETTLE_MS: u64 = 600_000;

pub fn run_script(cfg: SimConfig, actions: &[Action]) -> Result<Trace, ScriptError> {
    let mut ordered: Vec<(usize, &Action)> = actions.iter().enumerate().collect();
    ordered.sort_by_key(|&(i, a)| (a.time, i));
    validate(&ordered)?;
    let latency = cfg.latency_ms;
    let mut sim = Sim::new(cfg);
    let last = ordered.last().map_or(0, |(_, a)| a.time);
    for (_, a) in ordered {
        let a = a.clone();
        sim.schedule(a.time, move |sim| apply(sim, &a));
    }
    sim.run_until(last);
    sim.run_while(last + SETTLE_MS, all_done);
    Ok(report(&sim, latency))
}

pub fn report(sim: &Sim, latency_ms: u64) -> Trace {
    let mut flows = Vec::new();
    let mut retransmits = BTreeMap::new();
    let servers: HashMap<SocketAddr, String> = sim
        .hosts()
        .filter(|(_, h)| matches!(h, super::sim::Host::Server(_)))
        .map(|(_, h)| (h.addr(), h.name().to_string()))
        .collect();
    for (_, h) in sim.hosts() {
        match h {
            super::sim::Host::Client(c) => {
                let server = c.tunnel.as_ref().and_then(|t| servers.get(&t.remote()).cloned()).unwrap_or_default();
                for f in &c.fetches {
                    let rtt = match (f.first_byte_at, latency_ms) {
                        (Some(t), l) if l > 0 => Some((t - f.started_at) as f64 / (2 * l) as f64),
                        _ => None,
                    };
                    flows.push(FlowReport {
                        client: c.name.clone(),
                        server: server.clone(),
                        path: f.path.clone(),
                        started_at: f.started_at,
                        first_byte_at: f.first_byte_at,
                        completed_at: f.completed_at,
                        rtt_to_first_byte: rtt,
                        status: match &f.reply {
                            Some(Reply::Found(_)) => "ok",
                            Some(Reply::NotFound) => "notfound",
                            Some(Reply::BadRequest) => "bad",
                            None if f.completed_at.is_some() => "malformed",
                            None => "incomplete",
                        },
                    });
                }
                let r = c.tunnel.as_ref().map_or(0, |t| t.stream_stats().retransmits);
                retransmits.insert(c.name.clone(), r);
            }
            super::sim::Host::Server(s) => {
                let r = s.server.handles().filter_map(|h| s.server.stream_stats(h)).map(|st| st.retransmits).sum();
                retransmits.insert(s.name.clone(), r);
            }
        }
    }
    let baselines = BTreeMap::from([
        (Baseline::Tcp.name(), baseline_handshake_model(Baseline::Tcp)),
        (Baseline::TcpTls12.name(), baseline_handshake_model(Baseline::TcpTls12)),
        ("tcp_tls_4rtt", TLS_FOUR_RTT_FIGURE),
    ]);
    Trace { events: sim.trace.clone(), flows, retransmits, net: sim.net_stats(), baselines }
}
