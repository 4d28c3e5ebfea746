//! Resolver, transport and simulator commands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use namelt_core::nameregistry::{resolve, DomainRecord};
use namelt_core::netsim::{parse_script, run_script, Sim, SimConfig};
use namelt_core::resolver::{client_resolve, serve, ChainSource, ClientConfig, ResolverConfig};
use namelt_core::transport::app::{DocServer, Reply};
use namelt_core::transport::udp;
use namelt_core::transport::{Server, ServerConfig};
use serde_json::{json, Value};
use x25519_dalek::PublicKey as XPublic;

use crate::chain::{log, open_chain, queue_eph_update};
use crate::config::CliConfig;
use crate::error::{Class, CliError, CliResult};
use crate::keyfile::{read_keypair, read_x25519};
use crate::output::Out;

/// Where the record was looked up.
pub enum Lookup {
    Resolver { timeout: Duration },
    Local,
}

struct Found {
    record: DomainRecord,
    raw: Vec<u8>,
    height: u64,
}

fn lookup(cfg: &CliConfig, fqdn: &str, how: &Lookup) -> CliResult<Found> {
    match how {
        Lookup::Local => {
            let node = open_chain(cfg)?;
            let r = resolve(node.state(), fqdn)?;
            Ok(Found { record: r.record, raw: r.raw, height: r.chain_height })
        }
        Lookup::Resolver { timeout } => {
            let missing = |what: &str| CliError::usage(format!("resolver {what} not configured"));
            let client = ClientConfig {
                server: cfg.resolver_endpoint.ok_or_else(|| missing("endpoint"))?,
                server_key: cfg.resolver_pubkey.ok_or_else(|| missing("pubkey"))?,
                pinned_fingerprint: cfg.fingerprint.ok_or_else(|| missing("fingerprint"))?,
            };
            let a = client_resolve(&client, fqdn, *timeout)?;
            Ok(Found { record: a.record, raw: a.raw, height: a.height })
        }
    }
}

pub fn resolve_cmd(cfg: &CliConfig, out: Out, fqdn: &str, how: Lookup) -> CliResult<()> {
    let f = lookup(cfg, fqdn, &how)?;
    let text = String::from_utf8_lossy(&f.raw).into_owned();
    let record: Value = serde_json::from_slice(&f.raw).unwrap_or(Value::String(text.clone()));
    out.emit(|| text, json!({"fqdn": fqdn, "height": f.height, "record": record}));
    Ok(())
}

pub fn resolverd(cfg: &CliConfig, listen: SocketAddr) -> CliResult<()> {
    let key = read_keypair(cfg.key_path()?)?;
    let source = ChainSource::file(cfg.chain_path()?, cfg.chain_config.clone());
    let public = key.public_key();
    let fingerprint = hex::encode(public.fingerprint());
    let handle = serve(ResolverConfig { listen, key, source })?;
    println!("listening {} pubkey {public} fingerprint {fingerprint}", handle.local_addr());
    std::io::stdout().flush()?;
    handle.wait();
    Ok(())
}

/// Loads every regular file under `dir` as `/<relative path>`; `index.html`
/// also answers for its directory.
pub fn load_docs(dir: &Path) -> CliResult<DocServer> {
    fn walk(root: &Path, dir: &Path, docs: &mut DocServer) -> CliResult<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let path = e.path();
            if e.file_type()?.is_dir() {
                walk(root, &path, docs)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root");
            let url = format!("/{}", rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            let body = fs::read(&path)?;
            if let Some(d) = url.strip_suffix("index.html") {
                docs.insert(d.to_string(), body.clone());
            }
            docs.insert(url, body);
        }
        Ok(())
    }
    let mut docs = DocServer::new();
    walk(dir, dir, &mut docs)?;
    Ok(docs)
}

pub struct ServeOpts {
    pub listen: SocketAddr,
    pub eph_key: PathBuf,
    pub docs: PathBuf,
    pub difficulty: u8,
    pub load: bool,
    pub load_threshold: Option<usize>,
    pub epoch_ms: Option<u64>,
    pub publish: Option<String>,
}

pub fn mlt_serve(cfg: &CliConfig, out: Out, o: ServeOpts) -> CliResult<()> {
    let eph = read_x25519(&o.eph_key)?;
    let docs = load_docs(&o.docs)?;
    let server_cfg = ServerConfig {
        puzzle_difficulty: o.difficulty.min(30),
        load_threshold: o.load_threshold,
        eph_epoch_ms: o.epoch_ms,
        ..ServerConfig::default()
    };
    let mut seed = [0u8; 32];
    rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut seed);
    let mut server = Server::new(server_cfg, eph, seed, 0);
    server.set_load(o.load);
    let socket = std::net::UdpSocket::bind(o.listen)?;
    let public = hex::encode(server.eph_public());
    println!("listening {} eph {public}", socket.local_addr()?);
    std::io::stdout().flush()?;
    let mut docs = docs;
    let stop = AtomicBool::new(false);
    let mut on_rotation = |k: [u8; 32]| {
        log(cfg, || format!("rotated eph key to {}", hex::encode(k)));
        if let Some(name) = &o.publish {
            if let Err(e) = queue_eph_update(cfg, out, name, &k, "0") {
                eprintln!("publishing rotated key failed: {e}");
            }
        }
    };
    udp::serve(&socket, &mut server, &mut docs, &stop, &mut on_rotation)?;
    Ok(())
}

pub struct FetchOpts {
    pub fqdn: String,
    pub path: String,
    pub lookup: Lookup,
    pub timeout: Duration,
    pub trace: Option<PathBuf>,
    /// Run both ends in the simulator with this server key and document root.
    pub sim: Option<(PathBuf, PathBuf)>,
    pub latency_ms: u64,
}

fn endpoint(record: &DomainRecord) -> CliResult<(SocketAddr, [u8; 32])> {
    let section = record.minimalt.as_ref().ok_or_else(|| CliError::new(Class::Validation, "record has no minimaLT section"))?;
    let ip = record.minimalt_ip().ok_or_else(|| CliError::new(Class::Validation, "record has no usable IPv4 address"))?;
    Ok((SocketAddr::new(IpAddr::V4(ip), section.port), section.eph_key.0))
}

fn deliver(out: Out, path: &str, reply: Reply) -> CliResult<()> {
    match reply {
        Reply::Found(body) => {
            if out.json {
                println!("{}", json!({"path": path, "status": "ok", "body": String::from_utf8_lossy(&body)}));
            } else {
                std::io::stdout().write_all(&body)?;
            }
            Ok(())
        }
        Reply::NotFound => Err(CliError::new(Class::NotFound, format!("{path}: document not found"))),
        Reply::BadRequest => Err(CliError::new(Class::Other, "server rejected the request")),
    }
}

pub fn mlt_fetch(cfg: &CliConfig, out: Out, o: FetchOpts) -> CliResult<()> {
    let found = lookup(cfg, &o.fqdn, &o.lookup)?;
    let (addr, eph) = endpoint(&found.record)?;
    log(cfg, || format!("{} -> {addr} eph {}", o.fqdn, hex::encode(eph)));
    let reply = match &o.sim {
        None => {
            let mut trace = o.trace.as_ref().map(File::create).transpose()?.map(BufWriter::new);
            let r = udp::fetch(addr, &eph, &o.path, o.timeout, trace.as_mut().map(|w| w as &mut dyn Write));
            if let Some(mut w) = trace {
                w.flush()?;
            }
            r?
        }
        Some((server_key, docs)) => sim_fetch(addr, &eph, server_key, docs, &o)?,
    };
    deliver(out, &o.path, reply)
}

/// Address of the simulated client; nothing else lives in TEST-NET-1.
const SIM_CLIENT: &str = "192.0.2.1:40000";

fn sim_fetch(addr: SocketAddr, eph: &[u8; 32], server_key: &Path, docs: &Path, o: &FetchOpts) -> CliResult<Reply> {
    let secret = read_x25519(server_key)?;
    if XPublic::from(&secret).as_bytes() != eph {
        eprintln!("warning: the published ephemeral key does not match the simulated server's; the request will be dropped");
    }
    let mut sim = Sim::new(SimConfig { latency_ms: o.latency_ms, ..SimConfig::default() });
    sim.add_server_with_key("server", addr, ServerConfig::default(), secret, load_docs(docs)?);
    let client = sim.add_client("client", SIM_CLIENT.parse().expect("literal"), Default::default());
    let seed = sim.seed();
    sim.client(client).fetch(0, addr, eph, &o.path, seed)?;
    sim.service(client);
    let done = sim.run_while(o.timeout.as_millis() as u64, |s| s.client_ref(client).fetches_done());
    if let Some(p) = &o.trace {
        fs::write(p, sim.trace_jsonl())?;
    }
    if !done {
        return Err(CliError::new(Class::Timeout, format!("no reply within {:?} of simulated time", o.timeout)));
    }
    let f = &sim.client_ref(client).fetches[0];
    f.reply.clone().ok_or_else(|| CliError::new(Class::Other, "malformed reply"))
}

pub fn sim_bench(out: Out, script: &Path, base: SimConfig, trace: Option<&Path>) -> CliResult<()> {
    let text = fs::read_to_string(script).map_err(|e| CliError::new(Class::Io, format!("{}: {e}", script.display())))?;
    let (cfg, actions) = parse_script(&text, base)?;
    let t = run_script(cfg, &actions)?;
    if let Some(p) = trace {
        fs::write(p, t.events_jsonl())?;
    }
    if out.json {
        println!("{}", json!({"minimalt": t.flows, "baselines": t.baselines, "retransmits": t.retransmits, "net": t.net}));
        return Ok(());
    }
    println!("{:<40} {:>18}", "flow", "rtt_to_first_byte");
    for f in &t.flows {
        let label = format!("minimalt {}->{} {}", f.client, f.server, f.path);
        let v = f.rtt_to_first_byte.map_or("-".to_string(), |r| format!("{r:.1}"));
        println!("{label:<40} {v:>18}");
    }
    for (name, v) in &t.baselines {
        println!("{:<40} {:>18}", format!("{name} (model)"), format!("{v:.1}"));
    }
    Ok(())
}
