//! `namelt`: wallet, miner, resolver daemon, transport server and client,
//! and the simulator bench.

mod chain;
mod config;
mod error;
mod keyfile;
mod net;
mod output;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use namelt_core::netsim::SimConfig;

use config::{parse_endpoint, parse_fingerprint, parse_pubkey, CliConfig, CONFIG_ENV};
use error::CliResult;
use net::{FetchOpts, Lookup, ServeOpts};
use output::Out;

#[derive(Parser)]
#[command(name = "namelt", version, about = "Name ledger, pinned resolver and 0-RTT transport tools")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    chain: Option<PathBuf>,
    /// secp256k1 key file (wallet, or resolver identity for `resolverd`).
    #[arg(long, global = true)]
    key: Option<PathBuf>,
    #[arg(long, global = true, value_name = "ADDR:PORT")]
    resolver: Option<String>,
    /// Resolver public key, SEC1 hex.
    #[arg(long, global = true)]
    resolver_key: Option<String>,
    /// Pinned SHA-256 fingerprint of the resolver key, hex.
    #[arg(long, global = true)]
    fingerprint: Option<String>,
    /// One JSON object per output line.
    #[arg(long, global = true)]
    json: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Writes a new private key file.
    Keygen {
        #[arg(long, default_value = "secp256k1", value_parser = ["secp256k1", "x25519"])]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Mines blocks on the local chain, including pooled transactions.
    Mine {
        #[arg(long, default_value_t = 1)]
        blocks: u64,
        /// Coinbase recipient; defaults to the key's address.
        #[arg(long)]
        to: Option<String>,
        #[arg(long, default_value_t = 1000)]
        max_txs: usize,
    },
    /// Queues a coin transfer.
    Send {
        #[arg(long)]
        to: String,
        #[arg(long)]
        amount: String,
        #[arg(long, default_value = "0")]
        fee: String,
    },
    /// Queues a name registration.
    Register {
        name: String,
        file: PathBuf,
        #[arg(long, default_value = "0")]
        fee: String,
    },
    /// Queues an update publishing a new transport ephemeral key.
    UpdateEph {
        name: String,
        #[arg(long)]
        eph_key: PathBuf,
        #[arg(long, default_value = "0")]
        fee: String,
    },
    /// Looks up a `.bit` name through the pinned resolver.
    Resolve {
        fqdn: String,
        /// Read the local chain file instead.
        #[arg(long)]
        local: bool,
        #[arg(long, default_value_t = 1000)]
        timeout_ms: u64,
    },
    /// Serves signed lookups from a chain file.
    Resolverd {
        #[arg(long, default_value = "127.0.0.1:5353")]
        listen: String,
    },
    /// Serves documents over the encrypted transport.
    MltServe {
        #[arg(long, default_value = "0.0.0.0:4433")]
        listen: String,
        #[arg(long)]
        eph_key: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long, default_value_t = 12)]
        difficulty: u8,
        /// Demand puzzles from every new client.
        #[arg(long)]
        load: bool,
        /// Demand puzzles once this many tunnels are open.
        #[arg(long)]
        load_threshold: Option<usize>,
        /// Rotate the ephemeral key this often.
        #[arg(long)]
        epoch_ms: Option<u64>,
        /// Queue an eph-key update for this name at each rotation.
        #[arg(long)]
        publish: Option<String>,
    },
    /// Resolves a name and fetches a document with the request in the first packet.
    MltFetch {
        fqdn: String,
        path: String,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        /// Resolve from the local chain file instead of the resolver.
        #[arg(long)]
        local: bool,
        /// Run the exchange in the simulator against an in-process server.
        #[arg(long, requires_all = ["sim_eph_key", "sim_docs"])]
        sim: bool,
        #[arg(long)]
        sim_eph_key: Option<PathBuf>,
        #[arg(long)]
        sim_docs: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        latency_ms: u64,
    },
    /// Runs a simulator script and prints round trips to first byte.
    SimBench {
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        latency_ms: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn config(cli: &Cli) -> CliResult<CliConfig> {
    let mut cfg = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(p) = &cli.chain {
        cfg.chain = Some(p.clone());
    }
    if let Some(p) = &cli.key {
        cfg.key = Some(p.clone());
    }
    if let Some(r) = &cli.resolver {
        cfg.resolver_endpoint = Some(parse_endpoint(r)?);
    }
    if let Some(k) = &cli.resolver_key {
        cfg.resolver_pubkey = Some(parse_pubkey(k)?);
    }
    if let Some(f) = &cli.fingerprint {
        cfg.fingerprint = Some(parse_fingerprint(f)?);
    }
    cfg.verbosity = cfg.verbosity.max(cli.verbose);
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = config(&cli)?;
    let out = Out { json: cli.json };
    match cli.cmd {
        Cmd::Keygen { kind, out: path, force } => chain::keygen(&cfg, out, &kind, &path, force),
        Cmd::Mine { blocks, to, max_txs } => chain::mine(&cfg, out, blocks, to.as_deref(), max_txs),
        Cmd::Send { to, amount, fee } => chain::send(&cfg, out, &to, &amount, &fee),
        Cmd::Register { name, file, fee } => chain::register_name(&cfg, out, &name, &file, &fee),
        Cmd::UpdateEph { name, eph_key, fee } => chain::update_eph(&cfg, out, &name, &eph_key, &fee),
        Cmd::Resolve { fqdn, local, timeout_ms } => {
            let how = if local { Lookup::Local } else { Lookup::Resolver { timeout: Duration::from_millis(timeout_ms) } };
            net::resolve_cmd(&cfg, out, &fqdn, how)
        }
        Cmd::Resolverd { listen } => net::resolverd(&cfg, parse_endpoint(&listen)?),
        Cmd::MltServe { listen, eph_key, docs, difficulty, load, load_threshold, epoch_ms, publish } => {
            let listen: SocketAddr = parse_endpoint(&listen)?;
            net::mlt_serve(&cfg, out, ServeOpts { listen, eph_key, docs, difficulty, load, load_threshold, epoch_ms, publish })
        }
        Cmd::MltFetch { fqdn, path, trace, timeout_ms, local, sim, sim_eph_key, sim_docs, latency_ms } => {
            let timeout = Duration::from_millis(timeout_ms);
            let lookup = if local { Lookup::Local } else { Lookup::Resolver { timeout: Duration::from_millis(1000) } };
            let sim = if sim { sim_eph_key.zip(sim_docs) } else { None };
            net::mlt_fetch(&cfg, out, FetchOpts { fqdn, path, lookup, timeout, trace, sim, latency_ms })
        }
        Cmd::SimBench { script, seed, latency_ms, trace } => {
            let base = SimConfig { seed, latency_ms, ..SimConfig::default() };
            net::sim_bench(out, &script, base, trace.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
