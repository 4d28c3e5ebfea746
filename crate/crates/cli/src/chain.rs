//! Wallet and ledger commands. Pending transactions wait in `<chain>.pool`,
//! one JSON transaction per line, until a `mine` includes them.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use namelt_core::chaincore::{
    load_chain, save_chain, sign_transaction, validate_transaction, Address, Amount, KeyPair, Node, Transaction,
};
use namelt_core::nameregistry::{register, update_eph_key};
use rand::rngs::OsRng;
use serde_json::json;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use crate::config::CliConfig;
use crate::error::{Class, CliError, CliResult};
use crate::keyfile::{read_keypair, read_x25519, write_secret};
use crate::output::Out;

pub fn pool_path(chain: &Path) -> PathBuf {
    let mut s = chain.as_os_str().to_owned();
    s.push(".pool");
    s.into()
}

pub fn open_chain(cfg: &CliConfig) -> CliResult<Node> {
    let path = cfg.chain_path()?;
    if path.exists() {
        Ok(load_chain(path, cfg.chain_config.clone())?)
    } else {
        Ok(Node::new(cfg.chain_config.clone()))
    }
}

fn load_pool(path: &Path) -> CliResult<Vec<Transaction>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::new(Class::Io, format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn save_pool(path: &Path, txs: &[Transaction]) -> CliResult<()> {
    let mut out = Vec::new();
    for tx in txs {
        serde_json::to_writer(&mut out, tx).map_err(std::io::Error::from)?;
        out.push(b'\n');
    }
    let tmp = path.with_extension("pool.tmp");
    fs::write(&tmp, out)?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Next nonce for `key`, counting transactions already waiting in the pool.
fn next_nonce(node: &Node, pool: &[Transaction], key: &KeyPair) -> u64 {
    let mine = key.public_key();
    let confirmed = node.state().nonce(&node.state().address_of(&mine));
    pool.iter().filter(|t| t.sender_pubkey.as_ref() == Some(&mine)).map(|t| t.nonce).fold(confirmed, u64::max) + 1
}

/// Checks `tx` against the tip when it is next in line, then queues it.
fn queue(cfg: &CliConfig, out: Out, what: &str, node: &Node, mut pool: Vec<Transaction>, tx: Transaction) -> CliResult<()> {
    let sender = tx.sender_pubkey.as_ref().expect("user transactions have a sender");
    if tx.nonce == node.state().nonce(&node.state().address_of(sender)) + 1 {
        validate_transaction(node.state(), &tx)?;
    }
    report_tx(out, what, &tx);
    pool.push(tx);
    save_pool(&pool_path(cfg.chain_path()?), &pool)
}

fn prepare(cfg: &CliConfig) -> CliResult<(Node, Vec<Transaction>, KeyPair)> {
    let node = open_chain(cfg)?;
    let pool = load_pool(&pool_path(cfg.chain_path()?))?;
    let key = read_keypair(cfg.key_path()?)?;
    Ok((node, pool, key))
}

fn report_tx(out: Out, what: &str, tx: &Transaction) {
    out.emit(
        || format!("queued {what} {} (nonce {})", tx.hash(), tx.nonce),
        json!({"queued": what, "tx": tx.hash().to_string(), "nonce": tx.nonce}),
    );
}

pub fn keygen(cfg: &CliConfig, out: Out, kind: &str, path: &Path, force: bool) -> CliResult<()> {
    match kind {
        "secp256k1" => {
            let k = KeyPair::generate(&mut OsRng);
            write_secret(path, &k.private_bytes(), force)?;
            let pk = k.public_key();
            let addr = k.address(cfg.chain_config.address_version);
            out.emit(
                || format!("address {addr}\npubkey {pk}\nfingerprint {}", hex::encode(pk.fingerprint())),
                json!({"kind": kind, "address": addr.to_string(), "pubkey": pk.to_string(), "fingerprint": hex::encode(pk.fingerprint())}),
            );
        }
        "x25519" => {
            let s = StaticSecret::random_from_rng(OsRng);
            write_secret(path, &s.to_bytes(), force)?;
            let p = hex::encode(XPublic::from(&s).as_bytes());
            out.emit(|| format!("public {p}"), json!({"kind": kind, "public": p}));
        }
        other => return Err(CliError::usage(format!("unknown key kind {other:?}; use secp256k1 or x25519"))),
    }
    Ok(())
}

pub fn mine(cfg: &CliConfig, out: Out, blocks: u64, to: Option<&str>, max_txs: usize) -> CliResult<()> {
    let chain = cfg.chain_path()?.to_path_buf();
    let mut node = open_chain(cfg)?;
    let pool_file = pool_path(&chain);
    let mut pool = load_pool(&pool_file)?;
    let recipient: Address = match to {
        Some(a) => a.parse().map_err(|e| CliError::usage(format!("--to: {e}")))?,
        None => read_keypair(cfg.key_path()?)?.address(cfg.chain_config.address_version),
    };
    for _ in 0..blocks {
        for tx in &pool {
            // not yet valid or conflicting ones wait for a later block
            let _ = node.submit_transaction(tx.clone());
        }
        let hash = node.mine_block(recipient, max_txs, u64::MAX).map_err(|e| CliError::new(Class::Other, e.to_string()))?;
        let included: HashSet<_> = node.block(&hash).expect("just mined").body().iter().map(Transaction::hash).collect();
        let state = node.state();
        pool.retain(|t| {
            let sender = t.sender_pubkey.as_ref().map(|p| state.address_of(p));
            !included.contains(&t.hash()) && sender.is_some_and(|s| t.nonce > state.nonce(&s))
        });
        out.emit(
            || format!("block {} {hash} ({} txs)", node.height(), included.len()),
            json!({"height": node.height(), "hash": hash.to_string(), "txs": included.len()}),
        );
    }
    save_chain(&node, &chain)?;
    save_pool(&pool_file, &pool)?;
    Ok(())
}

pub fn send(cfg: &CliConfig, out: Out, to: &str, amount: &str, fee: &str) -> CliResult<()> {
    let (node, pool, key) = prepare(cfg)?;
    let recipient: Address = to.parse().map_err(|e| CliError::usage(format!("--to: {e}")))?;
    let amount: Amount = amount.parse().map_err(|e| CliError::usage(format!("amount: {e}")))?;
    let fee: Amount = fee.parse().map_err(|e| CliError::usage(format!("--fee: {e}")))?;
    let nonce = next_nonce(&node, &pool, &key);
    let tx = sign_transaction(Transaction::transfer(key.public_key(), recipient, amount, fee, nonce), &key)?;
    queue(cfg, out, "transfer", &node, pool, tx)
}

pub fn register_name(cfg: &CliConfig, out: Out, name: &str, file: &Path, fee: &str) -> CliResult<()> {
    let (node, pool, key) = prepare(cfg)?;
    let record = fs::read(file).map_err(|e| CliError::new(Class::Io, format!("{}: {e}", file.display())))?;
    let fee: Amount = fee.parse().map_err(|e| CliError::usage(format!("--fee: {e}")))?;
    let nonce = next_nonce(&node, &pool, &key);
    let tx = register(name, &record, &key, fee, nonce)?;
    queue(cfg, out, "registration", &node, pool, tx)
}

pub fn update_eph(cfg: &CliConfig, out: Out, name: &str, eph_key: &Path, fee: &str) -> CliResult<()> {
    let public = XPublic::from(&read_x25519(eph_key)?).to_bytes();
    queue_eph_update(cfg, out, name, &public, fee)
}

pub fn queue_eph_update(cfg: &CliConfig, out: Out, name: &str, public: &[u8; 32], fee: &str) -> CliResult<()> {
    let (node, pool, key) = prepare(cfg)?;
    let fee: Amount = fee.parse().map_err(|e| CliError::usage(format!("--fee: {e}")))?;
    let nonce = next_nonce(&node, &pool, &key);
    let tx = update_eph_key(name, public, &key, fee, nonce)?;
    queue(cfg, out, "eph-update", &node, pool, tx)
}

/// Appends a line to the log on stderr when verbose.
pub fn log(cfg: &CliConfig, msg: impl FnOnce() -> String) {
    if cfg.verbosity > 0 {
        let _ = writeln!(std::io::stderr(), "{}", msg());
    }
}
