//! Chain file: one JSON block per line, genesis first.
//!
//! Each line carries the block hash next to the header so that an edit to any
//! stored block, including the last one, is detected when the file is loaded.
//! Hashing always uses the canonical binary encoding, never this JSON.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::block::{Block, BlockHeader};
use super::node::Node;
use super::state::ChainConfig;
use super::tx::Transaction;
use crate::codec::Hash256;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("corrupt chain file at line {line}: {reason}")]
    CorruptFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Line {
    hash: Hash256,
    header: BlockHeader,
    txs: Vec<Transaction>,
}

pub fn save_chain(node: &Node, path: &Path) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for block in node.main_chain() {
            let line = Line { hash: block.hash(), header: block.header.clone(), txs: block.transactions.clone() };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Rebuilds a node by replaying the file. A final line without a trailing
/// newline that fails to parse is treated as a torn write and skipped.
pub fn load_chain(path: &Path, config: ChainConfig) -> Result<Node, StoreError> {
    let text = fs::read_to_string(path)?;
    let mut node = Node::new(config);
    let ends_clean = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let corrupt = |line: usize, reason: String| StoreError::CorruptFile { line: line + 1, reason };
    for (i, raw) in lines.iter().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parsed: Line = match serde_json::from_str(raw) {
            Ok(l) => l,
            Err(_) if i + 1 == lines.len() && !ends_clean => break,
            Err(e) => return Err(corrupt(i, e.to_string())),
        };
        let block = Block { header: parsed.header, transactions: parsed.txs };
        if block.hash() != parsed.hash {
            return Err(corrupt(i, "stored hash does not match block contents".into()));
        }
        if i == 0 {
            if parsed.hash != node.genesis_hash() {
                return Err(corrupt(i, "genesis does not match chain config".into()));
            }
            continue;
        }
        if block.header.prev_hash != node.tip() {
            return Err(corrupt(i, "hash chain break".into()));
        }
        node.submit_block(block).map_err(|e| corrupt(i, e.to_string()))?;
    }
    Ok(node)
}
