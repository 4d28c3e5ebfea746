//! Block acceptance, longest-chain fork choice and reorganization.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::block::{compute_tx_root, Block, BlockHeader};
use super::keys::Address;
use super::mempool::{Mempool, MempoolError};
use super::pow::{mine, pow_check, MineError};
use super::schedule::block_reward;
use super::state::{check_coinbase, ChainConfig, ChainState, Undo, ValidationError};
use super::tx::Transaction;
use crate::codec::Hash256;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RejectReason {
    #[error("proof of work does not meet the chain target")]
    BadPoW,
    #[error("parent block is unknown")]
    UnknownParent,
    #[error("invalid transaction: {0}")]
    InvalidTx(ValidationError),
    #[error("coinbase is missing or pays the wrong amount")]
    BadCoinbase,
    #[error("height does not follow the parent")]
    BadHeight,
    #[error("tx_root does not match the transactions")]
    BadTxRoot,
    #[error("block already known")]
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reorg {
    pub fork_height: u64,
    pub disconnected: Vec<Hash256>,
    pub connected: Vec<Hash256>,
    /// Transactions from abandoned blocks that re-entered the mempool.
    pub returned: Vec<Hash256>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accepted {
    pub new_tip: bool,
    pub reorg: Option<Reorg>,
}

struct Entry {
    block: Block,
    invalid: bool,
}

/// One node's view: every block it has heard of, the live state at its tip,
/// and its mempool.
pub struct Node {
    state: ChainState,
    blocks: HashMap<Hash256, Entry>,
    /// `main[h]` is the hash of the tip chain's block at height `h`.
    main: Vec<Hash256>,
    undo: HashMap<Hash256, Undo>,
    mempool: Mempool,
}

/// The fixed first block: timestamp from config, one coinbase to the burn address.
pub fn genesis_block(config: &ChainConfig) -> Block {
    let txs = vec![Transaction::coinbase(config.burn_address(), block_reward(0), 0)];
    let block = Block {
        header: BlockHeader {
            prev_hash: Hash256::ZERO,
            tx_root: compute_tx_root(&txs),
            height: 0,
            timestamp: config.genesis_timestamp,
            target: config.target,
            challenge_nonce: 0,
        },
        transactions: txs,
    };
    mine(block, u64::MAX).expect("genesis target must be satisfiable")
}

impl Node {
    pub fn new(config: ChainConfig) -> Self {
        let genesis = genesis_block(&config);
        let mut state = ChainState::empty(config);
        let undo = state.apply_block(&genesis).expect("genesis is valid");
        let hash = genesis.hash();
        Node {
            state,
            blocks: HashMap::from([(hash, Entry { block: genesis, invalid: false })]),
            main: vec![hash],
            undo: HashMap::from([(hash, undo)]),
            mempool: Mempool::new(),
        }
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn config(&self) -> &ChainConfig {
        &self.state.config
    }

    pub fn tip(&self) -> Hash256 {
        self.state.tip_hash
    }

    pub fn height(&self) -> u64 {
        self.state.height
    }

    pub fn genesis_hash(&self) -> Hash256 {
        self.main[0]
    }

    pub fn mempool(&self) -> &Mempool {
        &self.mempool
    }

    pub fn block(&self, hash: &Hash256) -> Option<&Block> {
        self.blocks.get(hash).map(|e| &e.block)
    }

    pub fn known_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Blocks of the tip chain, genesis first.
    pub fn main_chain(&self) -> impl Iterator<Item = &Block> {
        self.main.iter().map(|h| &self.blocks[h].block)
    }

    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<Hash256, MempoolError> {
        self.mempool.insert(&self.state, tx)
    }

    fn on_main_chain(&self, hash: &Hash256, height: u64) -> bool {
        self.main.get(height as usize) == Some(hash)
    }

    pub fn submit_block(&mut self, block: Block) -> Result<Accepted, RejectReason> {
        let hash = block.hash();
        if self.blocks.contains_key(&hash) {
            return Err(RejectReason::Duplicate);
        }
        if block.header.target != self.state.config.target || !pow_check(&block.header) {
            return Err(RejectReason::BadPoW);
        }
        let parent = self.blocks.get(&block.header.prev_hash).ok_or(RejectReason::UnknownParent)?;
        if parent.invalid {
            return Err(RejectReason::InvalidTx(ValidationError::Malformed("descends from an invalid block")));
        }
        if block.height() != parent.block.height() + 1 {
            return Err(RejectReason::BadHeight);
        }
        if !block.tx_root_matches() {
            return Err(RejectReason::BadTxRoot);
        }
        check_coinbase(&block).map_err(|_| RejectReason::BadCoinbase)?;

        let extends_tip = block.header.prev_hash == self.state.tip_hash;
        let longer = block.height() > self.state.height;
        if extends_tip {
            let undo = self.state.apply_block(&block).map_err(RejectReason::InvalidTx)?;
            self.undo.insert(hash, undo);
            self.main.push(hash);
            for tx in block.body() {
                self.mempool.remove(&tx.hash());
            }
            self.blocks.insert(hash, Entry { block, invalid: false });
            self.mempool.revalidate(&self.state);
            return Ok(Accepted { new_tip: true, reorg: None });
        }
        self.blocks.insert(hash, Entry { block, invalid: false });
        if !longer {
            // Equal or shorter fork: first seen keeps the tip.
            return Ok(Accepted { new_tip: false, reorg: None });
        }
        self.reorganize(hash)
    }

    fn reorganize(&mut self, new_tip: Hash256) -> Result<Accepted, RejectReason> {
        let mut branch = Vec::new();
        let mut cursor = new_tip;
        loop {
            let b = &self.blocks[&cursor].block;
            if self.on_main_chain(&cursor, b.height()) {
                break;
            }
            branch.push(cursor);
            cursor = b.header.prev_hash;
        }
        branch.reverse();
        let fork_height = self.blocks[&cursor].block.height();
        let old_height = self.state.height;

        let disconnected: Vec<Hash256> = self.main.drain(fork_height as usize + 1..).collect();
        for h in disconnected.iter().rev() {
            let undo = self.undo.remove(h).expect("main-chain blocks have undo data");
            self.state.rollback(undo);
        }

        let mut connected = Vec::new();
        let mut failure = None;
        for h in &branch {
            match self.state.apply_block(&self.blocks[h].block) {
                Ok(undo) => {
                    self.undo.insert(*h, undo);
                    self.main.push(*h);
                    connected.push(*h);
                }
                Err(e) => {
                    failure = Some((*h, e));
                    break;
                }
            }
        }

        if let Some((bad, err)) = &failure {
            let bad_index = branch.iter().position(|h| h == bad).expect("in branch");
            for h in &branch[bad_index..] {
                self.blocks.get_mut(h).expect("stored").invalid = true;
            }
            if self.state.height <= old_height {
                // The valid prefix is not longer than what we had; restore.
                for h in connected.drain(..).rev() {
                    let undo = self.undo.remove(&h).expect("just connected");
                    self.state.rollback(undo);
                    self.main.pop();
                }
                for h in &disconnected {
                    let undo = self
                        .state
                        .apply_block(&self.blocks[h].block)
                        .expect("previously valid chain re-applies");
                    self.undo.insert(*h, undo);
                    self.main.push(*h);
                }
                return Err(RejectReason::InvalidTx(err.clone()));
            }
        }

        let connected_txs: HashSet<Hash256> = connected
            .iter()
            .flat_map(|h| self.blocks[h].block.body().iter().map(Transaction::hash))
            .collect();
        for h in &connected_txs {
            self.mempool.remove(h);
        }
        let mut returned = Vec::new();
        for h in &disconnected {
            for tx in self.blocks[h].block.body().to_vec() {
                let th = tx.hash();
                if connected_txs.contains(&th) {
                    continue;
                }
                if self.mempool.insert(&self.state, tx).is_ok() {
                    returned.push(th);
                }
            }
        }
        self.mempool.revalidate(&self.state);

        let reorg = Reorg { fork_height, disconnected, connected, returned };
        match failure {
            Some((_, err)) if reorg.connected.last() != Some(&new_tip) => Err(RejectReason::InvalidTx(err)),
            _ => Ok(Accepted { new_tip: true, reorg: Some(reorg) }),
        }
    }

    /// Builds an unmined block on the current tip from the mempool.
    pub fn assemble_block(&self, coinbase_addr: Address, max_txs: usize, timestamp: u64) -> Block {
        assemble_block(&self.mempool, &self.state, coinbase_addr, max_txs, timestamp)
    }

    /// Assembles, mines and submits one block.
    pub fn mine_block(&mut self, coinbase_addr: Address, max_txs: usize, max_attempts: u64) -> Result<Hash256, MineError> {
        let timestamp = (self.state.height + 1) * 600;
        let block = mine(self.assemble_block(coinbase_addr, max_txs, timestamp), max_attempts)?;
        let hash = block.hash();
        self.submit_block(block).expect("locally assembled block is valid");
        Ok(hash)
    }
}

/// Greedily fills a block in decreasing-fee order, skipping entries that
/// conflict with ones already taken.
pub fn assemble_block(
    mempool: &Mempool,
    state: &ChainState,
    coinbase_addr: Address,
    max_txs: usize,
    timestamp: u64,
) -> Block {
    let height = state.height + 1;
    let mut scratch = state.clone();
    let mut body = Vec::new();
    let mut reward = block_reward(height);
    for tx in mempool.iter() {
        if body.len() >= max_txs {
            break;
        }
        let Some(with_fee) = reward.checked_add(tx.fee) else { continue };
        if scratch.try_apply_tx(tx, height).is_ok() {
            reward = with_fee;
            body.push(tx.clone());
        }
    }
    let mut txs = Vec::with_capacity(body.len() + 1);
    txs.push(Transaction::coinbase(coinbase_addr, reward, height));
    txs.extend(body);
    Block {
        header: BlockHeader {
            prev_hash: state.tip_hash,
            tx_root: compute_tx_root(&txs),
            height,
            timestamp,
            target: state.config.target,
            challenge_nonce: 0,
        },
        transactions: txs,
    }
}
