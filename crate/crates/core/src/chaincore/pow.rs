//! Nonce search and proof-of-work verification.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use super::block::{Block, BlockHeader};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MineError {
    #[error("no nonce found after {0} attempts")]
    Exhausted(u64),
}

/// True iff SHA-256 of the canonical header, read big-endian, is ≤ its target.
pub fn pow_check(header: &BlockHeader) -> bool {
    header.target.is_met_by(&header.hash())
}

/// Searches nonces `0, 1, 2, ...` and returns the block with the first one
/// that meets the target.
pub fn mine(mut block: Block, max_attempts: u64) -> Result<Block, MineError> {
    for nonce in 0..max_attempts {
        block.header.challenge_nonce = nonce;
        if pow_check(&block.header) {
            return Ok(block);
        }
    }
    Err(MineError::Exhausted(max_attempts))
}

/// Same result as [`mine`], searched by `threads` workers over one immutable
/// header template. Worker `i` tries `i, i + threads, ...`; the lowest winning
/// nonce is returned so the outcome doesn't depend on scheduling.
pub fn mine_parallel(mut block: Block, max_attempts: u64, threads: usize) -> Result<Block, MineError> {
    let threads = threads.max(1) as u64;
    let best = AtomicU64::new(u64::MAX);
    let template = &block.header;
    std::thread::scope(|scope| {
        for start in 0..threads {
            let best = &best;
            scope.spawn(move || {
                let mut header = template.clone();
                let mut nonce = start;
                while nonce < max_attempts && nonce < best.load(Ordering::Relaxed) {
                    header.challenge_nonce = nonce;
                    if pow_check(&header) {
                        best.fetch_min(nonce, Ordering::Relaxed);
                        return;
                    }
                    nonce += threads;
                }
            });
        }
    });
    match best.into_inner() {
        u64::MAX => Err(MineError::Exhausted(max_attempts)),
        nonce => {
            block.header.challenge_nonce = nonce;
            Ok(block)
        }
    }
}
