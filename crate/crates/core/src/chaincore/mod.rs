//! Proof-of-work ledger with account balances and an embedded name database.

pub mod amount;
pub mod block;
pub mod keys;
pub mod mempool;
pub mod node;
pub mod pow;
pub mod schedule;
pub mod service;
pub mod state;
pub mod store;
pub mod tx;

pub use amount::{Amount, COIN};
pub use block::{compute_tx_root, Block, BlockHeader, Target};
pub use keys::{derive_address, Address, KeyError, KeyPair, PublicKey, Signature};
pub use mempool::{Mempool, MempoolError};
pub use node::{assemble_block, genesis_block, Accepted, Node, RejectReason, Reorg};
pub use pow::{mine, mine_parallel, pow_check, MineError};
pub use schedule::{block_reward, network_fee, registration_cost, REGISTRATION_BURN};
pub use service::ChainService;
pub use state::{name_lookup, validate_transaction, ChainConfig, ChainState, NameEntry, NameLookup, ValidationError};
pub use store::{load_chain, save_chain, StoreError};
pub use tx::{sign_transaction, verify_transaction_signature, Transaction, TxError, TxKind};
