//! A desk-scale naming ledger coupled to an encrypted UDP transport.
//!
//! * [`chaincore`] is a proof-of-work chain with account balances and an
//!   embedded name database.
//! * [`nameregistry`] defines `d/` domain records, their lifecycle and the
//!   signed ephemeral-key update.
//! * [`resolver`] answers `.bit` queries over UDP with responses signed by a
//!   key whose fingerprint clients pin.
//! * [`transport`] is a 0-RTT tunnel protocol keyed from the ephemeral key
//!   published on chain, with hash-chain rekeying, mobility and puzzles.
//! * [`netsim`] is a deterministic discrete-event simulator that drives all of
//!   the above in virtual time.

pub mod chaincore;
pub mod codec;
pub mod nameregistry;
pub mod netsim;
pub mod resolver;
pub mod transport;

pub use codec::{sha256, Hash256};
