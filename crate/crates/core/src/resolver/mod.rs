//! `.bit` lookups over UDP, answered from chain state and signed by a
//! resolver key whose SHA-256 fingerprint clients pin.

pub mod client;
pub mod server;
pub mod wire;

pub use client::{answer_from, client_resolve, Answer, ClientConfig, ClientError, MAX_RETRIES};
pub use server::{handle_datagram, serve, BindError, ChainSource, ResolverConfig, ResolverHandle};
pub use wire::{verify_response, Query, Response, Status, VerifyError, MAGIC};
