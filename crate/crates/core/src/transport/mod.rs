//! Encrypted tunnels over UDP.

pub mod app;
pub mod client;
pub mod crypto;
pub mod puzzle;
pub mod server;
pub mod stream;
pub mod tunnel;
pub mod udp;
pub mod wire;

pub use client::{ClientStats, ClientTunnel, ConnectError, RekeyError};
pub use crypto::TunnelKey;
pub use server::{Server, ServerConfig, ServerStats, TunnelHandle};
pub use stream::{StreamConfig, StreamError, StreamStats};
pub use tunnel::{Event, PacketInfo, RekeyReason, Transmit, TransportConfig};
