//! Leg-by-leg handshake models for the comparison columns.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Tcp,
    TcpTls12,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Tcp => "tcp",
            Baseline::TcpTls12 => "tcp_tls12",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tcp" => Some(Baseline::Tcp),
            "tcp_tls12" => Some(Baseline::TcpTls12),
            _ => None,
        }
    }
}

/// One-way trips in order, ending with the leg that carries the first
/// application byte. The client's first flight rides on the final TCP ACK.
pub fn legs(kind: Baseline) -> Vec<&'static str> {
    match kind {
        Baseline::Tcp => vec!["SYN", "SYN-ACK", "ACK+data"],
        Baseline::TcpTls12 => vec![
            "SYN",
            "SYN-ACK",
            "ACK+ClientHello",
            "ServerHello..ServerHelloDone",
            "ClientKeyExchange+ChangeCipherSpec+Finished",
            "ChangeCipherSpec+Finished",
            "data",
        ],
    }
}

/// Round trips to the first application byte: half a round trip per leg.
pub fn baseline_handshake_model(kind: Baseline) -> f64 {
    legs(kind).len() as f64 / 2.0
}

/// The TLS handshake counted as four extra round trips on top of TCP.
pub const TLS_FOUR_RTT_FIGURE: f64 = 1.5 + 4.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn models() {
        assert_eq!(baseline_handshake_model(Baseline::Tcp), 1.5);
        assert_eq!(baseline_handshake_model(Baseline::TcpTls12), 3.5);
        assert_eq!(Baseline::parse("tcp_tls12"), Some(Baseline::TcpTls12));
    }
}
