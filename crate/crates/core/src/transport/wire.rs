//! Packet and frame layouts. All integers big-endian.
//!
//! ```text
//! INIT         "MLT1" | 0x01 | tid u64 | eph_pub 32 | ct
//! DATA         "MLT1" | 0x02 | tid u64 | ct
//! PUZZLE       "MLT1" | 0x03 | tid u64 | nonce 16 | difficulty u8
//! INIT_PUZZLED "MLT1" | 0x04 | tid u64 | nonce 16 | solution u64 | eph_pub 32 | ct
//! frame        seq u32 | ack u32 | window u32 | conn u32 | flags u8 | payload
//! ```
//! `ct` is the AEAD encryption of one frame with the packet header as
//! associated data.

use crate::codec::Reader;

use super::crypto::TAG_LEN;

pub const MAGIC: &[u8; 4] = b"MLT1";
pub const MTU: usize = 1200;

pub const TYPE_INIT: u8 = 0x01;
pub const TYPE_DATA: u8 = 0x02;
pub const TYPE_PUZZLE: u8 = 0x03;
pub const TYPE_INIT_PUZZLED: u8 = 0x04;

pub const INIT_HEADER_LEN: usize = 4 + 1 + 8 + 32;
pub const DATA_HEADER_LEN: usize = 4 + 1 + 8;
pub const PUZZLE_LEN: usize = 4 + 1 + 8 + 16 + 1;
pub const INIT_PUZZLED_HEADER_LEN: usize = 4 + 1 + 8 + 16 + 8 + 32;
pub const FRAME_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1;

/// Largest frame payload that fits every layout, so a segment can be resent
/// under whichever layout is current.
pub const MSS: usize = MTU - INIT_PUZZLED_HEADER_LEN - TAG_LEN - FRAME_HEADER_LEN;

pub const FLAG_FIN: u8 = 0x01;
pub const FLAG_RPC: u8 = 0x02;
/// Asks the receiver to answer with an acknowledgement at once. Used by
/// window probes and by packets awaiting tunnel confirmation.
pub const FLAG_ACK_NOW: u8 = 0x04;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Packet<'a> {
    Init { tid: u64, eph_pub: [u8; 32], ct: &'a [u8] },
    Data { tid: u64, ct: &'a [u8] },
    Puzzle { tid: u64, nonce: [u8; 16], difficulty: u8 },
    InitPuzzled { tid: u64, nonce: [u8; 16], solution: u64, eph_pub: [u8; 32], ct: &'a [u8] },
}

impl<'a> Packet<'a> {
    pub fn parse(bytes: &'a [u8]) -> Option<Packet<'a>> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return None;
        }
        let kind = r.u8()?;
        let tid = r.u64()?;
        let p = match kind {
            TYPE_INIT => Packet::Init { tid, eph_pub: r.array()?, ct: r.rest() },
            TYPE_DATA => Packet::Data { tid, ct: r.rest() },
            TYPE_PUZZLE => {
                let p = Packet::Puzzle { tid, nonce: r.array()?, difficulty: r.u8()? };
                if r.remaining() != 0 {
                    return None;
                }
                p
            }
            TYPE_INIT_PUZZLED => Packet::InitPuzzled {
                tid,
                nonce: r.array()?,
                solution: r.u64()?,
                eph_pub: r.array()?,
                ct: r.rest(),
            },
            _ => return None,
        };
        match p {
            Packet::Init { ct, .. } | Packet::Data { ct, .. } | Packet::InitPuzzled { ct, .. } if ct.len() < TAG_LEN + FRAME_HEADER_LEN => None,
            p => Some(p),
        }
    }

    pub fn tid(&self) -> u64 {
        match *self {
            Packet::Init { tid, .. } | Packet::Data { tid, .. } | Packet::Puzzle { tid, .. } | Packet::InitPuzzled { tid, .. } => tid,
        }
    }

    pub fn kind(&self) -> u8 {
        match self {
            Packet::Init { .. } => TYPE_INIT,
            Packet::Data { .. } => TYPE_DATA,
            Packet::Puzzle { .. } => TYPE_PUZZLE,
            Packet::InitPuzzled { .. } => TYPE_INIT_PUZZLED,
        }
    }

    /// Everything before the ciphertext; the AEAD associated data.
    pub fn header(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(INIT_PUZZLED_HEADER_LEN);
        h.extend_from_slice(MAGIC);
        h.push(self.kind());
        h.extend_from_slice(&self.tid().to_be_bytes());
        match self {
            Packet::Init { eph_pub, .. } => h.extend_from_slice(eph_pub),
            Packet::Data { .. } => {}
            Packet::Puzzle { nonce, difficulty, .. } => {
                h.extend_from_slice(nonce);
                h.push(*difficulty);
            }
            Packet::InitPuzzled { nonce, solution, eph_pub, .. } => {
                h.extend_from_slice(nonce);
                h.extend_from_slice(&solution.to_be_bytes());
                h.extend_from_slice(eph_pub);
            }
        }
        h
    }

    pub fn ciphertext(&self) -> &'a [u8] {
        match *self {
            Packet::Init { ct, .. } | Packet::Data { ct, .. } | Packet::InitPuzzled { ct, .. } => ct,
            Packet::Puzzle { .. } => &[],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.header();
        out.extend_from_slice(self.ciphertext());
        out
    }
}

/// Short name for traces.
pub fn kind_name(kind: u8) -> &'static str {
    match kind {
        TYPE_INIT => "INIT",
        TYPE_DATA => "DATA",
        TYPE_PUZZLE => "PUZZLE",
        TYPE_INIT_PUZZLED => "INIT_PUZZLED",
        _ => "?",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub seq: u32,
    pub ack: u32,
    pub window: u32,
    pub conn: u32,
    pub flags: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.ack.to_be_bytes());
        out.extend_from_slice(&self.window.to_be_bytes());
        out.extend_from_slice(&self.conn.to_be_bytes());
        out.push(self.flags);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Frame> {
        let mut r = Reader::new(bytes);
        Some(Frame {
            seq: r.u32()?,
            ack: r.u32()?,
            window: r.u32()?,
            conn: r.u32()?,
            flags: r.u8()?,
            payload: r.rest().to_vec(),
        })
    }

    /// Sequence space consumed: payload bytes plus one for FIN.
    pub fn seq_len(&self) -> u64 {
        self.payload.len() as u64 + u64::from(self.flags & FLAG_FIN != 0)
    }
}

/// Control messages, carried reliably on connection 0 with [`FLAG_RPC`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rpc {
    /// `0x01`: the client will continue on `next_tid`, presenting `pubkey`.
    NextTid { next_tid: u64, pubkey: [u8; 32] },
    /// `0x02`: the sender may deliver connection bytes up to offset `limit`.
    WindowUpdate { conn: u32, limit: u64 },
    /// `0x03`
    Close,
    /// `0x04`: server asks the client to rekey.
    RekeyRequest,
}

impl Rpc {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(41);
        match self {
            Rpc::NextTid { next_tid, pubkey } => {
                out.push(0x01);
                out.extend_from_slice(&next_tid.to_be_bytes());
                out.extend_from_slice(pubkey);
            }
            Rpc::WindowUpdate { conn, limit } => {
                out.push(0x02);
                out.extend_from_slice(&conn.to_be_bytes());
                out.extend_from_slice(&limit.to_be_bytes());
            }
            Rpc::Close => out.push(0x03),
            Rpc::RekeyRequest => out.push(0x04),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Rpc> {
        let mut r = Reader::new(bytes);
        let rpc = match r.u8()? {
            0x01 => Rpc::NextTid { next_tid: r.u64()?, pubkey: r.array()? },
            0x02 => Rpc::WindowUpdate { conn: r.u32()?, limit: r.u64()? },
            0x03 => Rpc::Close,
            0x04 => Rpc::RekeyRequest,
            _ => return None,
        };
        (r.remaining() == 0).then_some(rpc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mss_fits_mtu_in_every_layout() {
        assert_eq!(MSS, 1098);
        for header in [INIT_HEADER_LEN, DATA_HEADER_LEN, INIT_PUZZLED_HEADER_LEN] {
            assert!(header + TAG_LEN + FRAME_HEADER_LEN + MSS <= MTU);
        }
    }

    #[test]
    fn packets_round_trip() {
        let ct = [7u8; 40];
        let cases = [
            Packet::Init { tid: 1, eph_pub: [2; 32], ct: &ct },
            Packet::Data { tid: u64::MAX, ct: &ct },
            Packet::Puzzle { tid: 3, nonce: [4; 16], difficulty: 12 },
            Packet::InitPuzzled { tid: 5, nonce: [6; 16], solution: 99, eph_pub: [8; 32], ct: &ct },
        ];
        for p in cases {
            let bytes = p.encode();
            assert_eq!(Packet::parse(&bytes), Some(p));
            assert_eq!(&bytes[..4], MAGIC);
            assert_eq!(bytes[4], p.kind());
            assert_eq!(&bytes[5..13], &p.tid().to_be_bytes());
        }
        assert_eq!(Packet::parse(b"MLT1\x09\0\0\0\0\0\0\0\x01"), None);
        assert_eq!(Packet::parse(&Packet::Data { tid: 1, ct: &[0; 10] }.encode()), None);
        let mut bad_magic = cases[0].encode();
        bad_magic[3] = b'2';
        assert_eq!(Packet::parse(&bad_magic), None);
    }

    #[test]
    fn frames_and_rpcs_round_trip() {
        let f = Frame { seq: 1, ack: 2, window: 3, conn: 4, flags: FLAG_FIN, payload: b"hi".to_vec() };
        assert_eq!(Frame::decode(&f.encode()), Some(f.clone()));
        assert_eq!(f.seq_len(), 3);
        for rpc in [
            Rpc::NextTid { next_tid: 9, pubkey: [1; 32] },
            Rpc::WindowUpdate { conn: 3, limit: 1 << 40 },
            Rpc::Close,
            Rpc::RekeyRequest,
        ] {
            assert_eq!(Rpc::decode(&rpc.encode()), Some(rpc));
        }
        assert_eq!(Rpc::decode(&[0x03, 0]), None);
    }
}
