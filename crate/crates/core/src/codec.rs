//! Canonical byte encoding used for every digest in the simulator.
//!
//! Layout rules (all integers big-endian):
//! - `u8`, `u32`, `u64`: fixed width.
//! - string: `u32` byte length followed by UTF-8 bytes.
//! - digest: 32 raw bytes.
//! - optional value: `0x00` for none, `0x01` followed by the value.
//! - account: `u8` tag (0 mint, 1 node, 2 escrow) followed by the id string
//!   (empty for mint).

use crate::digest::Digest;
use crate::ids::AccountId;

#[derive(Default, Debug, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        let len = u32::try_from(s.len()).expect("string longer than u32::MAX bytes");
        self.u32(len);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(d.as_bytes());
        self
    }

    pub fn account(&mut self, a: &AccountId) -> &mut Self {
        match a {
            AccountId::Mint => self.u8(0).str(""),
            AccountId::Node(n) => self.u8(1).str(n.as_str()),
            AccountId::Escrow(t) => self.u8(2).str(t.as_str()),
        }
    }

    pub fn opt_account(&mut self, a: Option<&AccountId>) -> &mut Self {
        match a {
            None => self.u8(0),
            Some(a) => self.u8(1).account(a),
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn digest_of(self) -> Digest {
        Digest::of(&self.buf)
    }
}
