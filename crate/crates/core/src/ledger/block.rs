use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use super::Contract;
use crate::grid::Carrier;

/// SHA-256 digest, serialised as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(bytes));
        Digest(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub prev_digest: Digest,
    pub contracts: Vec<Contract>,
    /// Simulation step at which the block was formed.
    pub timestamp: u64,
    pub digest: Digest,
}

impl Block {
    pub fn new(height: u64, prev_digest: Digest, contracts: Vec<Contract>, timestamp: u64) -> Self {
        let mut block = Block {
            height,
            prev_digest,
            contracts,
            timestamp,
            digest: Digest::ZERO,
        };
        block.digest = Digest::of(&block.body());
        block
    }

    /// Canonical byte encoding of everything except the digest.
    pub fn body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + 128 * self.contracts.len());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.prev_digest.0);
        out.extend_from_slice(&(self.contracts.len() as u32).to_le_bytes());
        for c in &self.contracts {
            for s in [
                c.id.as_str(),
                c.seller.as_str(),
                c.buyer.as_str(),
                c.seller_device.as_str(),
                c.buyer_device.as_str(),
                c.payer.as_str(),
            ] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            out.push(c.carrier.tag());
            out.extend_from_slice(&c.quantity.to_le_bytes());
            out.extend_from_slice(&c.price.to_le_bytes());
            out.extend_from_slice(&c.fee.to_le_bytes());
            out.extend_from_slice(&c.submitted_at.to_le_bytes());
            out.extend_from_slice(&c.delivery_steps.to_le_bytes());
        }
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out
    }
}

/// Serialised block record: canonical body followed by the stored digest.
pub fn encode_block(block: &Block) -> Vec<u8> {
    let mut out = block.body();
    out.extend_from_slice(&block.digest.0);
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("record truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid UTF-8 in string field at byte {0}")]
    Utf8(usize),
    #[error("unknown carrier tag {0}")]
    Carrier(u8),
    #[error("{0} trailing bytes after block")]
    Trailing(usize),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(DecodeError::Truncated(self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        self.array().map(u64::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        self.array().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, DecodeError> {
        self.array().map(f64::from_le_bytes)
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DecodeError::Utf8(at))
    }
}

pub fn decode_block(bytes: &[u8]) -> Result<Block, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let height = r.u64()?;
    let prev_digest = Digest(r.array()?);
    let n = r.u32()?;
    let mut contracts = Vec::new();
    for _ in 0..n {
        let id = r.string()?;
        let seller = r.string()?;
        let buyer = r.string()?;
        let seller_device = r.string()?;
        let buyer_device = r.string()?;
        let payer = r.string()?;
        let tag = r.take(1)?[0];
        let carrier = *Carrier::ALL
            .iter()
            .find(|c| c.tag() == tag)
            .ok_or(DecodeError::Carrier(tag))?;
        contracts.push(Contract {
            id: id.into(),
            seller: seller.into(),
            buyer: buyer.into(),
            seller_device: seller_device.into(),
            buyer_device: buyer_device.into(),
            payer: payer.into(),
            carrier,
            quantity: r.f64()?,
            price: r.f64()?,
            fee: r.u64()?,
            submitted_at: r.u64()?,
            delivery_steps: r.u32()?,
        });
    }
    let timestamp = r.u64()?;
    let digest = Digest(r.array()?);
    if r.pos != bytes.len() {
        return Err(DecodeError::Trailing(bytes.len() - r.pos));
    }
    Ok(Block {
        height,
        prev_digest,
        contracts,
        timestamp,
        digest,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::contract;
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            Digest::of(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn encode_decode_round_trip() {
        let block = Block::new(
            3,
            Digest::of(b"prev"),
            vec![contract("a", 2, 1), contract("ü", 0, 2)],
            7,
        );
        let bytes = encode_block(&block);
        assert_eq!(decode_block(&bytes).unwrap(), block);
        assert_eq!(Digest::of(&bytes[..bytes.len() - 32]), block.digest);
        assert!(matches!(
            decode_block(&bytes[..bytes.len() - 1]),
            Err(DecodeError::Truncated(_))
        ));
    }

    #[test]
    fn digest_hex_serde() {
        let d = Digest::of(b"x");
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, format!("\"{}\"", d.to_hex()));
        assert_eq!(serde_json::from_str::<Digest>(&json).unwrap(), d);
    }
}
