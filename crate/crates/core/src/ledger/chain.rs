use serde::Serialize;
use thiserror::Error;

use super::block::{decode_block, encode_block, Block, Digest};

const MIN_RECORD: usize = 8 + 32 + 4 + 8 + 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize)]
#[error("chain verification failed at height {height}")]
pub struct CorruptBlock {
    pub height: u64,
}

/// Append-only block sequence starting at the genesis block.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn genesis() -> Self {
        Self {
            blocks: vec![Block::new(0, Digest::ZERO, Vec::new(), 0)],
        }
    }

    /// Wraps an existing block sequence without checking it.
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub(super) fn push(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn records(&self) -> Vec<Vec<u8>> {
        self.blocks.iter().map(encode_block).collect()
    }

    /// One JSON object per line, one line per block.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&serde_json::to_string(b).expect("blocks serialise"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Self, serde_json::Error> {
        let blocks = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<Block>, _>>()?;
        Ok(Self { blocks })
    }
}

/// Checks every record's height, back-link and digest, returning the lowest
/// height at which verification fails.
pub fn verify_records(records: &[Vec<u8>]) -> Result<(), CorruptBlock> {
    let mut prev = Digest::ZERO;
    for (i, rec) in records.iter().enumerate() {
        let fail = Err(CorruptBlock { height: i as u64 });
        if rec.len() < MIN_RECORD {
            return fail;
        }
        let (body, stored) = rec.split_at(rec.len() - 32);
        let height = u64::from_le_bytes(body[..8].try_into().expect("8 bytes"));
        if height != i as u64 || body[8..40] != prev.0 || Digest::of(body).0 != stored {
            return fail;
        }
        if decode_block(rec).is_err() {
            return fail;
        }
        prev = Digest(stored.try_into().expect("32 bytes"));
    }
    Ok(())
}

pub fn verify_chain(chain: &Chain) -> Result<(), CorruptBlock> {
    verify_records(&chain.records())
}

#[cfg(test)]
mod tests {
    use super::super::tests::contract;
    use super::*;

    fn chain(n: u64) -> Chain {
        let mut c = Chain::genesis();
        for h in 1..=n {
            let tip = c.tip().digest;
            c.push(Block::new(h, tip, vec![contract(&format!("c{h}"), h, h)], h));
        }
        c
    }

    #[test]
    fn intact_chain_verifies() {
        assert_eq!(verify_chain(&chain(5)), Ok(()));
        assert_eq!(Chain::genesis().tip().height, 0);
    }

    #[test]
    fn tampered_quantity_reports_height() {
        let mut c = chain(5);
        c.blocks_mut()[3].contracts[0].quantity = 2.0;
        assert_eq!(verify_chain(&c), Err(CorruptBlock { height: 3 }));
    }

    #[test]
    fn flipped_byte_and_relinked_block() {
        let c = chain(4);
        let mut records = c.records();
        records[2][20] ^= 1;
        assert_eq!(verify_records(&records), Err(CorruptBlock { height: 2 }));

        // Re-hashing a modified block still breaks the next back-link.
        let mut c = chain(4);
        let b = &c.blocks()[2];
        let mut contracts = b.contracts.clone();
        contracts[0].fee += 1;
        c.blocks_mut()[2] = Block::new(b.height, b.prev_digest, contracts, b.timestamp);
        assert_eq!(verify_chain(&c), Err(CorruptBlock { height: 3 }));
    }

    #[test]
    fn json_lines_round_trip() {
        let c = chain(3);
        let text = c.to_json_lines();
        assert_eq!(text.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 5);
        assert_eq!(Chain::from_json_lines(&text).unwrap(), c);
    }
}
