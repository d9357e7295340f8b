//! Hash-addressed storage of finished block outputs until their seams are
//! consumed by merges.

use thiserror::Error;

use super::{BlockId, BlockOutput, BlockPlan};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("decode memory full ({0} slots)")]
    Full(usize),
    #[error("block {0:?} stored twice")]
    Duplicate(BlockId),
    #[error("block {0:?} not stored")]
    Missing(BlockId),
}

struct Entry {
    id: BlockId,
    output: BlockOutput,
    /// Seams not yet handed to a merge.
    remaining: usize,
}

pub struct BlockStore {
    slots: Vec<Option<Entry>>,
    live: usize,
    peak: usize,
}

impl BlockStore {
    pub fn new(slots: usize) -> BlockStore {
        BlockStore {
            slots: (0..slots.max(1)).map(|_| None).collect(),
            live: 0,
            peak: 0,
        }
    }

    /// Table sized to four times the expected number of in-flight blocks.
    pub fn for_in_flight(blocks: usize) -> BlockStore {
        BlockStore::new(4 * blocks.max(1))
    }

    fn find(&self, id: BlockId) -> Option<usize> {
        let n = self.slots.len();
        let start = BlockPlan::slot(id, n);
        (0..n)
            .map(|i| (start + i) % n)
            .find(|&s| matches!(&self.slots[s], Some(e) if e.id == id))
    }

    pub fn insert(&mut self, id: BlockId, output: BlockOutput) -> Result<(), StoreError> {
        if self.find(id).is_some() {
            return Err(StoreError::Duplicate(id));
        }
        let n = self.slots.len();
        let start = BlockPlan::slot(id, n);
        let slot = (0..n)
            .map(|i| (start + i) % n)
            .find(|&s| self.slots[s].is_none())
            .ok_or(StoreError::Full(n))?;
        let remaining = output.seams.len();
        if remaining == 0 {
            return Ok(());
        }
        self.slots[slot] = Some(Entry { id, output, remaining });
        self.live += 1;
        self.peak = self.peak.max(self.live);
        Ok(())
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.find(id).is_some()
    }

    /// Hands out the seam of `id` facing block index `neighbor`; frees the
    /// slot once every seam has been taken.
    pub fn take_seam(&mut self, id: BlockId, neighbor: usize) -> Result<Vec<u32>, StoreError> {
        let slot = self.find(id).ok_or(StoreError::Missing(id))?;
        let entry = self.slots[slot].as_mut().expect("slot");
        let seam = entry.output.seam_for(neighbor).ok_or(StoreError::Missing(id))?.to_vec();
        entry.remaining -= 1;
        if entry.remaining == 0 {
            self.slots[slot] = None;
            self.live -= 1;
        }
        Ok(seam)
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}
