use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

const SHARDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockKey {
    pub table: u64,
    pub unit: u16,
}

struct Shard {
    lru: LruCache<BlockKey, Arc<[u8]>>,
    bytes: usize,
    capacity: usize,
}

/// LRU cache of data blocks shared by all tables of a store. Sharded by key
/// hash; each shard evicts by byte size.
pub struct BlockCache {
    shards: Vec<Mutex<Shard>>,
}

impl BlockCache {
    pub fn new(capacity_bytes: usize) -> Arc<Self> {
        let per_shard = capacity_bytes.div_ceil(SHARDS);
        Arc::new(BlockCache {
            shards: (0..SHARDS)
                .map(|_| {
                    Mutex::new(Shard {
                        lru: LruCache::unbounded(),
                        bytes: 0,
                        capacity: per_shard,
                    })
                })
                .collect(),
        })
    }

    fn shard(&self, key: BlockKey) -> &Mutex<Shard> {
        let h = key.table.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ u64::from(key.unit);
        &self.shards[(h.wrapping_mul(0xff51_afd7_ed55_8ccd) >> 60) as usize % SHARDS]
    }

    pub fn get(&self, key: BlockKey) -> Option<Arc<[u8]>> {
        self.shard(key).lock().lru.get(&key).cloned()
    }

    /// Returns the cached block, loading and inserting it on a miss. The
    /// shard lock is not held during `load`; a concurrent loader of the same
    /// block may race, in which case the first inserted copy wins.
    pub fn get_or_load<E>(
        &self,
        key: BlockKey,
        load: impl FnOnce() -> Result<Arc<[u8]>, E>,
    ) -> Result<(Arc<[u8]>, bool), E> {
        if let Some(b) = self.get(key) {
            return Ok((b, true));
        }
        let block = load()?;
        let mut shard = self.shard(key).lock();
        if let Some(existing) = shard.lru.get(&key) {
            return Ok((existing.clone(), false));
        }
        shard.bytes += block.len();
        shard.lru.put(key, block.clone());
        while shard.bytes > shard.capacity {
            match shard.lru.pop_lru() {
                Some((_, old)) => shard.bytes -= old.len(),
                None => break,
            }
        }
        Ok((block, false))
    }

    pub fn resident_bytes(&self) -> usize {
        self.shards.iter().map(|s| s.lock().bytes).sum()
    }
}
