//! The skew-resistant batch-parallel ordered index.
//!
//! Structure, bottom-up: data nodes are key/value/height records placed by
//! a fixed hash of the key; above them sit `l1_levels` of chunked skip-list
//! nodes on random modules (the bottom layer), then `l2_levels` of chunked
//! nodes that each carry a shadow subtree — a local copy of their entire
//! middle-layer search subtree (the middle layer); keys taller than both
//! layers live in a top layer replicated on every module. The simulation
//! keeps one logical copy of the top layer host-side and bills every update
//! to it as a broadcast, i.e. at `P` times the delta size; queries consult
//! it during the routed push round at no extra word cost, which matches a
//! local replica walk.
//!
//! Batches execute in bulk-synchronous rounds. Searches run push-pull:
//! nodes attracting more queries than a threshold are pulled to the host
//! (one node transfer, independent of the query count), everything else is
//! pushed as constant-size tasks. Updates first search with trace
//! recording, then apply all structural changes so that every node is
//! written exactly once per batch, then repair the affected shadows.

mod config;
mod node;
mod scan;
mod search;
mod update;
mod verify;
mod wire;

pub use config::{check_balance, generate_height, TreeConfig};
pub use node::{ChunkNode, DataNode, TreeObject};
pub use scan::merge_ranges;
pub use verify::ShadowMismatch;
pub use wire::chunk_pull_words;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::pim_model::{CommStats, ModuleId, PimMachine, PimPointer, Word};
use crate::pim_tree::node::{HostShadow, HostShadowChild, ShadowSubtree};
use crate::pim_tree::wire::{tag, tree_program, ProgramCtx};
use crate::{BatchIndex, Error, Key, Result, ScanOutcome, Value, SENTINEL_KEY};

/// Host-resident logical copy of the replicated top layer: every key that
/// outgrew the distributed layers, mapped to its top-level chunk.
#[derive(Debug, Default)]
pub(crate) struct L3Index {
    map: BTreeMap<Key, PimPointer>,
}

impl L3Index {
    /// Entry chunk for a query: the chunk of the largest indexed key at or
    /// below `key`. The sentinel guarantees a hit.
    fn route(&self, key: Key) -> Result<PimPointer> {
        self.map
            .range(..=key)
            .next_back()
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::Protocol("top layer lost its sentinel".into()))
    }

    /// Top-level chunks covering `[lo, hi]`, left to right.
    fn cover(&self, lo: Key, hi: Key) -> Result<Vec<PimPointer>> {
        let mut out = vec![self.route(lo)?];
        for (_, p) in self.map.range((
            std::ops::Bound::Excluded(self.floor_key(lo)?),
            std::ops::Bound::Included(hi),
        )) {
            out.push(*p);
        }
        Ok(out)
    }

    fn floor_key(&self, key: Key) -> Result<Key> {
        self.map
            .range(..=key)
            .next_back()
            .map(|(k, _)| *k)
            .ok_or_else(|| Error::Protocol("top layer lost its sentinel".into()))
    }

    pub(crate) fn len(&self) -> usize {
        self.map.len()
    }

    pub(crate) fn keys(&self) -> impl Iterator<Item = &Key> {
        self.map.keys()
    }
}

/// Instrumentation for the most recent batch.
#[derive(Debug, Clone, Default)]
pub struct BatchMetrics {
    /// Bulk-synchronous rounds (launches) the batch used.
    pub launches: u64,
    /// Middle-layer pull-only rounds: (nodes pulled, words transferred).
    pub l2_pulls: Vec<(usize, u64)>,
    /// Bottom-layer push-pull rounds: (nodes pulled, words transferred).
    pub l1_pulls: Vec<(usize, u64)>,
    /// Data-node groups pulled during retrieval (deduplicated fetches).
    pub data_fetches: usize,
}

/// The index: a PIM machine image plus the host-side routing state.
pub struct PimTree {
    pub(crate) config: TreeConfig,
    pub(crate) machine: PimMachine<TreeObject>,
    pub(crate) l3: L3Index,
    /// Sentinel chunk of each level, index `level - 1`. These never die.
    pub(crate) level_heads: Vec<PimPointer>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) live_keys: u64,
    pub(crate) last_heights: Vec<(Key, u8)>,
    pub(crate) metrics: BatchMetrics,
}

impl PimTree {
    pub fn new(config: TreeConfig) -> Result<Self> {
        let mut machine = PimMachine::new(config.modules, config.accounting)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let total = config.total_levels();

        // Initial image: the sentinel occupies every level plus the top
        // layer, so every search path is anchored before the first insert.
        let dm = crate::pim_model::key_module(SENTINEL_KEY, config.modules);
        let data_ptr = machine.host_alloc(
            dm,
            TreeObject::Data(DataNode {
                key: SENTINEL_KEY,
                value: 0,
                height: total + 1,
            }),
        )?;
        machine.host_kv_insert(dm, SENTINEL_KEY, data_ptr.addr);

        let mut below = data_ptr;
        let mut level_heads = Vec::with_capacity(total as usize);
        for level in 1..=total {
            let m = ModuleId(rand::Rng::gen_range(&mut rng, 0..config.modules as u32));
            let chunk = ChunkNode {
                level,
                keys: vec![SENTINEL_KEY],
                children: vec![below],
                prev: None,
                next: None,
                shadow: None,
            };
            let ptr = machine.host_alloc(m, TreeObject::Chunk(chunk))?;
            level_heads.push(ptr);
            below = ptr;
        }

        // Shadows for the middle layer: each sentinel chunk mirrors the
        // sentinel chain below it.
        let l1 = config.l1_levels;
        for level in (l1 + 1)..=total {
            let hs = sentinel_shadow(&level_heads, level, l1);
            let mut ser = Vec::new();
            hs.encode(&mut ser);
            let built = ShadowSubtree::from_wire(&ser, l1)?;
            match machine
                .host_object_mut(level_heads[level as usize - 1])
                .expect("sentinel chunk exists")
            {
                TreeObject::Chunk(c) => c.shadow = Some(Box::new(built)),
                TreeObject::Data(_) => unreachable!(),
            }
        }

        let mut l3 = L3Index::default();
        l3.map.insert(SENTINEL_KEY, level_heads[total as usize - 1]);

        Ok(PimTree {
            config,
            machine,
            l3,
            level_heads,
            rng,
            live_keys: 0,
            last_heights: Vec::new(),
            metrics: BatchMetrics::default(),
        })
    }

    pub fn config(&self) -> &TreeConfig {
        &self.config
    }

    /// Number of user keys currently stored.
    pub fn len(&self) -> u64 {
        self.live_keys
    }

    pub fn is_empty(&self) -> bool {
        self.live_keys == 0
    }

    /// Heights drawn for the most recent `insert_batch`, in applied order.
    pub fn last_heights(&self) -> &[(Key, u8)] {
        &self.last_heights
    }

    /// Instrumentation for the most recent batch.
    pub fn last_metrics(&self) -> &BatchMetrics {
        &self.metrics
    }

    pub fn snapshot_stats(&self) -> CommStats {
        self.machine.snapshot_stats()
    }

    /// Number of keys in the replicated top layer (sentinel excluded).
    pub fn top_layer_len(&self) -> usize {
        self.l3.len() - 1
    }

    /// One scatter/launch/gather cycle against the tree's PIM program.
    pub(crate) fn run_round(&mut self, buffers: Vec<Vec<Word>>) -> Result<Vec<Vec<Word>>> {
        self.machine.scatter(buffers)?;
        let l3 = &self.l3;
        let l1_levels = self.config.l1_levels;
        self.machine
            .launch(|env, tasks| tree_program(env, tasks, &ProgramCtx { l3, l1_levels }))?;
        self.metrics.launches += 1;
        self.machine.gather()
    }

    /// Broadcast round carrying a top-layer delta to every replica.
    pub(crate) fn run_broadcast_round(&mut self, delta: &[Word]) -> Result<()> {
        let mut payload = Vec::with_capacity(delta.len() + 2);
        payload.push(tag::L3_APPLY);
        payload.push(delta.len() as u64);
        payload.extend_from_slice(delta);
        self.machine.broadcast(&payload)?;
        let l3 = &self.l3;
        let l1_levels = self.config.l1_levels;
        self.machine
            .launch(|env, tasks| tree_program(env, tasks, &ProgramCtx { l3, l1_levels }))?;
        self.metrics.launches += 1;
        let _ = self.machine.gather()?;
        Ok(())
    }

    /// Point lookups: one round, one constant-size task per distinct key.
    pub fn get_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<Value>>> {
        self.metrics = BatchMetrics::default();
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        // combine duplicate keys host-side; the sentinel is never visible
        let mut slots: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            slots.entry(*k).or_default().push(i);
        }
        let p = self.config.modules;
        let mut buffers = vec![Vec::new(); p];
        let mut expected: Vec<Vec<Key>> = vec![Vec::new(); p];
        for k in slots.keys() {
            if *k == SENTINEL_KEY {
                continue;
            }
            let m = crate::pim_model::key_module(*k, p);
            buffers[m.0 as usize].extend_from_slice(&[tag::GET, *k]);
            expected[m.0 as usize].push(*k);
        }
        let mut out = vec![None; keys.len()];
        if expected.iter().all(Vec::is_empty) {
            return Ok(out);
        }
        let replies = self.run_round(buffers)?;
        for (m, keys_here) in expected.iter().enumerate() {
            let mut r = wire::WordReader::new(&replies[m]);
            for k in keys_here {
                let found = r.word()?;
                let value = r.word()?;
                if found == 1 {
                    for &slot in &slots[k] {
                        out[slot] = Some(value);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Point updates: one round; duplicate keys combine last-wins.
    pub fn update_batch(&mut self, pairs: &[(Key, Value)]) -> Result<Vec<bool>> {
        self.metrics = BatchMetrics::default();
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let mut combined: BTreeMap<Key, Value> = BTreeMap::new();
        for (k, v) in pairs {
            combined.insert(*k, *v);
        }
        let p = self.config.modules;
        let mut buffers = vec![Vec::new(); p];
        let mut expected: Vec<Vec<Key>> = vec![Vec::new(); p];
        for (k, v) in &combined {
            if *k == SENTINEL_KEY {
                continue;
            }
            let m = crate::pim_model::key_module(*k, p);
            buffers[m.0 as usize].extend_from_slice(&[tag::UPDATE, *k, *v]);
            expected[m.0 as usize].push(*k);
        }
        let mut found: BTreeMap<Key, bool> = BTreeMap::new();
        if !expected.iter().all(Vec::is_empty) {
            let replies = self.run_round(buffers)?;
            for (m, keys_here) in expected.iter().enumerate() {
                let mut r = wire::WordReader::new(&replies[m]);
                for k in keys_here {
                    found.insert(*k, r.word()? == 1);
                }
            }
        }
        Ok(pairs
            .iter()
            .map(|(k, _)| found.get(k).copied().unwrap_or(false))
            .collect())
    }
}

fn sentinel_shadow(heads: &[PimPointer], level: u8, l1_levels: u8) -> HostShadow {
    let child = if level == l1_levels + 1 {
        HostShadowChild::Leaf(heads[l1_levels as usize - 1])
    } else {
        HostShadowChild::Sub(Box::new(sentinel_shadow(heads, level - 1, l1_levels)))
    };
    HostShadow {
        origin: heads[level as usize - 1],
        level,
        keys: vec![SENTINEL_KEY],
        children: vec![child],
    }
}

impl BatchIndex for PimTree {
    fn kind(&self) -> &'static str {
        "pim-tree"
    }

    fn get_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<Value>>> {
        PimTree::get_batch(self, keys)
    }

    fn update_batch(&mut self, pairs: &[(Key, Value)]) -> Result<Vec<bool>> {
        PimTree::update_batch(self, pairs)
    }

    fn insert_batch(&mut self, pairs: &[(Key, Value)]) -> Result<()> {
        PimTree::insert_batch(self, pairs)
    }

    fn delete_batch(&mut self, keys: &[Key]) -> Result<()> {
        PimTree::delete_batch(self, keys)
    }

    fn predecessor_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<(Key, Value)>>> {
        PimTree::predecessor_batch(self, keys)
    }

    fn scan_batch(&mut self, ranges: &[(Key, Key)]) -> Result<Vec<ScanOutcome>> {
        PimTree::scan_batch(self, ranges)
    }

    fn comm_stats(&self) -> CommStats {
        self.machine.snapshot_stats()
    }
}
