//! Host-side reference model: a sorted map replaying the same batches to
//! produce expected answers and expected per-level structure. Shares no
//! code with the simulated indexes.

use std::collections::BTreeMap;

use crate::{InvalidRange, Key, ScanOutcome, Value, SENTINEL_KEY};

/// Ground-truth state: key -> (value, height).
#[derive(Debug, Default, Clone)]
pub struct Oracle {
    map: BTreeMap<Key, (Value, u8)>,
}

impl Oracle {
    pub fn new() -> Self {
        Oracle::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Applies an insert batch with the heights the index drew for it.
    /// Existing keys keep their height and take the new value.
    pub fn insert(&mut self, pairs_with_heights: &[(Key, u8)], values: &[Value]) {
        for ((k, h), v) in pairs_with_heights.iter().zip(values) {
            self.map
                .entry(*k)
                .and_modify(|e| e.0 = *v)
                .or_insert((*v, *h));
        }
    }

    /// Applies an insert expressed as the index reports it: deduplicated
    /// `(key, height)` pairs plus the deduplicated `(key, value)` items.
    pub fn insert_batch(&mut self, items: &[(Key, Value)], heights: &[(Key, u8)]) {
        debug_assert_eq!(items.len(), heights.len());
        for ((k, v), (hk, h)) in items.iter().zip(heights) {
            debug_assert_eq!(k, hk);
            self.map
                .entry(*k)
                .and_modify(|e| e.0 = *v)
                .or_insert((*v, *h));
        }
    }

    pub fn delete_batch(&mut self, keys: &[Key]) {
        for k in keys {
            self.map.remove(k);
        }
    }

    pub fn get_batch(&self, keys: &[Key]) -> Vec<Option<Value>> {
        keys.iter().map(|k| self.map.get(k).map(|e| e.0)).collect()
    }

    pub fn update_batch(&mut self, pairs: &[(Key, Value)]) -> Vec<bool> {
        // same combining rule as the indexes: last write wins per key
        let mut combined: BTreeMap<Key, Value> = BTreeMap::new();
        for (k, v) in pairs {
            combined.insert(*k, *v);
        }
        for (k, v) in &combined {
            if let Some(e) = self.map.get_mut(k) {
                e.0 = *v;
            }
        }
        pairs
            .iter()
            .map(|(k, _)| self.map.contains_key(k))
            .collect()
    }

    pub fn predecessor_batch(&self, keys: &[Key]) -> Vec<Option<(Key, Value)>> {
        keys.iter()
            .map(|k| {
                self.map
                    .range(..=*k)
                    .next_back()
                    .map(|(pk, (v, _))| (*pk, *v))
            })
            .collect()
    }

    pub fn scan_batch(&self, ranges: &[(Key, Key)]) -> Vec<ScanOutcome> {
        ranges
            .iter()
            .map(|(lo, hi)| {
                if lo > hi {
                    return Err(InvalidRange);
                }
                Ok(self
                    .map
                    .range(*lo..=*hi)
                    .map(|(k, (v, _))| (*k, *v))
                    .collect())
            })
            .collect()
    }

    /// All live keys, ascending; the existing-key workload universe.
    pub fn live_keys(&self) -> Vec<Key> {
        self.map.keys().copied().collect()
    }

    /// Expected key set of each distributed level given the recorded
    /// heights: level `l` holds every key with height at least `l`.
    pub fn level_key_sets(&self, distributed_levels: u8) -> Vec<Vec<Key>> {
        (1..=distributed_levels)
            .map(|lvl| {
                self.map
                    .iter()
                    .filter(|(k, (_, h))| *h >= lvl && **k != SENTINEL_KEY)
                    .map(|(k, _)| *k)
                    .collect()
            })
            .collect()
    }

    /// Expected replicated-top-layer key set: heights above the
    /// distributed levels.
    pub fn top_layer_keys(&self, distributed_levels: u8) -> Vec<Key> {
        self.map
            .iter()
            .filter(|(k, (_, h))| *h > distributed_levels && **k != SENTINEL_KEY)
            .map(|(k, _)| *k)
            .collect()
    }
}
