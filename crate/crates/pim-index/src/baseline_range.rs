//! Range-partitioned competitor index: the key space is cut into `P`
//! contiguous ranges by equal-count quantiles over the warm-up keys, one
//! local ordered index per module, with the host routing every operation by
//! the split table. No replication and no rebalancing, so skewed batches
//! concentrate on few modules; with a per-module capacity configured,
//! skewed inserts overflow — the documented failure mode this baseline
//! exists to reproduce.

use std::collections::BTreeMap;

use crate::pim_model::{
    key_module, AccountingMode, CommStats, ModuleEnv, ModuleId, PimMachine, PimPointer, Word,
    WordReader,
};
use crate::{BatchIndex, Error, InvalidRange, Key, Result, ScanOutcome, Value, SENTINEL_KEY};

mod op {
    pub const GET: u64 = 1;
    pub const UPDATE: u64 = 2;
    pub const INSERT: u64 = 3;
    pub const DELETE: u64 = 4;
    pub const PRED: u64 = 5;
    pub const SCAN: u64 = 6;
}

/// One record of the baseline's module-local store.
#[derive(Debug, Clone, Copy)]
pub struct Record {
    pub key: Key,
    pub value: Value,
}

pub struct RangePartitionedIndex {
    machine: PimMachine<Record>,
    /// `P - 1` strictly increasing boundaries; module `m` owns
    /// `[splits[m-1], splits[m])` with open ends at the extremes.
    splits: Vec<Key>,
    live_keys: u64,
}

/// Runs one baseline task stream against a module.
fn baseline_program(env: &mut ModuleEnv<'_, Record>, tasks: &[Word]) -> Result<()> {
    let mut i = 0;
    let next = |i: &mut usize| -> Result<Word> {
        let w = tasks
            .get(*i)
            .copied()
            .ok_or_else(|| Error::Protocol("truncated baseline task stream".into()))?;
        *i += 1;
        Ok(w)
    };
    while i < tasks.len() {
        match next(&mut i)? {
            op::GET => {
                let key = next(&mut i)?;
                match env.kv_get(key) {
                    Some(a) => {
                        let ptr = PimPointer::new(env.module(), a);
                        let rec = *env.object(ptr)?;
                        env.reply(&[1, rec.value]);
                    }
                    None => env.reply(&[0, 0]),
                }
            }
            op::UPDATE => {
                let key = next(&mut i)?;
                let value = next(&mut i)?;
                match env.kv_get(key) {
                    Some(a) => {
                        let ptr = PimPointer::new(env.module(), a);
                        env.object_mut(ptr)?.value = value;
                        env.emit(1);
                    }
                    None => env.emit(0),
                }
            }
            op::INSERT => {
                let key = next(&mut i)?;
                let value = next(&mut i)?;
                match env.kv_get(key) {
                    Some(a) => {
                        let ptr = PimPointer::new(env.module(), a);
                        env.object_mut(ptr)?.value = value;
                        env.emit(0);
                    }
                    None => {
                        let addr = env.alloc(Record { key, value })?;
                        env.kv_insert(key, addr);
                        env.ord_insert(key, addr);
                        env.emit(1);
                    }
                }
            }
            op::DELETE => {
                let key = next(&mut i)?;
                match env.kv_remove(key) {
                    Some(a) => {
                        env.ord_remove(key);
                        env.free(a)?;
                        env.emit(1);
                    }
                    None => env.emit(0),
                }
            }
            op::PRED => {
                let key = next(&mut i)?;
                match env.ord_predecessor(key) {
                    Some((k, a)) => {
                        let ptr = PimPointer::new(env.module(), a);
                        let rec = *env.object(ptr)?;
                        env.reply(&[1, k, rec.value]);
                    }
                    None => env.reply(&[0, 0, 0]),
                }
            }
            op::SCAN => {
                let lo = next(&mut i)?;
                let hi = next(&mut i)?;
                let hits = env.ord_range(lo, hi);
                env.emit(hits.len() as u64);
                for (k, a) in hits {
                    let ptr = PimPointer::new(env.module(), a);
                    let rec = *env.object(ptr)?;
                    env.reply(&[k, rec.value]);
                }
            }
            other => return Err(Error::Protocol(format!("unknown baseline op {other}"))),
        }
    }
    Ok(())
}

impl RangePartitionedIndex {
    /// Builds the index: splits are equal-count quantiles over the warm-up
    /// keys and stay frozen afterwards; the warm-up pairs are then loaded
    /// through ordinary routed batches. `capacity` limits live objects per
    /// module when present.
    pub fn build(
        modules: usize,
        accounting: AccountingMode,
        capacity: Option<usize>,
        warmup: &[(Key, Value)],
        load_batch: usize,
    ) -> Result<Self> {
        let mut machine = PimMachine::new(modules, accounting)?;
        machine.set_capacity(capacity);

        let mut sorted: Vec<Key> = warmup.iter().map(|(k, _)| *k).collect();
        sorted.sort_unstable();
        sorted.dedup();
        if modules > 1 && sorted.len() < modules {
            return Err(Error::Config(format!(
                "warm-up of {} distinct keys cannot seed {modules} range splits",
                sorted.len()
            )));
        }
        let mut splits = Vec::with_capacity(modules.saturating_sub(1));
        for m in 1..modules {
            splits.push(sorted[m * sorted.len() / modules]);
        }
        splits.dedup();
        if splits.len() + 1 != modules {
            return Err(Error::Config(
                "warm-up keys give duplicate range splits".into(),
            ));
        }

        // module 0 carries the sentinel so predecessor retries terminate
        let sm = ModuleId(0);
        let addr = machine.host_alloc(
            sm,
            Record {
                key: SENTINEL_KEY,
                value: 0,
            },
        )?;
        machine.host_kv_insert(sm, SENTINEL_KEY, addr.addr);
        machine.host_ord_insert(sm, SENTINEL_KEY, addr.addr);

        let mut index = RangePartitionedIndex {
            machine,
            splits,
            live_keys: 0,
        };
        for chunk in warmup.chunks(load_batch.max(1)) {
            index.insert_batch(chunk)?;
        }
        Ok(index)
    }

    pub fn splits(&self) -> &[Key] {
        &self.splits
    }

    pub fn len(&self) -> u64 {
        self.live_keys
    }

    pub fn is_empty(&self) -> bool {
        self.live_keys == 0
    }

    pub fn snapshot_stats(&self) -> CommStats {
        self.machine.snapshot_stats()
    }

    /// Live objects per module; the placement skew indicator.
    pub fn module_fill(&self) -> Vec<usize> {
        (0..self.machine.module_count())
            .map(|m| self.machine.live_objects(ModuleId(m as u32)))
            .collect()
    }

    fn owner(&self, key: Key) -> usize {
        self.splits.partition_point(|b| *b <= key)
    }

    fn run_round(&mut self, buffers: Vec<Vec<Word>>) -> Result<Vec<Vec<Word>>> {
        self.machine.scatter(buffers)?;
        self.machine.launch(baseline_program)?;
        self.machine.gather()
    }

    /// Executes a same-type point-op batch: each op runs on its owning
    /// module in one round. Predecessor misses retry on the next module to
    /// the left, one extra round per step.
    fn point_round(
        &mut self,
        tags: u64,
        payload: &[(Key, Option<Value>)],
    ) -> Result<Vec<Vec<Word>>> {
        let p = self.machine.module_count();
        let mut buffers = vec![Vec::new(); p];
        for (k, v) in payload {
            let m = self.owner(*k);
            buffers[m].push(tags);
            buffers[m].push(*k);
            if let Some(v) = v {
                buffers[m].push(*v);
            }
        }
        self.run_round(buffers)
    }
}

impl BatchIndex for RangePartitionedIndex {
    fn kind(&self) -> &'static str {
        "range-partitioned"
    }

    fn get_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<Value>>> {
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        // combine duplicates host-side, like the tree does
        let mut slots: BTreeMap<Key, Vec<usize>> = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            slots.entry(*k).or_default().push(i);
        }
        let p = self.machine.module_count();
        let mut expected: Vec<Vec<&Vec<usize>>> = (0..p).map(|_| Vec::new()).collect();
        let mut payload = Vec::with_capacity(slots.len());
        for (k, is) in &slots {
            if *k == SENTINEL_KEY {
                continue;
            }
            payload.push((*k, None));
            expected[self.owner(*k)].push(is);
        }
        let mut out = vec![None; keys.len()];
        if payload.is_empty() {
            return Ok(out);
        }
        let replies = self.point_round(op::GET, &payload)?;
        for m in 0..p {
            let mut r = WordReader::new(&replies[m]);
            for is in &expected[m] {
                let found = r.word()?;
                let value = r.word()?;
                if found == 1 {
                    for &i in is.iter() {
                        out[i] = Some(value);
                    }
                }
            }
        }
        Ok(out)
    }

    fn update_batch(&mut self, pairs: &[(Key, Value)]) -> Result<Vec<bool>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let mut combined: BTreeMap<Key, Value> = BTreeMap::new();
        for (k, v) in pairs {
            combined.insert(*k, *v);
        }
        let p = self.machine.module_count();
        let mut expected: Vec<Vec<Key>> = vec![Vec::new(); p];
        let mut payload = Vec::with_capacity(combined.len());
        for (k, v) in &combined {
            if *k == SENTINEL_KEY {
                continue;
            }
            payload.push((*k, Some(*v)));
            expected[self.owner(*k)].push(*k);
        }
        let mut found: BTreeMap<Key, bool> = BTreeMap::new();
        if !payload.is_empty() {
            let replies = self.point_round(op::UPDATE, &payload)?;
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for k in &expected[m] {
                    found.insert(*k, r.word()? == 1);
                }
            }
        }
        Ok(pairs
            .iter()
            .map(|(k, _)| found.get(k).copied().unwrap_or(false))
            .collect())
    }

    fn insert_batch(&mut self, pairs: &[(Key, Value)]) -> Result<()> {
        if pairs.is_empty() {
            return Ok(());
        }
        let mut combined: BTreeMap<Key, Value> = BTreeMap::new();
        for (k, v) in pairs {
            if *k == SENTINEL_KEY {
                return Err(Error::ReservedKey);
            }
            combined.insert(*k, *v);
        }
        let p = self.machine.module_count();
        let mut expected: Vec<usize> = vec![0; p];
        let mut payload = Vec::with_capacity(combined.len());
        for (k, v) in &combined {
            payload.push((*k, Some(*v)));
            expected[self.owner(*k)] += 1;
        }
        let replies = self.point_round(op::INSERT, &payload)?;
        for m in 0..p {
            let mut r = WordReader::new(&replies[m]);
            for _ in 0..expected[m] {
                self.live_keys += r.word()?;
            }
        }
        Ok(())
    }

    fn delete_batch(&mut self, keys: &[Key]) -> Result<()> {
        if keys.is_empty() {
            return Ok(());
        }
        let mut uniq: Vec<Key> = keys
            .iter()
            .copied()
            .filter(|k| *k != SENTINEL_KEY)
            .collect();
        uniq.sort_unstable();
        uniq.dedup();
        let p = self.machine.module_count();
        let mut expected: Vec<usize> = vec![0; p];
        let payload: Vec<(Key, Option<Value>)> = uniq
            .iter()
            .map(|k| {
                expected[self.owner(*k)] += 1;
                (*k, None)
            })
            .collect();
        if payload.is_empty() {
            return Ok(());
        }
        let replies = self.point_round(op::DELETE, &payload)?;
        for m in 0..p {
            let mut r = WordReader::new(&replies[m]);
            for _ in 0..expected[m] {
                self.live_keys -= r.word()?;
            }
        }
        Ok(())
    }

    fn predecessor_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<(Key, Value)>>> {
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        let p = self.machine.module_count();
        let mut out: Vec<Option<(Key, Value)>> = vec![None; keys.len()];
        // (query index, module to ask); left-steps on local misses
        let mut pending: Vec<(usize, usize)> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (i, self.owner(*k)))
            .collect();
        while !pending.is_empty() {
            let mut buffers = vec![Vec::new(); p];
            let mut expected: Vec<Vec<usize>> = vec![Vec::new(); p];
            for (i, m) in &pending {
                buffers[*m].extend_from_slice(&[op::PRED, keys[*i]]);
                expected[*m].push(*i);
            }
            let replies = self.run_round(buffers)?;
            let mut missed = Vec::new();
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for &i in &expected[m] {
                    let found = r.word()?;
                    let k = r.word()?;
                    let v = r.word()?;
                    if found == 1 {
                        out[i] = (k != SENTINEL_KEY).then_some((k, v));
                    } else {
                        debug_assert!(m > 0, "sentinel module cannot miss");
                        missed.push((i, m - 1));
                    }
                }
            }
            pending = missed;
        }
        Ok(out)
    }

    fn scan_batch(&mut self, ranges: &[(Key, Key)]) -> Result<Vec<ScanOutcome>> {
        if ranges.is_empty() {
            return Ok(Vec::new());
        }
        let p = self.machine.module_count();
        let mut buffers = vec![Vec::new(); p];
        let mut expected: Vec<Vec<usize>> = vec![Vec::new(); p];
        for (i, (lo, hi)) in ranges.iter().enumerate() {
            if lo > hi {
                continue;
            }
            for (m, flo, fhi) in split_at_boundaries(&self.splits, *lo, *hi) {
                buffers[m].extend_from_slice(&[op::SCAN, flo, fhi]);
                expected[m].push(i);
            }
        }
        let mut out: Vec<ScanOutcome> = ranges
            .iter()
            .map(|(lo, hi)| {
                if lo > hi {
                    Err(InvalidRange)
                } else {
                    Ok(Vec::new())
                }
            })
            .collect();
        if expected.iter().all(Vec::is_empty) {
            return Ok(out);
        }
        let replies = self.run_round(buffers)?;
        for m in 0..p {
            let mut r = WordReader::new(&replies[m]);
            for &i in &expected[m] {
                let n = r.word()? as usize;
                let dst = out[i].as_mut().expect("valid range");
                for _ in 0..n {
                    let k = r.word()?;
                    let v = r.word()?;
                    if k != SENTINEL_KEY {
                        dst.push((k, v));
                    }
                }
            }
        }
        // fragments arrive per-module left to right; modules own sorted
        // disjoint ranges, so a final per-range sort settles ordering
        for v in out.iter_mut().flatten() {
            v.sort_unstable_by_key(|(k, _)| *k);
        }
        Ok(out)
    }

    fn comm_stats(&self) -> CommStats {
        self.machine.snapshot_stats()
    }
}

/// Splits `[lo, hi]` at the range boundaries: one fragment per owning
/// module, in module order.
pub(crate) fn split_at_boundaries(splits: &[Key], lo: Key, hi: Key) -> Vec<(usize, Key, Key)> {
    let first = splits.partition_point(|b| *b <= lo);
    let last = splits.partition_point(|b| *b <= hi);
    (first..=last)
        .map(|m| {
            let flo = if m == first { lo } else { splits[m - 1] };
            let fhi = if m == last { hi } else { splits[m] - 1 };
            (m, flo, fhi)
        })
        .collect()
}

/// Module the tree's hash layer would pick; exposed so tests can contrast
/// the two placement schemes.
pub fn hash_owner(key: Key, modules: usize) -> ModuleId {
    key_module(key, modules)
}
