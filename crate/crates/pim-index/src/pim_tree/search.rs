//! Push-pull predecessor search.
//!
//! A batch descends in four stages: (1) one routed push round through the
//! replicated top layer, queries dealt round-robin; (2) up to `l2_levels`
//! pull-only rounds that fetch middle-layer nodes holding more than the
//! middle pull threshold of queries, stopping early once planned push loads
//! are balanced; (3) one push round that walks each remaining query through
//! the middle layer inside a shadow subtree; (4) one push-pull round per
//! bottom level, then data-node retrieval with duplicate fetches combined.

use std::collections::BTreeMap;

use crate::pim_model::{PimPointer, Word};
use crate::pim_tree::config::check_balance;
use crate::pim_tree::node::ChunkNode;
use crate::pim_tree::wire::{tag, WordReader};
use crate::pim_tree::PimTree;
use crate::{Error, Key, Result, Value, SENTINEL_KEY};

/// Result of one search pass over a batch of keys.
pub(crate) struct SearchOutcome {
    /// Largest stored key at or below each query (sentinel when none).
    pub pred_keys: Vec<Key>,
    /// Predecessor values; present only when requested.
    pub values: Option<Vec<Value>>,
    /// Physical pointers of the visited chunks, `(level, ptr)` with levels
    /// descending; per query, only levels at or below its trace depth.
    pub traces: Option<Vec<Vec<(u8, PimPointer)>>>,
}

impl PimTree {
    /// Runs the search stages. `trace_depths` switches the engine between
    /// value retrieval (`None`: fetch predecessor values, record nothing)
    /// and trace recording (`Some`: per-query depth, skip the data round).
    pub(crate) fn search_engine(
        &mut self,
        keys: &[Key],
        trace_depths: Option<&[u8]>,
    ) -> Result<SearchOutcome> {
        let n = keys.len();
        let p = self.config.modules;
        let l1 = self.config.l1_levels;
        let top = self.config.total_levels();
        let want_traces = trace_depths.is_some();
        let depth = |q: usize| trace_depths.map_or(0, |d| d[q]);

        let mut cur: Vec<PimPointer> = Vec::with_capacity(n);
        let mut level: Vec<u8> = vec![top; n];
        let mut traces: Vec<Vec<(u8, PimPointer)>> = if want_traces {
            vec![Vec::new(); n]
        } else {
            Vec::new()
        };

        // stage 1: routed push through the replicated top layer
        let mut buffers = vec![Vec::new(); p];
        for (q, k) in keys.iter().enumerate() {
            buffers[q % p].extend_from_slice(&[tag::L3_SEARCH, *k]);
        }
        let replies = self.run_round(buffers)?;
        {
            let mut readers: Vec<WordReader<'_>> =
                replies.iter().map(|r| WordReader::new(r)).collect();
            for q in 0..n {
                let ptr = readers[q % p].ptr()?;
                cur.push(ptr);
                if want_traces && top <= depth(q) {
                    traces[q].push((top, ptr));
                }
            }
        }

        // Stage 2: contention-shaving pull rounds over the middle layer.
        // Pulls exist to restore balance, so only nodes that are both
        // contended (above the threshold) and sitting on an overloaded
        // module are fetched; everything else keeps its planned push.
        for _ in 0..self.config.l2_levels {
            let mut loads = vec![0u64; p];
            for ptr in &cur {
                loads[ptr.module.0 as usize] += 1;
            }
            if check_balance(&loads, self.config.imbalance_factor) {
                break;
            }
            let sum: u64 = loads.iter().sum();
            let overloaded = |m: usize| -> bool {
                (loads[m] as f64) * (p as f64) > self.config.imbalance_factor * sum as f64
            };
            let mut groups: BTreeMap<Word, Vec<usize>> = BTreeMap::new();
            for q in 0..n {
                if level[q] > l1 {
                    groups.entry(cur[q].pack()).or_default().push(q);
                }
            }
            let hot: Vec<(PimPointer, Vec<usize>)> = groups
                .into_iter()
                .filter(|(_, qs)| qs.len() > self.config.l2_pull_threshold)
                .map(|(w, qs)| (PimPointer::unpack(w).expect("packed above"), qs))
                .filter(|(ptr, _)| overloaded(ptr.module.0 as usize))
                .collect();
            if hot.is_empty() {
                break;
            }
            let mut buffers = vec![Vec::new(); p];
            let mut order: Vec<Vec<usize>> = vec![Vec::new(); p];
            for (i, (ptr, _)) in hot.iter().enumerate() {
                buffers[ptr.module.0 as usize].extend_from_slice(&[tag::FETCH_CHUNK, ptr.addr.0]);
                order[ptr.module.0 as usize].push(i);
            }
            let mut pulled_words = 2 * hot.len() as u64;
            let replies = self.run_round(buffers)?;
            let mut chunks: Vec<Option<ChunkNode>> = (0..hot.len()).map(|_| None).collect();
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for &i in &order[m] {
                    let len = r.word()? as usize;
                    let (chunk, used) = ChunkNode::decode(r.slice(len)?)?;
                    if used != len {
                        return Err(Error::Protocol("chunk fetch length mismatch".into()));
                    }
                    pulled_words += 1 + len as u64;
                    chunks[i] = Some(chunk);
                }
            }
            for (i, (_, qs)) in hot.iter().enumerate() {
                let chunk = chunks[i].as_ref().expect("fetched");
                for &q in qs {
                    let slot = chunk.slot_of(keys[q])?;
                    cur[q] = chunk.children[slot];
                    level[q] -= 1;
                    if want_traces && level[q] <= depth(q) {
                        traces[q].push((level[q], cur[q]));
                    }
                }
            }
            self.metrics.l2_pulls.push((hot.len(), pulled_words));
        }

        // stage 3: one push round through the middle layer via shadows
        {
            let mut tasks: BTreeMap<(Word, Key), (u64, Vec<usize>)> = BTreeMap::new();
            for q in 0..n {
                if level[q] > l1 {
                    let e = tasks
                        .entry((cur[q].pack(), keys[q]))
                        .or_insert((0, Vec::new()));
                    e.0 = e.0.max(depth(q) as u64);
                    e.1.push(q);
                }
            }
            if !tasks.is_empty() {
                let mut buffers = vec![Vec::new(); p];
                let mut order: Vec<Vec<&(u64, Vec<usize>)>> = vec![Vec::new(); p];
                for ((w, key), entry) in &tasks {
                    let ptr = PimPointer::unpack(*w).expect("packed above");
                    buffers[ptr.module.0 as usize].extend_from_slice(&[
                        tag::SHADOW_SEARCH,
                        ptr.addr.0,
                        *key,
                        entry.0,
                    ]);
                    order[ptr.module.0 as usize].push(entry);
                }
                let replies = self.run_round(buffers)?;
                for m in 0..p {
                    let mut r = WordReader::new(&replies[m]);
                    for (_, qs) in order[m].iter() {
                        let t = r.word()? as usize;
                        let mut origins = Vec::with_capacity(t);
                        for _ in 0..t {
                            origins.push(r.ptr()?);
                        }
                        let leaf = r.ptr()?;
                        for &q in qs {
                            // origins run from level l1 + t down to l1 + 1
                            for (i, optr) in origins.iter().enumerate() {
                                let olevel = l1 + (t - i) as u8;
                                if want_traces && olevel <= depth(q) {
                                    traces[q].push((olevel, *optr));
                                }
                            }
                            cur[q] = leaf;
                            level[q] = l1;
                            if want_traces && l1 <= depth(q) {
                                traces[q].push((l1, leaf));
                            }
                        }
                    }
                }
            }
        }
        debug_assert!(level.iter().all(|l| *l == l1));

        // stage 4: push-pull per bottom level, data pointers at the end
        let mut pred_keys = vec![SENTINEL_KEY; n];
        let placeholder = self.level_heads[0];
        let mut data_ptrs = vec![placeholder; n];
        for lvl in (1..=l1).rev() {
            let mut groups: BTreeMap<Word, Vec<usize>> = BTreeMap::new();
            for q in 0..n {
                groups.entry(cur[q].pack()).or_default().push(q);
            }
            enum Expect<'a> {
                Pull { qs: &'a [usize] },
                Push { qs: &'a [usize] },
            }
            let mut buffers = vec![Vec::new(); p];
            let mut order: Vec<Vec<Expect<'_>>> = (0..p).map(|_| Vec::new()).collect();
            let mut pulled = 0usize;
            let mut pulled_words = 0u64;
            // hot nodes first, then pushed queries combined by (node, key)
            let mut pushes: BTreeMap<(Word, Key), Vec<usize>> = BTreeMap::new();
            for (w, qs) in &groups {
                let ptr = PimPointer::unpack(*w).expect("packed above");
                if qs.len() > self.config.l1_pull_threshold {
                    buffers[ptr.module.0 as usize]
                        .extend_from_slice(&[tag::FETCH_CHUNK, ptr.addr.0]);
                    order[ptr.module.0 as usize].push(Expect::Pull { qs });
                    pulled += 1;
                    pulled_words += 2;
                } else {
                    for &q in qs {
                        pushes.entry((*w, keys[q])).or_default().push(q);
                    }
                }
            }
            for ((w, key), qs) in &pushes {
                let ptr = PimPointer::unpack(*w).expect("packed above");
                buffers[ptr.module.0 as usize].extend_from_slice(&[
                    tag::SEARCH_CHUNK,
                    ptr.addr.0,
                    *key,
                ]);
                order[ptr.module.0 as usize].push(Expect::Push { qs });
            }
            let replies = self.run_round(buffers)?;
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for e in &order[m] {
                    match e {
                        Expect::Pull { qs } => {
                            let len = r.word()? as usize;
                            let (chunk, _) = ChunkNode::decode(r.slice(len)?)?;
                            pulled_words += 1 + len as u64;
                            for &q in qs.iter() {
                                let slot = chunk.slot_of(keys[q])?;
                                let child = chunk.children[slot];
                                if lvl == 1 {
                                    pred_keys[q] = chunk.keys[slot];
                                    data_ptrs[q] = child;
                                } else {
                                    cur[q] = child;
                                    level[q] = lvl - 1;
                                    if want_traces && lvl - 1 <= depth(q) {
                                        traces[q].push((lvl - 1, child));
                                    }
                                }
                            }
                        }
                        Expect::Push { qs } => {
                            if lvl == 1 {
                                let found = r.word()?;
                                let child = r.ptr()?;
                                for &q in qs.iter() {
                                    pred_keys[q] = found;
                                    data_ptrs[q] = child;
                                }
                            } else {
                                let child = r.ptr()?;
                                for &q in qs.iter() {
                                    cur[q] = child;
                                    level[q] = lvl - 1;
                                    if want_traces && lvl - 1 <= depth(q) {
                                        traces[q].push((lvl - 1, child));
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.metrics.l1_pulls.push((pulled, pulled_words));
        }

        // Data retrieval runs push-pull with the bottom threshold: a data
        // node wanted by more than K queries is fetched once and fanned
        // out, anything colder is fetched per query.
        let values = if want_traces {
            None
        } else {
            let mut groups: BTreeMap<Word, Vec<usize>> = BTreeMap::new();
            for q in 0..n {
                groups.entry(data_ptrs[q].pack()).or_default().push(q);
            }
            let mut buffers = vec![Vec::new(); p];
            let mut order: Vec<Vec<&[usize]>> = vec![Vec::new(); p];
            let mut tasks = 0usize;
            for (w, qs) in &groups {
                let ptr = PimPointer::unpack(*w).expect("packed above");
                let buf = &mut buffers[ptr.module.0 as usize];
                if qs.len() > self.config.l1_pull_threshold {
                    buf.extend_from_slice(&[tag::FETCH_DATA, ptr.addr.0]);
                    order[ptr.module.0 as usize].push(qs.as_slice());
                    tasks += 1;
                } else {
                    for q in qs {
                        buf.extend_from_slice(&[tag::FETCH_DATA, ptr.addr.0]);
                        order[ptr.module.0 as usize].push(std::slice::from_ref(q));
                        tasks += 1;
                    }
                }
            }
            self.metrics.data_fetches = tasks;
            let replies = self.run_round(buffers)?;
            let mut values = vec![0u64; n];
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for qs in &order[m] {
                    let key = r.word()?;
                    let value = r.word()?;
                    let _height = r.word()?;
                    for &q in qs.iter() {
                        if key != pred_keys[q] {
                            return Err(Error::Protocol(format!(
                                "data node key {key} does not match search result {}",
                                pred_keys[q]
                            )));
                        }
                        values[q] = value;
                    }
                }
            }
            Some(values)
        };

        Ok(SearchOutcome {
            pred_keys,
            values,
            traces: want_traces.then_some(traces),
        })
    }

    /// For each query, the largest stored key `<= query` with its value.
    /// Queries preceding every stored key return `None`.
    pub fn predecessor_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<(Key, Value)>>> {
        self.metrics = Default::default();
        if keys.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.search_engine(keys, None)?;
        let values = out.values.expect("value mode");
        Ok(out
            .pred_keys
            .iter()
            .zip(values)
            .map(|(k, v)| (*k != SENTINEL_KEY).then_some((*k, v)))
            .collect())
    }
}
