//! Batch range scans.
//!
//! Preprocessing merges overlapping ranges into disjoint ones (sort by low
//! bound, prefix-max over high bounds) and splits merged ranges wider than
//! the configured multiple of the mean input width. Execution mirrors the
//! predecessor stages: the routed top-layer round marks, per range, the two
//! boundary chunks for search and every interior chunk for wholesale
//! fetching; interior subtrees are disjoint across ranges so they push
//! without contention, while boundary chunks go through the same pull
//! threshold as predecessor queries. Results are reassembled per input
//! range on the host.

use std::collections::BTreeMap;

use crate::pim_model::{PimPointer, Word};
use crate::pim_tree::config::check_balance;
use crate::pim_tree::node::ChunkNode;
use crate::pim_tree::wire::{role, tag, WordReader};
use crate::pim_tree::PimTree;
use crate::{Error, InvalidRange, Key, Result, ScanOutcome, Value, SENTINEL_KEY};

/// Merges overlapping `(lo, hi)` ranges into disjoint covering ranges.
/// Inputs must satisfy `lo <= hi`; output is sorted and pairwise disjoint.
pub fn merge_ranges(ranges: &[(Key, Key)]) -> Vec<(Key, Key)> {
    let mut sorted: Vec<(Key, Key)> = ranges.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(Key, Key)> = Vec::new();
    for (lo, hi) in sorted {
        match out.last_mut() {
            Some((_, mhi)) if lo <= *mhi => {
                *mhi = (*mhi).max(hi);
            }
            _ => out.push((lo, hi)),
        }
    }
    out
}

/// Splits every merged range wider than `max_width` into consecutive
/// disjoint pieces of at most that width.
pub(crate) fn split_wide(merged: &[(Key, Key)], max_width: u128) -> Vec<(Key, Key)> {
    if max_width == 0 {
        return merged.to_vec();
    }
    let mut out = Vec::new();
    for &(lo, hi) in merged {
        let mut start = lo as u128;
        let end = hi as u128;
        while end - start >= max_width {
            out.push((start as Key, (start + max_width - 1) as Key));
            start += max_width;
        }
        out.push((start as Key, hi));
    }
    out
}

#[derive(Clone, Copy)]
struct Entry {
    range: usize,
    level: u8,
    ptr: PimPointer,
    role: u64,
}

impl PimTree {
    /// Runs every `(lo, hi)` scan; ranges with `lo > hi` are rejected
    /// individually. Each result lists all stored pairs with
    /// `lo <= key <= hi` in ascending key order.
    pub fn scan_batch(&mut self, ranges: &[(Key, Key)]) -> Result<Vec<ScanOutcome>> {
        self.metrics = Default::default();
        if ranges.is_empty() {
            return Ok(Vec::new());
        }
        let valid: Vec<(Key, Key)> = ranges.iter().copied().filter(|(l, h)| l <= h).collect();
        if valid.is_empty() {
            return Ok(ranges.iter().map(|_| Err(InvalidRange)).collect());
        }
        let merged = merge_ranges(&valid);
        let mean_width = valid
            .iter()
            .map(|(l, h)| (*h - *l) as u128 + 1)
            .sum::<u128>()
            / valid.len() as u128;
        let exec = split_wide(
            &merged,
            mean_width.saturating_mul(self.config.scan_split_multiplier as u128),
        );

        let pairs = self.run_disjoint_scans(&exec)?;

        Ok(ranges
            .iter()
            .map(|(lo, hi)| {
                if lo > hi {
                    return Err(InvalidRange);
                }
                let from = pairs.partition_point(|(k, _)| k < lo);
                let to = pairs.partition_point(|(k, _)| k <= hi);
                Ok(pairs[from..to].to_vec())
            })
            .collect())
    }

    /// Executes pairwise-disjoint ranges and returns all matching pairs,
    /// sorted by key.
    fn run_disjoint_scans(&mut self, exec: &[(Key, Key)]) -> Result<Vec<(Key, Value)>> {
        let p = self.config.modules;
        let l1 = self.config.l1_levels;
        let top = self.config.total_levels();

        // top-layer round: mark boundary and interior chunks per range
        let mut buffers = vec![Vec::new(); p];
        for (i, (lo, hi)) in exec.iter().enumerate() {
            buffers[i % p].extend_from_slice(&[tag::L3_SCAN, *lo, *hi]);
        }
        let replies = self.run_round(buffers)?;
        let mut l2_front: Vec<Entry> = Vec::new();
        let mut l1_front: Vec<Entry> = Vec::new();
        let mut results: Vec<(Key, PimPointer)> = Vec::new();
        {
            let mut readers: Vec<WordReader<'_>> =
                replies.iter().map(|r| WordReader::new(r)).collect();
            for i in 0..exec.len() {
                let r = &mut readers[i % p];
                let m = r.word()? as usize;
                let mut ptrs = Vec::with_capacity(m);
                for _ in 0..m {
                    ptrs.push(r.ptr()?);
                }
                if m == 1 {
                    l2_front.push(Entry {
                        range: i,
                        level: top,
                        ptr: ptrs[0],
                        role: role::BOTH,
                    });
                } else {
                    for (j, ptr) in ptrs.iter().enumerate() {
                        let role_w = if j == 0 {
                            role::LEFT
                        } else if j == m - 1 {
                            role::RIGHT
                        } else {
                            role::FETCH_ALL
                        };
                        l2_front.push(Entry {
                            range: i,
                            level: top,
                            ptr: *ptr,
                            role: role_w,
                        });
                    }
                }
            }
        }

        // middle layer: pull contended boundary chunks, then push the rest
        // through shadows
        for _ in 0..self.config.l2_levels {
            let mut loads = vec![0u64; p];
            for e in l2_front.iter().chain(&l1_front) {
                loads[e.ptr.module.0 as usize] += 1;
            }
            if check_balance(&loads, self.config.imbalance_factor) {
                break;
            }
            let sum: u64 = loads.iter().sum();
            let overloaded = |m: usize| -> bool {
                (loads[m] as f64) * (p as f64) > self.config.imbalance_factor * sum as f64
            };
            let mut groups: BTreeMap<Word, Vec<usize>> = BTreeMap::new();
            for (i, e) in l2_front.iter().enumerate() {
                if e.role != role::FETCH_ALL {
                    groups.entry(e.ptr.pack()).or_default().push(i);
                }
            }
            let hot: Vec<(PimPointer, Vec<usize>)> = groups
                .into_iter()
                .filter(|(_, es)| es.len() > self.config.l2_pull_threshold)
                .map(|(w, es)| (PimPointer::unpack(w).expect("packed"), es))
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
                    let (chunk, _) = ChunkNode::decode(r.slice(len)?)?;
                    pulled_words += 1 + len as u64;
                    chunks[i] = Some(chunk);
                }
            }
            let mut replace: BTreeMap<usize, Vec<Entry>> = BTreeMap::new();
            for (i, (_, entries)) in hot.iter().enumerate() {
                let chunk = chunks[i].as_ref().expect("fetched");
                for &ei in entries {
                    let e = l2_front[ei];
                    let (lo, hi) = exec[e.range];
                    let (fa, sr) = advance_boundary(chunk, lo, hi, e.role)?;
                    let mut next = Vec::new();
                    for ptr in fa {
                        next.push(Entry {
                            range: e.range,
                            level: chunk.level - 1,
                            ptr,
                            role: role::FETCH_ALL,
                        });
                    }
                    for (role_w, ptr) in sr {
                        next.push(Entry {
                            range: e.range,
                            level: chunk.level - 1,
                            ptr,
                            role: role_w,
                        });
                    }
                    replace.insert(ei, next);
                }
            }
            self.metrics.l2_pulls.push((hot.len(), pulled_words));
            let mut rebuilt = Vec::with_capacity(l2_front.len());
            for (i, e) in l2_front.iter().enumerate() {
                match replace.remove(&i) {
                    Some(next) => {
                        for n in next {
                            if n.level > l1 {
                                rebuilt.push(n);
                            } else {
                                l1_front.push(n);
                            }
                        }
                    }
                    None => rebuilt.push(*e),
                }
            }
            l2_front = rebuilt;
        }

        if !l2_front.is_empty() {
            let mut buffers = vec![Vec::new(); p];
            let mut order: Vec<Vec<&Entry>> = vec![Vec::new(); p];
            for e in &l2_front {
                let (lo, hi) = exec[e.range];
                buffers[e.ptr.module.0 as usize].extend_from_slice(&[
                    tag::SCAN_SHADOW,
                    e.ptr.addr.0,
                    lo,
                    hi,
                    e.role,
                ]);
                order[e.ptr.module.0 as usize].push(e);
            }
            let replies = self.run_round(buffers)?;
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for e in &order[m] {
                    let nfa = r.word()? as usize;
                    for _ in 0..nfa {
                        l1_front.push(Entry {
                            range: e.range,
                            level: l1,
                            ptr: r.ptr()?,
                            role: role::FETCH_ALL,
                        });
                    }
                    let nsr = r.word()? as usize;
                    for _ in 0..nsr {
                        let role_w = r.word()?;
                        l1_front.push(Entry {
                            range: e.range,
                            level: l1,
                            ptr: r.ptr()?,
                            role: role_w,
                        });
                    }
                }
            }
            l2_front.clear();
        }

        // bottom layer: one push-pull round per level
        for lvl in (1..=l1).rev() {
            debug_assert!(l1_front.iter().all(|e| e.level == lvl));
            let mut groups: BTreeMap<Word, Vec<usize>> = BTreeMap::new();
            for (i, e) in l1_front.iter().enumerate() {
                if e.role != role::FETCH_ALL {
                    groups.entry(e.ptr.pack()).or_default().push(i);
                }
            }
            enum Expect<'a> {
                Pull { entries: &'a [usize] },
                Push { entry: usize },
            }
            let mut buffers = vec![Vec::new(); p];
            let mut order: Vec<Vec<Expect<'_>>> = (0..p).map(|_| Vec::new()).collect();
            let mut pulled = 0usize;
            let mut pulled_words = 0u64;
            let hot: BTreeMap<Word, &Vec<usize>> = groups
                .iter()
                .filter(|(_, es)| es.len() > self.config.l1_pull_threshold)
                .map(|(w, es)| (*w, es))
                .collect();
            for (w, es) in &hot {
                let ptr = PimPointer::unpack(*w).expect("packed");
                buffers[ptr.module.0 as usize].extend_from_slice(&[tag::FETCH_CHUNK, ptr.addr.0]);
                order[ptr.module.0 as usize].push(Expect::Pull { entries: es });
                pulled += 1;
                pulled_words += 2;
            }
            for (i, e) in l1_front.iter().enumerate() {
                if e.role != role::FETCH_ALL && hot.contains_key(&e.ptr.pack()) {
                    continue;
                }
                let (lo, hi) = exec[e.range];
                buffers[e.ptr.module.0 as usize].extend_from_slice(&[
                    tag::SCAN_CHUNK,
                    e.ptr.addr.0,
                    lo,
                    hi,
                    e.role,
                ]);
                order[e.ptr.module.0 as usize].push(Expect::Push { entry: i });
            }
            let replies = self.run_round(buffers)?;
            let mut next_front: Vec<Entry> = Vec::new();
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for exp in &order[m] {
                    match exp {
                        Expect::Pull { entries } => {
                            let len = r.word()? as usize;
                            let (chunk, _) = ChunkNode::decode(r.slice(len)?)?;
                            pulled_words += 1 + len as u64;
                            for &ei in entries.iter() {
                                let e = l1_front[ei];
                                let (lo, hi) = exec[e.range];
                                if lvl == 1 {
                                    for (k, c) in chunk.keys.iter().zip(&chunk.children) {
                                        if *k >= lo && *k <= hi && *k != SENTINEL_KEY {
                                            results.push((*k, *c));
                                        }
                                    }
                                } else {
                                    let (fa, sr) = advance_boundary(&chunk, lo, hi, e.role)?;
                                    for ptr in fa {
                                        next_front.push(Entry {
                                            range: e.range,
                                            level: lvl - 1,
                                            ptr,
                                            role: role::FETCH_ALL,
                                        });
                                    }
                                    for (role_w, ptr) in sr {
                                        next_front.push(Entry {
                                            range: e.range,
                                            level: lvl - 1,
                                            ptr,
                                            role: role_w,
                                        });
                                    }
                                }
                            }
                        }
                        Expect::Push { entry } => {
                            let e = l1_front[*entry];
                            if lvl == 1 {
                                let n = r.word()? as usize;
                                for _ in 0..n {
                                    let k = r.word()?;
                                    let c = r.ptr()?;
                                    results.push((k, c));
                                }
                            } else {
                                let nfa = r.word()? as usize;
                                for _ in 0..nfa {
                                    next_front.push(Entry {
                                        range: e.range,
                                        level: lvl - 1,
                                        ptr: r.ptr()?,
                                        role: role::FETCH_ALL,
                                    });
                                }
                                let nsr = r.word()? as usize;
                                for _ in 0..nsr {
                                    let role_w = r.word()?;
                                    next_front.push(Entry {
                                        range: e.range,
                                        level: lvl - 1,
                                        ptr: r.ptr()?,
                                        role: role_w,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            self.metrics.l1_pulls.push((pulled, pulled_words));
            l1_front = next_front;
        }

        // data retrieval; ranges are disjoint so destinations are unique,
        // but combine defensively
        let mut groups: BTreeMap<Word, Vec<usize>> = BTreeMap::new();
        for (i, (_, ptr)) in results.iter().enumerate() {
            groups.entry(ptr.pack()).or_default().push(i);
        }
        let mut out: Vec<(Key, Value)> = Vec::with_capacity(results.len());
        if !groups.is_empty() {
            let mut buffers = vec![Vec::new(); p];
            let mut order: Vec<Vec<&Vec<usize>>> = vec![Vec::new(); p];
            for (w, is) in &groups {
                let ptr = PimPointer::unpack(*w).expect("packed");
                buffers[ptr.module.0 as usize].extend_from_slice(&[tag::FETCH_DATA, ptr.addr.0]);
                order[ptr.module.0 as usize].push(is);
            }
            self.metrics.data_fetches = groups.len();
            let replies = self.run_round(buffers)?;
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for is in &order[m] {
                    let key = r.word()?;
                    let value = r.word()?;
                    let _height = r.word()?;
                    for &i in is.iter() {
                        if results[i].0 != key {
                            return Err(Error::Protocol(
                                "scan data node does not match collected key".into(),
                            ));
                        }
                        out.push((key, value));
                    }
                }
            }
        }
        out.sort_unstable_by_key(|(k, _)| *k);
        Ok(out)
    }
}

/// Host-side mirror of the module boundary step: which children of `chunk`
/// are fully covered by `[lo, hi]` and which remain boundaries.
fn advance_boundary(
    chunk: &ChunkNode,
    lo: Key,
    hi: Key,
    role_w: u64,
) -> Result<(Vec<PimPointer>, Vec<(u64, PimPointer)>)> {
    let mut fa = Vec::new();
    let mut sr = Vec::new();
    match role_w {
        role::FETCH_ALL => fa.extend(chunk.children.iter().copied()),
        role::LEFT => {
            let s = chunk.slot_of(lo)?;
            fa.extend(chunk.children[s + 1..].iter().copied());
            sr.push((role::LEFT, chunk.children[s]));
        }
        role::RIGHT => {
            let s = chunk.slot_of(hi)?;
            fa.extend(chunk.children[..s].iter().copied());
            sr.push((role::RIGHT, chunk.children[s]));
        }
        role::BOTH => {
            let sl = chunk.slot_of(lo)?;
            let sh = chunk.slot_of(hi)?;
            if sl == sh {
                sr.push((role::BOTH, chunk.children[sl]));
            } else {
                fa.extend(chunk.children[sl + 1..sh].iter().copied());
                sr.push((role::LEFT, chunk.children[sl]));
                sr.push((role::RIGHT, chunk.children[sh]));
            }
        }
        other => return Err(Error::Protocol(format!("bad scan role {other}"))),
    }
    Ok((fa, sr))
}
