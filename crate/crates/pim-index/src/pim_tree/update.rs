//! Batch insert and delete.
//!
//! Both follow the same shape: search with trace recording, one fetch round
//! that gathers everything the host must see (tails of split nodes or the
//! contents of dying nodes, along with the shadow fragments of moved
//! subtrees), host-side planning so that every physical node is written by
//! exactly one task, then one write round carrying chunk edits, new-node
//! writes, and shadow repairs. Keys tall enough for the replicated top
//! layer additionally cost one broadcast round for the delta.
//!
//! Shadow repairs are expressed as edit programs per owning node. Ops are
//! ordered fragments-first, then by ascending level, so a lower-level split
//! or merge always creates or empties the copies that higher-level ops
//! reference.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::Rng;

use crate::pim_model::{ModuleId, PimPointer, Word};
use crate::pim_tree::config::generate_height;
use crate::pim_tree::node::{shadow_op, HostShadow, HostShadowChild};
use crate::pim_tree::wire::{edit_flag, tag, WordReader};
use crate::pim_tree::PimTree;
use crate::{Error, Key, Result, Value, SENTINEL_KEY};

/// Accumulated single-write edit of one chunk.
#[derive(Default, Clone)]
struct EditSpec {
    dels: Vec<Key>,
    cut: Option<Key>,
    ins: Vec<(Key, PimPointer)>,
    next: Option<Option<PimPointer>>,
    prev: Option<Option<PimPointer>>,
}

impl EditSpec {
    fn encode(&self, addr: u64, out: &mut Vec<Word>) {
        let mut flags = 0u64;
        if self.cut.is_some() {
            flags |= edit_flag::CUT;
        }
        if self.next.is_some() {
            flags |= edit_flag::SET_NEXT;
        }
        if self.prev.is_some() {
            flags |= edit_flag::SET_PREV;
        }
        out.extend_from_slice(&[tag::EDIT_CHUNK, addr, flags]);
        if let Some(c) = self.cut {
            out.push(c);
        }
        if let Some(n) = self.next {
            out.push(PimPointer::pack_opt(n));
        }
        if let Some(p) = self.prev {
            out.push(PimPointer::pack_opt(p));
        }
        out.push(self.dels.len() as u64);
        out.extend_from_slice(&self.dels);
        out.push(self.ins.len() as u64);
        for (k, c) in &self.ins {
            out.push(*k);
            out.push(c.pack());
        }
    }
}

/// Shadow edit program under assembly for one owning node.
#[derive(Default)]
struct OwnerPlan {
    frags: Vec<Word>,
    /// (level, rank, origin, key, words) — sorted before encoding so the
    /// stream applies bottom-up with creators before referers.
    ops: Vec<(u8, u8, Word, Key, Vec<Word>)>,
}

const RANK_DEL: u8 = 0;
const RANK_SPLIT: u8 = 1;
const RANK_MERGE: u8 = 2;
const RANK_ABSORB: u8 = 3;
const RANK_INS: u8 = 4;

impl OwnerPlan {
    fn encode(&mut self, owner_addr: u64, out: &mut Vec<Word>) {
        self.ops.sort_by_key(|op| (op.0, op.1, op.2, op.3));
        let mut body = std::mem::take(&mut self.frags);
        for (_, _, _, _, words) in &self.ops {
            body.extend_from_slice(words);
        }
        out.extend_from_slice(&[tag::SHADOW_OPS, owner_addr, body.len() as u64]);
        out.extend_from_slice(&body);
    }
}

/// Everything fetched about one node that is being split or dissolved.
struct FetchedNode {
    keys: Vec<Key>,
    children: Vec<PimPointer>,
    prev: Option<PimPointer>,
    next: Option<PimPointer>,
    /// Shadow subtree of each listed entry (middle layer above the bottom
    /// middle level only).
    frags: HashMap<Key, HostShadow>,
}

impl PimTree {
    /// Inserts all pairs; an existing key becomes a value update. In-batch
    /// duplicates combine last-wins. Heights are drawn from the tree's rng
    /// in first-occurrence order of the deduplicated keys.
    pub fn insert_batch(&mut self, pairs: &[(Key, Value)]) -> Result<()> {
        self.metrics = Default::default();
        if pairs.is_empty() {
            return Ok(());
        }
        let items = dedup_last_wins(pairs)?;
        let heights: Vec<u8> = items
            .iter()
            .map(|_| generate_height(self.config.fanout, &mut self.rng))
            .collect();
        self.last_heights = items
            .iter()
            .zip(&heights)
            .map(|((k, _), h)| (*k, *h))
            .collect();
        self.insert_prepared(&items, &heights)
    }

    /// Insert with caller-chosen heights, for deterministic structural
    /// replays. `pairs` must be duplicate-free with one height per pair.
    #[doc(hidden)]
    pub fn insert_batch_with_heights(
        &mut self,
        pairs: &[(Key, Value)],
        heights: &[u8],
    ) -> Result<()> {
        self.metrics = Default::default();
        if pairs.len() != heights.len() {
            return Err(Error::Config("one height per pair required".into()));
        }
        let mut seen = HashSet::new();
        for (k, _) in pairs {
            if *k == SENTINEL_KEY {
                return Err(Error::ReservedKey);
            }
            if !seen.insert(*k) {
                return Err(Error::Config(format!("duplicate key {k}")));
            }
        }
        if heights.contains(&0) {
            return Err(Error::Config("heights start at 1".into()));
        }
        self.last_heights = pairs
            .iter()
            .zip(heights)
            .map(|((k, _), h)| (*k, *h))
            .collect();
        self.insert_prepared(pairs, heights)
    }

    fn insert_prepared(&mut self, items: &[(Key, Value)], heights: &[u8]) -> Result<()> {
        let p = self.config.modules;
        let l1 = self.config.l1_levels;
        let top = self.config.total_levels();
        let keys: Vec<Key> = items.iter().map(|(k, _)| *k).collect();
        let depths: Vec<u8> = heights
            .iter()
            .map(|h| if *h > l1 { top } else { *h })
            .collect();

        let outcome = self.search_engine(&keys, Some(&depths))?;
        let traces = outcome.traces.as_ref().expect("trace mode");
        let trace_at = |q: usize, lvl: u8| -> Result<PimPointer> {
            traces[q]
                .iter()
                .find(|(l, _)| *l == lvl)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::Protocol(format!("trace of {} misses level {lvl}", keys[q])))
        };

        let mut fresh: Vec<usize> = Vec::new();
        let mut updates: Vec<usize> = Vec::new();
        for q in 0..items.len() {
            if outcome.pred_keys[q] == keys[q] {
                updates.push(q);
            } else {
                fresh.push(q);
            }
        }

        // per-(level, node) insertion plans over the fresh keys
        let mut plans: BTreeMap<(u8, Word), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for &q in &fresh {
            let h = heights[q];
            for lvl in 1..=h.min(top) {
                let node = trace_at(q, lvl)?;
                let plan = plans.entry((lvl, node.pack())).or_default();
                if h > lvl {
                    plan.0.push(q); // splitter: becomes a pivot at this level
                } else {
                    plan.1.push(q); // joiner: stays a member at this level
                }
            }
        }
        for (splitters, joiners) in plans.values_mut() {
            splitters.sort_by_key(|q| keys[*q]);
            joiners.sort_by_key(|q| keys[*q]);
        }

        // new chunks: one per fresh key and level below its height
        let mut new_chunk_order: Vec<(u8, usize)> = Vec::new();
        for lvl in 1..=top {
            let mut at_level: Vec<usize> = fresh
                .iter()
                .copied()
                .filter(|q| lvl <= (heights[*q] - 1).min(top))
                .collect();
            at_level.sort_by_key(|q| keys[*q]);
            new_chunk_order.extend(at_level.into_iter().map(|q| (lvl, q)));
        }

        // fetch round: allocations, split tails, data upserts, updates
        let mut buffers = vec![Vec::new(); p];
        enum Expect {
            Alloc { lvl: u8, q: usize },
            Tail { lvl: u8, node: Word },
            Data { q: usize },
            Flag,
        }
        let mut order: Vec<Vec<Expect>> = (0..p).map(|_| Vec::new()).collect();
        let mut alloc_modules: HashMap<(u8, Key), ModuleId> = HashMap::new();
        for &(lvl, q) in &new_chunk_order {
            let m = ModuleId(self.rng.gen_range(0..p as u32));
            alloc_modules.insert((lvl, keys[q]), m);
            buffers[m.0 as usize].extend_from_slice(&[tag::ALLOC_CHUNK, lvl as u64]);
            order[m.0 as usize].push(Expect::Alloc { lvl, q });
        }
        for ((lvl, node_w), (splitters, _)) in &plans {
            if splitters.is_empty() {
                continue;
            }
            let node = PimPointer::unpack(*node_w).expect("packed");
            let min_split = keys[splitters[0]];
            buffers[node.module.0 as usize].extend_from_slice(&[
                tag::FETCH_TAIL,
                node.addr.0,
                min_split,
            ]);
            order[node.module.0 as usize].push(Expect::Tail {
                lvl: *lvl,
                node: *node_w,
            });
        }
        {
            let mut fresh_sorted = fresh.clone();
            fresh_sorted.sort_by_key(|q| keys[*q]);
            for q in fresh_sorted {
                let m = crate::pim_model::key_module(keys[q], p);
                buffers[m.0 as usize].extend_from_slice(&[
                    tag::PUT_DATA,
                    keys[q],
                    items[q].1,
                    heights[q] as u64,
                ]);
                order[m.0 as usize].push(Expect::Data { q });
            }
            let mut upd_sorted = updates.clone();
            upd_sorted.sort_by_key(|q| keys[*q]);
            for q in upd_sorted {
                let m = crate::pim_model::key_module(keys[q], p);
                buffers[m.0 as usize].extend_from_slice(&[tag::UPDATE, keys[q], items[q].1]);
                order[m.0 as usize].push(Expect::Flag);
            }
        }

        if fresh.is_empty() && updates.is_empty() {
            return Ok(());
        }

        let mut new_ptrs: HashMap<(u8, Key), PimPointer> = HashMap::new();
        let mut tails: HashMap<(u8, Word), FetchedNode> = HashMap::new();
        let mut data_ptrs: HashMap<Key, PimPointer> = HashMap::new();
        let replies = self.run_round(buffers)?;
        for m in 0..p {
            let mut r = WordReader::new(&replies[m]);
            for e in &order[m] {
                match e {
                    Expect::Alloc { lvl, q } => {
                        let addr = r.word()?;
                        let ptr = PimPointer::new(
                            ModuleId(m as u32),
                            crate::pim_model::LocalAddress(addr),
                        );
                        new_ptrs.insert((*lvl, keys[*q]), ptr);
                    }
                    Expect::Tail { lvl, node } => {
                        let fetched = decode_tail(&mut r, *lvl, l1)?;
                        tails.insert((*lvl, *node), fetched);
                    }
                    Expect::Data { q } => {
                        let addr = r.word()?;
                        let m_id = crate::pim_model::key_module(keys[*q], p);
                        data_ptrs.insert(
                            keys[*q],
                            PimPointer::new(m_id, crate::pim_model::LocalAddress(addr)),
                        );
                    }
                    Expect::Flag => {
                        let _ = r.word()?;
                    }
                }
            }
        }

        if fresh.is_empty() {
            return Ok(());
        }

        // host planning: contents of every new chunk, one edit per old node
        let child_of = |lvl: u8, k: Key| -> Result<PimPointer> {
            if lvl == 1 {
                data_ptrs
                    .get(&k)
                    .copied()
                    .ok_or_else(|| Error::Protocol(format!("no data node for {k}")))
            } else {
                new_ptrs
                    .get(&(lvl - 1, k))
                    .copied()
                    .ok_or_else(|| Error::Protocol(format!("no new chunk for {k} at {}", lvl - 1)))
            }
        };

        let mut edits: BTreeMap<Word, EditSpec> = BTreeMap::new();
        // contents per new chunk: (keys, children, source node), per plan
        let mut contents: BTreeMap<(u8, Key), (Vec<Key>, Vec<PimPointer>, Word)> = BTreeMap::new();
        let mut l3_delta: Vec<Word> = Vec::new();

        for ((lvl, node_w), (splitters, joiners)) in &plans {
            let lvl = *lvl;
            let node = PimPointer::unpack(*node_w).expect("packed");
            if splitters.is_empty() {
                let e = edits.entry(*node_w).or_default();
                for &q in joiners {
                    e.ins.push((keys[q], child_of(lvl, keys[q])?));
                }
                continue;
            }
            let tail = tails
                .get(&(lvl, *node_w))
                .ok_or_else(|| Error::Protocol("missing tail fetch".into()))?;
            let bounds: Vec<Key> = splitters.iter().map(|q| keys[*q]).collect();
            let seg_of = |k: Key| -> usize { bounds.partition_point(|b| *b <= k) };
            // segment 0 stays in the old node
            let mut seg_entries: Vec<Vec<(Key, PimPointer)>> = vec![Vec::new(); bounds.len() + 1];
            for (k, c) in tail.keys.iter().zip(&tail.children) {
                seg_entries[seg_of(*k)].push((*k, *c));
            }
            for &q in joiners {
                let k = keys[q];
                seg_entries[seg_of(k)].push((k, child_of(lvl, k)?));
            }
            for seg in &mut seg_entries {
                seg.sort_by_key(|(k, _)| *k);
            }

            let e = edits.entry(*node_w).or_default();
            e.cut = Some(bounds[0]);
            for (k, c) in &seg_entries[0] {
                e.ins.push((*k, *c));
            }
            e.next = Some(Some(new_ptrs[&(lvl, bounds[0])]));

            let mut chain_prev = node;
            for (j, &b) in bounds.iter().enumerate() {
                let ptr = new_ptrs[&(lvl, b)];
                let mut ck = vec![b];
                let mut cc = vec![child_of(lvl, b)?];
                for (k, c) in &seg_entries[j + 1] {
                    ck.push(*k);
                    cc.push(*c);
                }
                contents.insert((lvl, b), (ck, cc, *node_w));
                // horizontal chain: prev set here, next set below or to the
                // old node's former right neighbor
                let next = if j + 1 < bounds.len() {
                    Some(new_ptrs[&(lvl, bounds[j + 1])])
                } else {
                    tail.next
                };
                let spec = edits.entry(ptr.pack()).or_default();
                spec.prev = Some(Some(chain_prev));
                spec.next = Some(next);
                chain_prev = ptr;
            }
            if let Some(right) = tail.next {
                edits.entry(right.pack()).or_default().prev = Some(Some(chain_prev));
            }
        }
        // plans without splitters produced pure-insert edits above; chunks
        // with neither (pure data updates) never reach here

        for &q in &fresh {
            if heights[q] > top {
                let ptr = new_ptrs[&(top, keys[q])];
                self.l3.map.insert(keys[q], ptr);
                l3_delta.extend_from_slice(&[1, keys[q], ptr.pack()]);
            }
        }

        // shadow planning
        let mut owners: BTreeMap<Word, OwnerPlan> = BTreeMap::new();
        for ((lvl, node_w), (splitters, joiners)) in &plans {
            let lvl = *lvl;
            if lvl <= l1 {
                continue;
            }
            let rep = splitters
                .first()
                .or(joiners.first())
                .copied()
                .expect("plan not empty");
            let bounds: Vec<Key> = splitters.iter().map(|q| keys[*q]).collect();

            // owning piece of a joiner after segmentation
            let piece_of = |k: Key| -> Word {
                let s = bounds.partition_point(|b| *b <= k);
                if s == 0 {
                    *node_w
                } else {
                    new_ptrs[&(lvl, bounds[s - 1])].pack()
                }
            };

            // the split node itself trims and keeps its own joiners
            {
                let plan = owners.entry(*node_w).or_default();
                if !bounds.is_empty() {
                    plan.ops.push((
                        lvl,
                        RANK_SPLIT,
                        *node_w,
                        bounds[0],
                        vec![shadow_op::TRIM, *node_w, bounds[0]],
                    ));
                }
                for &q in joiners {
                    let k = keys[q];
                    if piece_of(k) == *node_w {
                        plan.ops.push((
                            lvl,
                            RANK_INS,
                            *node_w,
                            k,
                            vec![shadow_op::INS, *node_w, k, child_of(lvl, k)?.pack()],
                        ));
                    }
                }
            }

            // ancestors above this level get the full split and all joiners
            for anc_lvl in (lvl + 1)..=top {
                let anc = trace_at(rep, anc_lvl)?;
                let plan = owners.entry(anc.pack()).or_default();
                if !bounds.is_empty() {
                    let mut words = vec![shadow_op::SPLITS, *node_w, bounds.len() as u64];
                    for &b in &bounds {
                        words.push(b);
                        words.push(new_ptrs[&(lvl, b)].pack());
                        words.push(child_of(lvl, b)?.pack());
                    }
                    plan.ops.push((lvl, RANK_SPLIT, *node_w, bounds[0], words));
                }
                for &q in joiners {
                    let k = keys[q];
                    plan.ops.push((
                        lvl,
                        RANK_INS,
                        piece_of(k),
                        k,
                        vec![shadow_op::INS, piece_of(k), k, child_of(lvl, k)?.pack()],
                    ));
                }
            }
        }

        // Shadow builds for the new middle-layer chunks. Fetched fragments
        // are pre-batch state, so assembly re-applies this batch's plans to
        // every embedded old subtree: the built shadow must already be the
        // post-batch picture.
        let mut fresh_pivot_levels: BTreeSet<(u8, Key)> = BTreeSet::new();
        for &(lvl, q) in &new_chunk_order {
            fresh_pivot_levels.insert((lvl, keys[q]));
        }
        let mut assembler = ShadowAssembler {
            l1,
            keys: &keys,
            plans: &plans,
            contents: &contents,
            tails: &tails,
            new_ptrs: &new_ptrs,
            data_ptrs: &data_ptrs,
            fresh_pivots: &fresh_pivot_levels,
            memo_new: BTreeMap::new(),
        };
        let mut built: BTreeMap<(u8, Key), HostShadow> = BTreeMap::new();
        for &(lvl, q) in &new_chunk_order {
            if lvl <= l1 {
                continue;
            }
            let hs = assembler.post_new(lvl, keys[q])?;
            built.insert((lvl, keys[q]), hs);
        }

        // write round
        let mut buffers = vec![Vec::new(); p];
        for ((lvl, k), (ck, cc, _)) in &contents {
            let ptr = new_ptrs[&(*lvl, *k)];
            let spec = edits.remove(&ptr.pack()).unwrap_or_default();
            let chunk = crate::pim_tree::node::ChunkNode {
                level: *lvl,
                keys: ck.clone(),
                children: cc.clone(),
                prev: spec.prev.flatten(),
                next: spec.next.flatten(),
                shadow: None,
            };
            let mut wire = Vec::with_capacity(chunk.wire_words() as usize);
            chunk.encode(&mut wire);
            let buf = &mut buffers[ptr.module.0 as usize];
            buf.extend_from_slice(&[tag::WRITE_CHUNK, ptr.addr.0, wire.len() as u64]);
            buf.extend_from_slice(&wire);
        }
        for (node_w, spec) in &edits {
            let ptr = PimPointer::unpack(*node_w).expect("packed");
            spec.encode(ptr.addr.0, &mut buffers[ptr.module.0 as usize]);
        }
        for (owner_w, plan) in owners.iter_mut() {
            let ptr = PimPointer::unpack(*owner_w).expect("packed");
            plan.encode(ptr.addr.0, &mut buffers[ptr.module.0 as usize]);
        }
        for ((_lvl, _k), hs) in &built {
            let ptr = hs.origin;
            let mut ser = Vec::with_capacity(hs.encoded_words() as usize);
            hs.encode(&mut ser);
            let buf = &mut buffers[ptr.module.0 as usize];
            buf.extend_from_slice(&[tag::SHADOW_BUILD, ptr.addr.0, ser.len() as u64]);
            buf.extend_from_slice(&ser);
        }
        let _ = self.run_round(buffers)?;

        if !l3_delta.is_empty() {
            self.run_broadcast_round(&l3_delta)?;
        }

        self.live_keys += fresh.len() as u64;
        Ok(())
    }

    /// Deletes the given keys. Absent keys (and the sentinel) are filtered
    /// out during preprocessing; duplicates are idempotent.
    pub fn delete_batch(&mut self, keys: &[Key]) -> Result<()> {
        self.metrics = Default::default();
        let requested: BTreeSet<Key> = keys
            .iter()
            .copied()
            .filter(|k| *k != SENTINEL_KEY)
            .collect();
        if requested.is_empty() {
            return Ok(());
        }
        let p = self.config.modules;
        let l1 = self.config.l1_levels;
        let top = self.config.total_levels();

        // preprocess: learn heights, drop invalid deletes
        let mut buffers = vec![Vec::new(); p];
        let mut order: Vec<Vec<Key>> = vec![Vec::new(); p];
        for k in &requested {
            let m = crate::pim_model::key_module(*k, p);
            buffers[m.0 as usize].extend_from_slice(&[tag::GET_HEIGHT, *k]);
            order[m.0 as usize].push(*k);
        }
        let replies = self.run_round(buffers)?;
        let mut heights: BTreeMap<Key, u8> = BTreeMap::new();
        for m in 0..p {
            let mut r = WordReader::new(&replies[m]);
            for k in &order[m] {
                let found = r.word()?;
                let h = r.word()? as u8;
                if found == 1 {
                    heights.insert(*k, h);
                }
            }
        }
        if heights.is_empty() {
            return Ok(());
        }

        let victim_keys: Vec<Key> = heights.keys().copied().collect();
        let victim_heights: Vec<u8> = victim_keys.iter().map(|k| heights[k]).collect();
        let depths: Vec<u8> = victim_heights
            .iter()
            .map(|h| if *h > l1 { top } else { *h })
            .collect();
        let outcome = self.search_engine(&victim_keys, Some(&depths))?;
        let traces = outcome.traces.as_ref().expect("trace mode");
        for (q, k) in victim_keys.iter().enumerate() {
            if outcome.pred_keys[q] != *k {
                return Err(Error::Protocol(format!(
                    "delete search failed to land on stored key {k}"
                )));
            }
        }
        let trace_at = |q: usize, lvl: u8| -> Result<PimPointer> {
            traces[q]
                .iter()
                .find(|(l, _)| *l == lvl)
                .map(|(_, p)| *p)
                .ok_or_else(|| {
                    Error::Protocol(format!("trace of {} misses level {lvl}", victim_keys[q]))
                })
        };

        // dying chunks: every level where a deleted key is the pivot
        let mut dying: BTreeMap<(u8, Word), usize> = BTreeMap::new(); // node -> victim q
        for q in 0..victim_keys.len() {
            let h = victim_heights[q];
            // pivot of its own chunk at every level below its height
            for lvl in 1..=(h - 1).min(top) {
                dying.insert((lvl, trace_at(q, lvl)?.pack()), q);
            }
        }
        let dying_words: HashSet<Word> = dying.keys().map(|(_, w)| *w).collect();

        // fetch round: contents and fragments of every dying chunk
        let mut buffers = vec![Vec::new(); p];
        let mut order: Vec<Vec<(u8, Word)>> = vec![Vec::new(); p];
        for (lvl, w) in dying.keys() {
            let ptr = PimPointer::unpack(*w).expect("packed");
            buffers[ptr.module.0 as usize].extend_from_slice(&[tag::FETCH_FULL, ptr.addr.0]);
            order[ptr.module.0 as usize].push((*lvl, *w));
        }
        let mut fetched: HashMap<Word, FetchedNode> = HashMap::new();
        if !dying.is_empty() {
            let replies = self.run_round(buffers)?;
            for m in 0..p {
                let mut r = WordReader::new(&replies[m]);
                for (lvl, w) in &order[m] {
                    let node = decode_full(&mut r, *lvl, l1)?;
                    fetched.insert(*w, node);
                }
            }
        }

        // group dying chunks into horizontal runs and pick merge targets
        struct Run {
            level: u8,
            target: PimPointer,
            members: Vec<Word>,
            new_next: Option<PimPointer>,
        }
        let mut runs: Vec<Run> = Vec::new();
        let mut run_target: HashMap<Word, PimPointer> = HashMap::new();
        {
            let mut by_level: BTreeMap<u8, Vec<Word>> = BTreeMap::new();
            for (lvl, w) in dying.keys() {
                by_level.entry(*lvl).or_default().push(*w);
            }
            for (lvl, words) in by_level {
                let mut sorted = words;
                sorted.sort_by_key(|w| fetched[w].keys[0]);
                for w in sorted {
                    let prev = fetched[&w].prev.ok_or_else(|| {
                        Error::Protocol("dying chunk with no left neighbor".into())
                    })?;
                    if dying_words.contains(&prev.pack()) && run_target.contains_key(&prev.pack()) {
                        // continues the run of its left neighbor
                        let target = run_target[&prev.pack()];
                        run_target.insert(w, target);
                        let run = runs.last_mut().expect("run exists");
                        run.members.push(w);
                        run.new_next = fetched[&w].next;
                    } else if dying_words.contains(&prev.pack()) {
                        return Err(Error::Protocol("dying run visited out of order".into()));
                    } else {
                        run_target.insert(w, prev);
                        runs.push(Run {
                            level: lvl,
                            target: prev,
                            members: vec![w],
                            new_next: fetched[&w].next,
                        });
                    }
                }
            }
        }

        // physical edits
        let mut edits: BTreeMap<Word, EditSpec> = BTreeMap::new();
        let mut frees: BTreeSet<Word> = BTreeSet::new();
        let deleted: HashSet<Key> = victim_keys.iter().copied().collect();
        for run in &runs {
            let e = edits.entry(run.target.pack()).or_default();
            for w in &run.members {
                let node = &fetched[w];
                for (k, c) in node.keys.iter().zip(&node.children) {
                    if !deleted.contains(k) {
                        e.ins.push((*k, *c));
                    }
                }
                frees.insert(*w);
            }
            e.next = Some(run.new_next);
            if let Some(right) = run.new_next {
                if !dying_words.contains(&right.pack()) {
                    edits.entry(right.pack()).or_default().prev = Some(Some(run.target));
                }
            }
        }
        // non-pivot removals from surviving chunks
        for q in 0..victim_keys.len() {
            let h = victim_heights[q];
            if h <= top {
                let holder = trace_at(q, h)?;
                if !dying_words.contains(&holder.pack()) {
                    edits
                        .entry(holder.pack())
                        .or_default()
                        .dels
                        .push(victim_keys[q]);
                }
            }
        }

        // shadow planning
        let container = |q: usize, lvl: u8| -> Result<PimPointer> {
            let t = trace_at(q, lvl)?;
            Ok(if dying_words.contains(&t.pack()) {
                run_target[&t.pack()]
            } else {
                t
            })
        };
        let mut owners: BTreeMap<Word, OwnerPlan> = BTreeMap::new();
        // key removals
        for q in 0..victim_keys.len() {
            let h = victim_heights[q];
            if h <= l1 {
                continue;
            }
            let k = victim_keys[q];
            for lvl in (l1 + 1)..=h.min(top) {
                let holder = trace_at(q, lvl)?;
                let op = vec![shadow_op::DEL, holder.pack(), k];
                if !dying_words.contains(&holder.pack()) {
                    owners.entry(holder.pack()).or_default().ops.push((
                        lvl,
                        RANK_DEL,
                        holder.pack(),
                        k,
                        op.clone(),
                    ));
                }
                for up in (lvl + 1)..=top {
                    let owner = container(q, up)?;
                    owners.entry(owner.pack()).or_default().ops.push((
                        lvl,
                        RANK_DEL,
                        holder.pack(),
                        k,
                        op.clone(),
                    ));
                }
            }
        }
        // merges: ancestors move copies locally, targets absorb fragments
        for run in &runs {
            let lvl = run.level;
            if lvl <= l1 {
                continue;
            }
            for w in &run.members {
                let q = dying[&(lvl, *w)];
                let op = vec![shadow_op::MERGE, run.target.pack(), *w];
                for up in (lvl + 1)..=top {
                    let owner = container(q, up)?;
                    owners.entry(owner.pack()).or_default().ops.push((
                        lvl,
                        RANK_MERGE,
                        run.target.pack(),
                        fetched[w].keys[0],
                        op.clone(),
                    ));
                }
            }
            // The target's own shadow gains the remainder. Fragments ship
            // for every entry, deleted ones included: lower-level removals
            // and merges inside the absorbed region are addressed at this
            // owner and must find their copies; emptied leftovers are
            // purged by the deletion of their parent entries.
            let plan = owners.entry(run.target.pack()).or_default();
            let mut absorb = vec![shadow_op::ABSORB, run.target.pack(), 0];
            let mut count = 0u64;
            for w in &run.members {
                let node = &fetched[w];
                for (k, c) in node.keys.iter().zip(&node.children) {
                    if lvl > l1 + 1 {
                        let frag = node.frags.get(k).ok_or_else(|| {
                            Error::Protocol(format!("missing fragment for key {k}"))
                        })?;
                        plan.frags.push(shadow_op::FRAG);
                        frag.encode(&mut plan.frags);
                    }
                    if deleted.contains(k) {
                        continue;
                    }
                    absorb.push(*k);
                    absorb.push(c.pack());
                    count += 1;
                }
            }
            absorb[2] = count;
            plan.ops.push((
                lvl,
                RANK_ABSORB,
                run.target.pack(),
                fetched[&run.members[0]].keys[0],
                absorb,
            ));
        }

        // top-layer removals
        let mut l3_delta: Vec<Word> = Vec::new();
        for (q, k) in victim_keys.iter().enumerate() {
            if victim_heights[q] > top {
                self.l3.map.remove(k);
                l3_delta.extend_from_slice(&[0, *k]);
            }
        }

        // write round: edits, frees, data removals, shadow repairs
        let mut buffers = vec![Vec::new(); p];
        for (node_w, spec) in &edits {
            let ptr = PimPointer::unpack(*node_w).expect("packed");
            spec.encode(ptr.addr.0, &mut buffers[ptr.module.0 as usize]);
        }
        for (owner_w, plan) in owners.iter_mut() {
            let ptr = PimPointer::unpack(*owner_w).expect("packed");
            if dying_words.contains(owner_w) {
                continue; // its shadow dies with it
            }
            plan.encode(ptr.addr.0, &mut buffers[ptr.module.0 as usize]);
        }
        for w in &frees {
            let ptr = PimPointer::unpack(*w).expect("packed");
            buffers[ptr.module.0 as usize].extend_from_slice(&[tag::FREE_CHUNK, ptr.addr.0]);
        }
        for k in &victim_keys {
            let m = crate::pim_model::key_module(*k, p);
            buffers[m.0 as usize].extend_from_slice(&[tag::DEL_DATA, *k]);
        }
        let _ = self.run_round(buffers)?;

        if !l3_delta.is_empty() {
            self.run_broadcast_round(&l3_delta)?;
        }

        self.live_keys -= victim_keys.len() as u64;
        Ok(())
    }
}

/// Assembles post-batch shadow subtrees for newly created middle-layer
/// chunks: new pieces come from the planned contents, embedded old
/// subtrees come from fetched fragments re-run through the same plans.
struct ShadowAssembler<'a> {
    l1: u8,
    keys: &'a [Key],
    plans: &'a BTreeMap<(u8, Word), (Vec<usize>, Vec<usize>)>,
    contents: &'a BTreeMap<(u8, Key), (Vec<Key>, Vec<PimPointer>, Word)>,
    tails: &'a HashMap<(u8, Word), FetchedNode>,
    new_ptrs: &'a HashMap<(u8, Key), PimPointer>,
    data_ptrs: &'a HashMap<Key, PimPointer>,
    fresh_pivots: &'a BTreeSet<(u8, Key)>,
    memo_new: BTreeMap<(u8, Key), HostShadow>,
}

impl ShadowAssembler<'_> {
    fn child_ref(&self, lvl: u8, k: Key) -> Result<PimPointer> {
        if lvl == 1 {
            self.data_ptrs
                .get(&k)
                .copied()
                .ok_or_else(|| Error::Protocol(format!("no data node for {k}")))
        } else {
            self.new_ptrs
                .get(&(lvl - 1, k))
                .copied()
                .ok_or_else(|| Error::Protocol(format!("no new chunk for {k} at {}", lvl - 1)))
        }
    }

    fn post_new(&mut self, lvl: u8, k: Key) -> Result<HostShadow> {
        if let Some(hs) = self.memo_new.get(&(lvl, k)) {
            return Ok(hs.clone());
        }
        let (ck, cc, src) = self
            .contents
            .get(&(lvl, k))
            .ok_or_else(|| Error::Protocol(format!("new chunk {k} at {lvl} has no contents")))?;
        let mut children = Vec::with_capacity(ck.len());
        for (ek, ec) in ck.iter().zip(cc) {
            if lvl == self.l1 + 1 {
                children.push(HostShadowChild::Leaf(*ec));
            } else if self.fresh_pivots.contains(&(lvl - 1, *ek)) {
                let sub = self.post_new(lvl - 1, *ek)?;
                children.push(HostShadowChild::Sub(Box::new(sub)));
            } else {
                let pre = self
                    .tails
                    .get(&(lvl, *src))
                    .and_then(|t| t.frags.get(ek))
                    .ok_or_else(|| {
                        Error::Protocol(format!("missing fragment for {ek} at level {lvl}"))
                    })?
                    .clone();
                children.push(HostShadowChild::Sub(Box::new(self.post_old(&pre)?)));
            }
        }
        let hs = HostShadow {
            origin: self.new_ptrs[&(lvl, k)],
            level: lvl,
            keys: ck.clone(),
            children,
        };
        self.memo_new.insert((lvl, k), hs.clone());
        Ok(hs)
    }

    /// Transforms a pre-batch subtree copy into its post-batch state by
    /// applying the plan of every node it contains.
    fn post_old(&mut self, pre: &HostShadow) -> Result<HostShadow> {
        let lvl = pre.level;
        let plan = self.plans.get(&(lvl, pre.origin.pack()));
        let (cut, joiners): (Option<Key>, Vec<Key>) = match plan {
            Some((splitters, joiners)) => {
                let js: Vec<Key> = joiners.iter().map(|q| self.keys[*q]).collect();
                match splitters.first() {
                    Some(&q0) => {
                        let bound = self.keys[q0];
                        (Some(bound), js.into_iter().filter(|k| *k < bound).collect())
                    }
                    None => (None, js),
                }
            }
            None => (None, Vec::new()),
        };
        enum Src<'p> {
            OldLeaf(PimPointer),
            OldSub(&'p HostShadow),
            Joiner,
        }
        let mut entries: Vec<(Key, Src<'_>)> = Vec::new();
        for (ek, ec) in pre.keys.iter().zip(&pre.children) {
            if cut.is_some_and(|c| *ek > c) {
                continue;
            }
            entries.push((
                *ek,
                match ec {
                    HostShadowChild::Leaf(p) => Src::OldLeaf(*p),
                    HostShadowChild::Sub(s) => Src::OldSub(s),
                },
            ));
        }
        entries.extend(joiners.into_iter().map(|k| (k, Src::Joiner)));
        entries.sort_by_key(|(k, _)| *k);

        let mut keys = Vec::with_capacity(entries.len());
        let mut children = Vec::with_capacity(entries.len());
        for (ek, src) in entries {
            keys.push(ek);
            children.push(match src {
                Src::OldLeaf(p) => HostShadowChild::Leaf(p),
                Src::OldSub(s) => {
                    let s = s.clone();
                    HostShadowChild::Sub(Box::new(self.post_old(&s)?))
                }
                Src::Joiner => {
                    let ptr = self.child_ref(lvl, ek)?;
                    if lvl == self.l1 + 1 {
                        HostShadowChild::Leaf(ptr)
                    } else {
                        HostShadowChild::Sub(Box::new(self.post_new(lvl - 1, ek)?))
                    }
                }
            });
        }
        Ok(HostShadow {
            origin: pre.origin,
            level: lvl,
            keys,
            children,
        })
    }
}

fn dedup_last_wins(pairs: &[(Key, Value)]) -> Result<Vec<(Key, Value)>> {
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut items: Vec<(Key, Value)> = Vec::new();
    for (k, v) in pairs {
        if *k == SENTINEL_KEY {
            return Err(Error::ReservedKey);
        }
        match index.get(k) {
            Some(&i) => items[i].1 = *v,
            None => {
                index.insert(*k, items.len());
                items.push((*k, *v));
            }
        }
    }
    Ok(items)
}

fn decode_tail(r: &mut WordReader<'_>, lvl: u8, l1: u8) -> Result<FetchedNode> {
    let n = r.word()? as usize;
    let mut keys = Vec::with_capacity(n);
    let mut children = Vec::with_capacity(n);
    for _ in 0..n {
        keys.push(r.word()?);
        children.push(r.ptr()?);
    }
    let next = r.opt_ptr()?;
    let nfrag = r.word()? as usize;
    let mut frags = HashMap::new();
    if nfrag > 0 {
        // fragments arrive in tail order
        let rest = r.slice_rest();
        let mut pos = 0;
        for i in 0..nfrag {
            let hs = HostShadow::decode(rest, &mut pos, l1)?;
            frags.insert(keys[i], hs);
        }
        r.advance(pos)?;
    }
    debug_assert!(nfrag == 0 || lvl > l1 + 1);
    Ok(FetchedNode {
        keys,
        children,
        prev: None,
        next,
        frags,
    })
}

fn decode_full(r: &mut WordReader<'_>, lvl: u8, l1: u8) -> Result<FetchedNode> {
    let len = r.word()? as usize;
    let (chunk, used) = crate::pim_tree::node::ChunkNode::decode(r.slice(len)?)?;
    if used != len {
        return Err(Error::Protocol("chunk fetch length mismatch".into()));
    }
    if chunk.level != lvl {
        return Err(Error::Protocol("fetched chunk level mismatch".into()));
    }
    let nfrag = r.word()? as usize;
    let mut frags = HashMap::new();
    if nfrag > 0 {
        let rest = r.slice_rest();
        let mut pos = 0;
        for i in 0..nfrag {
            let hs = HostShadow::decode(rest, &mut pos, l1)?;
            frags.insert(chunk.keys[i], hs);
        }
        r.advance(pos)?;
    }
    Ok(FetchedNode {
        keys: chunk.keys,
        children: chunk.children,
        prev: chunk.prev,
        next: chunk.next,
        frags,
    })
}
