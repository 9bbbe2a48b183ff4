//! On-module objects of the tree: chunk nodes, data nodes, and shadow
//! subtrees, plus their word-level wire encodings.
//!
//! Wire conventions (all costs in 8-byte words): a key, a value, a pointer,
//! a tag, and a length field each cost one word. A chunk travels as
//! `[meta, prev, next, keys.., children..]` where `meta` packs the level in
//! the low 8 bits and the entry count above, so a chunk with `n` entries
//! costs `3 + 2n` words.

use std::collections::HashMap;

use crate::pim_model::{PimPointer, Word};
use crate::{Error, Key, Result, Value};

/// A node of the chunked skip list. Entries are `(key, child)` pairs in
/// strictly increasing key order; `keys[0]` is the pivot (the key whose
/// height created this node). At level 1 children point at data nodes, at
/// higher levels at the next-lower chunk pivoted at the same key.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkNode {
    pub level: u8,
    pub keys: Vec<Key>,
    pub children: Vec<PimPointer>,
    pub prev: Option<PimPointer>,
    pub next: Option<PimPointer>,
    /// Present exactly on middle-layer (L2) nodes.
    pub shadow: Option<Box<ShadowSubtree>>,
}

impl ChunkNode {
    pub fn empty(level: u8) -> Self {
        ChunkNode {
            level,
            keys: Vec::new(),
            children: Vec::new(),
            prev: None,
            next: None,
            shadow: None,
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Index of the largest key `<= key`. The caller must only route keys
    /// at or beyond the pivot.
    pub fn slot_of(&self, key: Key) -> Result<usize> {
        let p = self.keys.partition_point(|k| *k <= key);
        if p == 0 {
            return Err(Error::Protocol(format!(
                "key {key} routed to a chunk with pivot {:?}",
                self.keys.first()
            )));
        }
        Ok(p - 1)
    }

    /// Wire size of the node contents.
    pub fn wire_words(&self) -> u64 {
        3 + 2 * self.keys.len() as u64
    }

    pub fn encode(&self, out: &mut Vec<Word>) {
        out.push(self.level as u64 | ((self.keys.len() as u64) << 8));
        out.push(PimPointer::pack_opt(self.prev));
        out.push(PimPointer::pack_opt(self.next));
        out.extend_from_slice(&self.keys);
        out.extend(self.children.iter().map(|c| c.pack()));
    }

    /// Decodes contents produced by [`ChunkNode::encode`]; the shadow does
    /// not travel with the chunk.
    pub fn decode(words: &[Word]) -> Result<(Self, usize)> {
        if words.is_empty() {
            return Err(Error::Protocol("empty chunk encoding".into()));
        }
        let meta = words[0];
        let level = (meta & 0xff) as u8;
        let n = (meta >> 8) as usize;
        let need = 3 + 2 * n;
        if words.len() < need {
            return Err(Error::Protocol("truncated chunk encoding".into()));
        }
        let prev = PimPointer::unpack(words[1]);
        let next = PimPointer::unpack(words[2]);
        let keys = words[3..3 + n].to_vec();
        let children = words[3 + n..3 + 2 * n]
            .iter()
            .map(|w| {
                PimPointer::unpack(*w)
                    .ok_or_else(|| Error::Protocol("null child pointer in chunk".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            ChunkNode {
                level,
                keys,
                children,
                prev,
                next,
                shadow: None,
            },
            need,
        ))
    }
}

/// One key-value record, hash-distributed; the height is kept so deletes
/// can learn how many levels a key occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataNode {
    pub key: Key,
    pub value: Value,
    pub height: u8,
}

/// Everything a tree module stores in its object table.
#[derive(Debug, Clone)]
pub enum TreeObject {
    Chunk(ChunkNode),
    Data(DataNode),
}

impl TreeObject {
    pub fn as_chunk(&self) -> Result<&ChunkNode> {
        match self {
            TreeObject::Chunk(c) => Ok(c),
            TreeObject::Data(_) => Err(Error::Protocol("expected chunk, found data node".into())),
        }
    }

    pub fn as_chunk_mut(&mut self) -> Result<&mut ChunkNode> {
        match self {
            TreeObject::Chunk(c) => Ok(c),
            TreeObject::Data(_) => Err(Error::Protocol("expected chunk, found data node".into())),
        }
    }

    pub fn as_data(&self) -> Result<&DataNode> {
        match self {
            TreeObject::Data(d) => Ok(d),
            TreeObject::Chunk(_) => Err(Error::Protocol("expected data node, found chunk".into())),
        }
    }
}

// ---------------------------------------------------------------------------
// Shadow subtrees
// ---------------------------------------------------------------------------

/// Reference from a shadow node to one child.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadowChild {
    /// Child copy inside the same arena (levels above the bottom of L2).
    Node(usize),
    /// Physical pointer to a top-L1 chunk (bottom of L2 only).
    Leaf(PimPointer),
}

/// One node of a shadow subtree: a local copy of a physical chunk,
/// remembering the physical origin it mirrors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowNode {
    pub origin: PimPointer,
    pub level: u8,
    pub keys: Vec<Key>,
    pub children: Vec<ShadowChild>,
    dead: bool,
}

/// A local copy of one L2 node's entire middle-layer search subtree,
/// stored as an arena with the owner's copy at index 0. Every node is
/// indexed by the physical pointer of its origin so host-computed edits can
/// name their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSubtree {
    nodes: Vec<ShadowNode>,
    by_origin: HashMap<Word, usize>,
}

/// Op codes of the shadow edit stream.
pub mod shadow_op {
    pub const FRAG: u64 = 1;
    pub const DEL: u64 = 2;
    pub const SPLITS: u64 = 3;
    pub const INS: u64 = 4;
    pub const TRIM: u64 = 5;
    pub const MERGE: u64 = 6;
    pub const ABSORB: u64 = 7;
}

impl ShadowSubtree {
    pub fn root(&self) -> &ShadowNode {
        &self.nodes[0]
    }

    pub fn node(&self, idx: usize) -> &ShadowNode {
        &self.nodes[idx]
    }

    /// Test hook: flips one key of the root copy.
    #[doc(hidden)]
    pub fn corrupt_first_key(&mut self) -> bool {
        if let Some(k) = self.nodes[0].keys.first_mut() {
            *k = k.wrapping_add(1);
            true
        } else {
            false
        }
    }

    fn index_of(&self, origin: Word) -> Result<usize> {
        self.by_origin
            .get(&origin)
            .copied()
            .ok_or_else(|| Error::Protocol(format!("shadow edit names unknown origin {origin:#x}")))
    }

    fn register(&mut self, node: ShadowNode) -> usize {
        let idx = self.nodes.len();
        self.by_origin.insert(node.origin.pack(), idx);
        self.nodes.push(node);
        idx
    }

    fn kill(&mut self, idx: usize) {
        let origin = self.nodes[idx].origin.pack();
        self.by_origin.remove(&origin);
        self.nodes[idx].dead = true;
    }

    fn purge(&mut self, child: ShadowChild) {
        if let ShadowChild::Node(idx) = child {
            let children = self.nodes[idx].children.clone();
            self.kill(idx);
            for c in children {
                self.purge(c);
            }
        }
    }

    /// Serializes the subtree rooted at `idx` (pre-order, self-describing).
    pub fn encode_subtree(&self, idx: usize, out: &mut Vec<Word>) {
        let node = &self.nodes[idx];
        out.push(node.origin.pack());
        out.push(node.level as u64 | ((node.keys.len() as u64) << 8));
        out.extend_from_slice(&node.keys);
        for c in &node.children {
            match *c {
                ShadowChild::Leaf(p) => out.push(p.pack()),
                ShadowChild::Node(i) => self.encode_subtree(i, out),
            }
        }
    }

    /// Decodes one serialized subtree into a fresh arena. `l1_levels` fixes
    /// the bottom shadow level: children of a level `l1_levels + 1` node are
    /// leaf pointers, everything above nests.
    pub fn from_wire(words: &[Word], l1_levels: u8) -> Result<Self> {
        let mut tree = ShadowSubtree {
            nodes: Vec::new(),
            by_origin: HashMap::new(),
        };
        let mut pos = 0;
        let root = tree.decode_into(words, &mut pos, l1_levels)?;
        if pos != words.len() {
            return Err(Error::Protocol(
                "trailing words after shadow subtree".into(),
            ));
        }
        // root goes to index 0: decode_into appends children first, so swap
        tree.move_to_front(root);
        Ok(tree)
    }

    /// Decodes one subtree from `words` (advancing `pos`) and grafts it
    /// into this arena, returning the root index.
    pub fn graft_from_wire(
        &mut self,
        words: &[Word],
        pos: &mut usize,
        l1_levels: u8,
    ) -> Result<usize> {
        self.decode_into(words, pos, l1_levels)
    }

    fn decode_into(&mut self, words: &[Word], pos: &mut usize, l1_levels: u8) -> Result<usize> {
        if words.len() < *pos + 2 {
            return Err(Error::Protocol("truncated shadow subtree".into()));
        }
        let origin = PimPointer::unpack(words[*pos])
            .ok_or_else(|| Error::Protocol("null origin in shadow subtree".into()))?;
        let meta = words[*pos + 1];
        let level = (meta & 0xff) as u8;
        let n = (meta >> 8) as usize;
        *pos += 2;
        if words.len() < *pos + n {
            return Err(Error::Protocol("truncated shadow subtree keys".into()));
        }
        let keys = words[*pos..*pos + n].to_vec();
        *pos += n;
        let mut children = Vec::with_capacity(n);
        for _ in 0..n {
            if level > l1_levels + 1 {
                let idx = self.decode_into(words, pos, l1_levels)?;
                children.push(ShadowChild::Node(idx));
            } else {
                let ptr = *words
                    .get(*pos)
                    .ok_or_else(|| Error::Protocol("truncated shadow subtree children".into()))?;
                let ptr = PimPointer::unpack(ptr)
                    .ok_or_else(|| Error::Protocol("null leaf pointer in shadow subtree".into()))?;
                *pos += 1;
                children.push(ShadowChild::Leaf(ptr));
            }
        }
        Ok(self.register(ShadowNode {
            origin,
            level,
            keys,
            children,
            dead: false,
        }))
    }

    fn move_to_front(&mut self, idx: usize) {
        if idx == 0 {
            return;
        }
        self.nodes.swap(0, idx);
        let fix = |map: &mut HashMap<Word, usize>, node: &ShadowNode, new_idx: usize| {
            map.insert(node.origin.pack(), new_idx);
        };
        let n0 = self.nodes[0].clone();
        let ni = self.nodes[idx].clone();
        fix(&mut self.by_origin, &n0, 0);
        fix(&mut self.by_origin, &ni, idx);
        for node in &mut self.nodes {
            for c in &mut node.children {
                if let ShadowChild::Node(i) = c {
                    if *i == 0 {
                        *i = idx;
                    } else if *i == idx {
                        *i = 0;
                    }
                }
            }
        }
    }

    fn resolve_child(&self, level_below: u8, l1_levels: u8, word: Word) -> Result<ShadowChild> {
        let ptr = PimPointer::unpack(word)
            .ok_or_else(|| Error::Protocol("null child reference in shadow op".into()))?;
        if level_below <= l1_levels {
            Ok(ShadowChild::Leaf(ptr))
        } else {
            Ok(ShadowChild::Node(self.index_of(word)?))
        }
    }

    /// Applies a host-computed edit stream. Ops arrive ordered: fragment
    /// installs first, then structural ops by ascending level.
    pub fn apply_ops(&mut self, ops: &[Word], l1_levels: u8) -> Result<()> {
        let mut pos = 0;
        let take = |pos: &mut usize| -> Result<Word> {
            let w = ops
                .get(*pos)
                .copied()
                .ok_or_else(|| Error::Protocol("truncated shadow op stream".into()))?;
            *pos += 1;
            Ok(w)
        };
        while pos < ops.len() {
            let op = take(&mut pos)?;
            match op {
                shadow_op::FRAG => {
                    self.graft_from_wire(ops, &mut pos, l1_levels)?;
                }
                shadow_op::DEL => {
                    let origin = take(&mut pos)?;
                    let key = take(&mut pos)?;
                    let idx = self.index_of(origin)?;
                    let node = &mut self.nodes[idx];
                    match node.keys.binary_search(&key) {
                        Ok(i) => {
                            node.keys.remove(i);
                            let child = node.children.remove(i);
                            self.purge(child);
                        }
                        Err(_) => {
                            return Err(Error::Protocol(format!(
                                "shadow del: key {key} absent from copy of {origin:#x}"
                            )))
                        }
                    }
                }
                shadow_op::SPLITS => {
                    let origin = take(&mut pos)?;
                    let t = take(&mut pos)? as usize;
                    let mut splits = Vec::with_capacity(t);
                    for _ in 0..t {
                        let key = take(&mut pos)?;
                        let new_origin = take(&mut pos)?;
                        let child_ref = take(&mut pos)?;
                        splits.push((key, new_origin, child_ref));
                    }
                    let idx = self.index_of(origin)?;
                    // Split off the tail for each splitter, highest first,
                    // so every extraction sees the not-yet-moved remainder.
                    for &(key, new_origin, child_ref) in splits.iter().rev() {
                        let level = self.nodes[idx].level;
                        let cut = self.nodes[idx].keys.partition_point(|k| *k <= key);
                        let moved_keys: Vec<Key> = self.nodes[idx].keys.split_off(cut);
                        let moved_children: Vec<ShadowChild> =
                            self.nodes[idx].children.split_off(cut);
                        let pivot_child = self.resolve_child(level - 1, l1_levels, child_ref)?;
                        let new_ptr = PimPointer::unpack(new_origin)
                            .ok_or_else(|| Error::Protocol("null split origin".into()))?;
                        let mut keys = Vec::with_capacity(moved_keys.len() + 1);
                        keys.push(key);
                        keys.extend(moved_keys);
                        let mut children = Vec::with_capacity(keys.len());
                        children.push(pivot_child);
                        children.extend(moved_children);
                        self.register(ShadowNode {
                            origin: new_ptr,
                            level,
                            keys,
                            children,
                            dead: false,
                        });
                    }
                }
                shadow_op::INS => {
                    let origin = take(&mut pos)?;
                    let key = take(&mut pos)?;
                    let child_ref = take(&mut pos)?;
                    let idx = self.index_of(origin)?;
                    let level = self.nodes[idx].level;
                    let child = self.resolve_child(level - 1, l1_levels, child_ref)?;
                    let node = &mut self.nodes[idx];
                    match node.keys.binary_search(&key) {
                        Ok(_) => {
                            return Err(Error::Protocol(format!(
                                "shadow ins: key {key} already in copy of {origin:#x}"
                            )))
                        }
                        Err(i) => {
                            node.keys.insert(i, key);
                            node.children.insert(i, child);
                        }
                    }
                }
                shadow_op::TRIM => {
                    let origin = take(&mut pos)?;
                    let cut = take(&mut pos)?;
                    let idx = self.index_of(origin)?;
                    let at = self.nodes[idx].keys.partition_point(|k| *k <= cut);
                    self.nodes[idx].keys.truncate(at);
                    let dropped: Vec<ShadowChild> = self.nodes[idx].children.split_off(at);
                    for c in dropped {
                        self.purge(c);
                    }
                }
                shadow_op::MERGE => {
                    let left = take(&mut pos)?;
                    let dead = take(&mut pos)?;
                    let li = self.index_of(left)?;
                    let di = self.index_of(dead)?;
                    let keys = std::mem::take(&mut self.nodes[di].keys);
                    let children = std::mem::take(&mut self.nodes[di].children);
                    self.nodes[li].keys.extend(keys);
                    self.nodes[li].children.extend(children);
                    self.kill(di);
                }
                shadow_op::ABSORB => {
                    let dest = take(&mut pos)?;
                    let n = take(&mut pos)? as usize;
                    let mut entries = Vec::with_capacity(n);
                    for _ in 0..n {
                        let key = take(&mut pos)?;
                        let child_ref = take(&mut pos)?;
                        entries.push((key, child_ref));
                    }
                    let idx = self.index_of(dest)?;
                    let level = self.nodes[idx].level;
                    for (key, child_ref) in entries {
                        let child = self.resolve_child(level - 1, l1_levels, child_ref)?;
                        self.nodes[idx].keys.push(key);
                        self.nodes[idx].children.push(child);
                    }
                }
                other => {
                    return Err(Error::Protocol(format!("unknown shadow op {other}")));
                }
            }
        }
        Ok(())
    }

    /// Local traversal toward `key`, recording the origins of the visited
    /// copies below the root. Returns `(origins, l1_ptr)` where origins run
    /// from the highest visited level downward.
    pub fn descend(&self, key: Key, l1_levels: u8) -> Result<(Vec<(u8, PimPointer)>, PimPointer)> {
        let mut origins = Vec::new();
        let mut idx = 0;
        loop {
            let node = &self.nodes[idx];
            let slot = {
                let p = node.keys.partition_point(|k| *k <= key);
                if p == 0 {
                    return Err(Error::Protocol(format!(
                        "key {key} descended into shadow copy with pivot {:?}",
                        node.keys.first()
                    )));
                }
                p - 1
            };
            match node.children[slot] {
                ShadowChild::Leaf(p) => {
                    debug_assert_eq!(node.level, l1_levels + 1);
                    return Ok((origins, p));
                }
                ShadowChild::Node(i) => {
                    let child = &self.nodes[i];
                    origins.push((child.level, child.origin));
                    idx = i;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Host-side shadow assembly
// ---------------------------------------------------------------------------

/// Host representation of a shadow subtree while planning builds: the same
/// wire format as the arena, as an owned tree.
#[derive(Debug, Clone, PartialEq)]
pub struct HostShadow {
    pub origin: PimPointer,
    pub level: u8,
    pub keys: Vec<Key>,
    pub children: Vec<HostShadowChild>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HostShadowChild {
    Sub(Box<HostShadow>),
    Leaf(PimPointer),
}

impl HostShadow {
    pub fn encode(&self, out: &mut Vec<Word>) {
        out.push(self.origin.pack());
        out.push(self.level as u64 | ((self.keys.len() as u64) << 8));
        out.extend_from_slice(&self.keys);
        for c in &self.children {
            match c {
                HostShadowChild::Leaf(p) => out.push(p.pack()),
                HostShadowChild::Sub(s) => s.encode(out),
            }
        }
    }

    pub fn encoded_words(&self) -> u64 {
        let mut n = 2 + self.keys.len() as u64;
        for c in &self.children {
            n += match c {
                HostShadowChild::Leaf(_) => 1,
                HostShadowChild::Sub(s) => s.encoded_words(),
            };
        }
        n
    }

    pub fn decode(words: &[Word], pos: &mut usize, l1_levels: u8) -> Result<Self> {
        if words.len() < *pos + 2 {
            return Err(Error::Protocol("truncated host shadow".into()));
        }
        let origin = PimPointer::unpack(words[*pos])
            .ok_or_else(|| Error::Protocol("null origin in host shadow".into()))?;
        let meta = words[*pos + 1];
        let level = (meta & 0xff) as u8;
        let n = (meta >> 8) as usize;
        *pos += 2;
        if words.len() < *pos + n {
            return Err(Error::Protocol("truncated host shadow keys".into()));
        }
        let keys = words[*pos..*pos + n].to_vec();
        *pos += n;
        let mut children = Vec::with_capacity(n);
        for _ in 0..n {
            if level > l1_levels + 1 {
                children.push(HostShadowChild::Sub(Box::new(HostShadow::decode(
                    words, pos, l1_levels,
                )?)));
            } else {
                let w = *words
                    .get(*pos)
                    .ok_or_else(|| Error::Protocol("truncated host shadow children".into()))?;
                let ptr = PimPointer::unpack(w)
                    .ok_or_else(|| Error::Protocol("null leaf in host shadow".into()))?;
                *pos += 1;
                children.push(HostShadowChild::Leaf(ptr));
            }
        }
        Ok(HostShadow {
            origin,
            level,
            keys,
            children,
        })
    }
}
