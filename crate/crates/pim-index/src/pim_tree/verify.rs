//! Host-side verification instrumentation. These walks read module memory
//! directly (unbilled): they model an offline checker, not tree traffic.

use crate::pim_model::{ModuleId, PimPointer};
use crate::pim_tree::node::{ShadowChild, ShadowSubtree, TreeObject};
use crate::pim_tree::{ChunkNode, PimTree};
use crate::{Error, Key, Result, SENTINEL_KEY};

/// One disagreement between a shadow subtree and the physical subtree it
/// is supposed to mirror.
#[derive(Debug, Clone)]
pub struct ShadowMismatch {
    pub owner: PimPointer,
    pub origin: PimPointer,
    pub detail: String,
}

impl PimTree {
    pub(crate) fn chunk_at(&self, ptr: PimPointer) -> Result<&ChunkNode> {
        match self.machine.host_object(ptr) {
            Some(TreeObject::Chunk(c)) => Ok(c),
            Some(TreeObject::Data(_)) => Err(Error::Protocol(format!(
                "{ptr:?} holds a data node, not a chunk"
            ))),
            None => Err(Error::DanglingPointer {
                module: ptr.module.0,
                addr: ptr.addr.0,
            }),
        }
    }

    /// Deep-compares every middle-layer node's shadow against the physical
    /// search subtree it mirrors. Empty result means full fidelity.
    pub fn verify_shadow_integrity(&self) -> Vec<ShadowMismatch> {
        let mut out = Vec::new();
        let l1 = self.config.l1_levels;
        for m in 0..self.config.modules {
            for (addr, obj) in self.machine.host_snapshot(ModuleId(m as u32)) {
                let chunk = match obj {
                    TreeObject::Chunk(c) if c.level > l1 => c,
                    _ => continue,
                };
                let owner = PimPointer::new(ModuleId(m as u32), addr);
                match &chunk.shadow {
                    None => out.push(ShadowMismatch {
                        owner,
                        origin: owner,
                        detail: "middle-layer chunk has no shadow".into(),
                    }),
                    Some(shadow) => {
                        self.compare_shadow(owner, shadow, 0, owner, &mut out);
                    }
                }
            }
        }
        out
    }

    fn compare_shadow(
        &self,
        owner: PimPointer,
        shadow: &ShadowSubtree,
        idx: usize,
        phys_ptr: PimPointer,
        out: &mut Vec<ShadowMismatch>,
    ) {
        let node = shadow.node(idx);
        let mismatch = |detail: String, out: &mut Vec<ShadowMismatch>| {
            out.push(ShadowMismatch {
                owner,
                origin: node.origin,
                detail,
            });
        };
        if node.origin != phys_ptr {
            mismatch(
                format!("origin {:?} but mirrors {:?}", node.origin, phys_ptr),
                out,
            );
            return;
        }
        let phys = match self.chunk_at(phys_ptr) {
            Ok(c) => c,
            Err(e) => {
                mismatch(format!("origin does not dereference: {e}"), out);
                return;
            }
        };
        let mut flagged = false;
        if node.level != phys.level {
            mismatch(
                format!("level {} versus physical {}", node.level, phys.level),
                out,
            );
            flagged = true;
        }
        if node.keys != phys.keys {
            mismatch(
                format!("keys {:?} versus physical {:?}", node.keys, phys.keys),
                out,
            );
            flagged = true;
        }
        if node.children.len() != phys.children.len() {
            if !flagged {
                mismatch(
                    format!(
                        "child count {} versus physical {}",
                        node.children.len(),
                        phys.children.len()
                    ),
                    out,
                );
            }
            return;
        }
        for (child, phys_child) in node.children.iter().zip(&phys.children) {
            match child {
                ShadowChild::Leaf(p) => {
                    if phys.level != self.config.l1_levels + 1 {
                        mismatch("leaf child above the bottom middle level".into(), out);
                    } else if p != phys_child {
                        mismatch(
                            format!("leaf {:?} versus physical child {:?}", p, phys_child),
                            out,
                        );
                    }
                }
                ShadowChild::Node(i) => {
                    if phys.level == self.config.l1_levels + 1 {
                        mismatch("nested child at the bottom middle level".into(), out);
                    } else {
                        self.compare_shadow(owner, shadow, *i, *phys_child, out);
                    }
                }
            }
        }
    }

    /// Keys stored at each level of the distributed layers, bottom-up,
    /// sentinel excluded. Walks the horizontal chains.
    pub fn level_key_sets(&self) -> Result<Vec<Vec<Key>>> {
        let mut out = Vec::new();
        for lvl in 1..=self.config.total_levels() {
            let mut keys = Vec::new();
            let mut cur = Some(self.level_heads[lvl as usize - 1]);
            let mut last: Option<Key> = None;
            while let Some(ptr) = cur {
                let chunk = self.chunk_at(ptr)?;
                if chunk.level != lvl {
                    return Err(Error::Protocol(format!(
                        "chain at level {lvl} reached a level {} chunk",
                        chunk.level
                    )));
                }
                for k in &chunk.keys {
                    if let Some(prev) = last {
                        if *k <= prev {
                            return Err(Error::Protocol(format!(
                                "level {lvl} keys not strictly increasing at {k}"
                            )));
                        }
                    }
                    last = Some(*k);
                    if *k != SENTINEL_KEY {
                        keys.push(*k);
                    }
                }
                cur = chunk.next;
            }
            out.push(keys);
        }
        Ok(out)
    }

    /// Keys replicated in the top layer, sentinel excluded.
    pub fn top_layer_keys(&self) -> Vec<Key> {
        self.l3
            .keys()
            .copied()
            .filter(|k| *k != SENTINEL_KEY)
            .collect()
    }

    /// Largest chunk entry count anywhere in the distributed layers.
    pub fn max_chunk_len(&self) -> usize {
        let mut max = 0;
        for m in 0..self.config.modules {
            for (_, obj) in self.machine.host_snapshot(ModuleId(m as u32)) {
                if let TreeObject::Chunk(c) = obj {
                    max = max.max(c.len());
                }
            }
        }
        max
    }

    /// Full structural audit: sorted chains, child linkage level by level,
    /// data nodes under level 1, top-layer consistency.
    pub fn audit_structure(&self) -> Result<()> {
        let sets = self.level_key_sets()?;
        let top = self.config.total_levels() as usize;
        for lvl in (2..=top).rev() {
            let upper: std::collections::BTreeSet<Key> = sets[lvl - 1].iter().copied().collect();
            let lower: std::collections::BTreeSet<Key> = sets[lvl - 2].iter().copied().collect();
            if !upper.is_subset(&lower) {
                return Err(Error::Protocol(format!(
                    "level {lvl} keys are not a subset of level {}",
                    lvl - 1
                )));
            }
        }
        if sets[0].len() as u64 != self.live_keys {
            return Err(Error::Protocol(format!(
                "level 1 holds {} keys but {} are live",
                sets[0].len(),
                self.live_keys
            )));
        }
        // child linkage
        for lvl in (1..=top as u8).rev() {
            let mut cur = Some(self.level_heads[lvl as usize - 1]);
            while let Some(ptr) = cur {
                let chunk = self.chunk_at(ptr)?;
                for (k, c) in chunk.keys.iter().zip(&chunk.children) {
                    if lvl > 1 {
                        let child = self.chunk_at(*c)?;
                        if child.level != lvl - 1 || child.keys.first() != Some(k) {
                            return Err(Error::Protocol(format!(
                                "entry {k} at level {lvl} points to a chunk pivoted at {:?}",
                                child.keys.first()
                            )));
                        }
                    } else {
                        match self.machine.host_object(*c) {
                            Some(TreeObject::Data(d)) if d.key == *k => {}
                            _ => {
                                return Err(Error::Protocol(format!(
                                    "level 1 entry {k} does not point at its data node"
                                )))
                            }
                        }
                    }
                }
                cur = chunk.next;
            }
        }
        // every top-layer key pivots a top-level chunk
        for k in self.l3.keys() {
            let ptr = self.l3.route(*k)?;
            let chunk = self.chunk_at(ptr)?;
            if chunk.keys.first() != Some(k) {
                return Err(Error::Protocol(format!(
                    "top-layer key {k} routes to a chunk pivoted at {:?}",
                    chunk.keys.first()
                )));
            }
        }
        Ok(())
    }

    /// Test hook: corrupts one key inside the first shadow found (module
    /// order, then address order). Returns false when no shadow exists.
    #[doc(hidden)]
    pub fn debug_corrupt_one_shadow(&mut self) -> bool {
        let l1 = self.config.l1_levels;
        for m in 0..self.config.modules {
            let addrs: Vec<_> = self
                .machine
                .host_snapshot(ModuleId(m as u32))
                .iter()
                .filter_map(|(a, obj)| match obj {
                    TreeObject::Chunk(c) if c.level > l1 && c.shadow.is_some() => Some(*a),
                    _ => None,
                })
                .collect();
            for addr in addrs {
                let ptr = PimPointer::new(ModuleId(m as u32), addr);
                if let Some(TreeObject::Chunk(c)) = self.machine.host_object_mut(ptr) {
                    if let Some(shadow) = c.shadow.as_mut() {
                        if shadow.corrupt_first_key() {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}
