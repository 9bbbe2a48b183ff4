//! Task protocol between the host and the tree's PIM program.
//!
//! A task buffer is a flat word stream of tagged tasks; replies come back
//! in task order, each self-describing where a length can vary. All word
//! costs are implied by the layouts below, so the traffic counters reflect
//! the protocol bit-exactly.

use crate::pim_model::{LocalAddress, ModuleEnv, PimPointer, Word};
use crate::pim_tree::node::{ChunkNode, DataNode, ShadowChild, ShadowSubtree, TreeObject};
use crate::pim_tree::L3Index;
use crate::{Error, Key, Result};

/// Task tags. Layouts, with replies in task order:
///
/// | tag           | task words                                   | reply words |
/// |---------------|----------------------------------------------|-------------|
/// | L3_SEARCH     | tag, key                                     | ptr |
/// | L3_SCAN       | tag, lo, hi                                  | m, ptr*m |
/// | FETCH_CHUNK   | tag, addr                                    | len, wire(len) |
/// | FETCH_TAIL    | tag, addr, min_split                         | n, (key,child)*n, next, nfrag, frag* |
/// | FETCH_FULL    | tag, addr                                    | len, wire(len), nfrag, frag* |
/// | SEARCH_CHUNK  | tag, addr, key                               | child — or key, child at level 1 |
/// | SHADOW_SEARCH | tag, addr, key, keep_max_level               | t, origin*t, l1_ptr |
/// | SCAN_SHADOW   | tag, addr, lo, hi, role                      | nfa, ptr*nfa, nsr, (role,ptr)*nsr |
/// | SCAN_CHUNK    | tag, addr, lo, hi, role                      | as SCAN_SHADOW — or n, (key,ptr)*n at level 1 |
/// | FETCH_DATA    | tag, addr                                    | key, value, height |
/// | GET           | tag, key                                     | found, value |
/// | GET_HEIGHT    | tag, key                                     | found, height |
/// | UPDATE        | tag, key, value                              | found |
/// | PUT_DATA      | tag, key, value, height                      | addr |
/// | DEL_DATA      | tag, key                                     | — |
/// | ALLOC_CHUNK   | tag, level                                   | addr |
/// | WRITE_CHUNK   | tag, addr, len, wire(len)                    | — |
/// | EDIT_CHUNK    | tag, addr, flags, [cut], [next], [prev], ndel, key*ndel, nins, (key,child)*nins | — |
/// | FREE_CHUNK    | tag, addr                                    | — |
/// | SHADOW_OPS    | tag, addr, len, ops(len)                     | — |
/// | SHADOW_BUILD  | tag, addr, len, subtree(len)                 | — |
/// | L3_APPLY      | tag, len, delta(len)                         | — |
pub(crate) mod tag {
    pub const L3_SEARCH: u64 = 1;
    pub const L3_SCAN: u64 = 2;
    pub const FETCH_CHUNK: u64 = 3;
    pub const FETCH_TAIL: u64 = 4;
    pub const FETCH_FULL: u64 = 5;
    pub const SEARCH_CHUNK: u64 = 6;
    pub const SHADOW_SEARCH: u64 = 7;
    pub const SCAN_SHADOW: u64 = 8;
    pub const SCAN_CHUNK: u64 = 9;
    pub const FETCH_DATA: u64 = 10;
    pub const GET: u64 = 11;
    pub const GET_HEIGHT: u64 = 12;
    pub const UPDATE: u64 = 13;
    pub const PUT_DATA: u64 = 14;
    pub const DEL_DATA: u64 = 15;
    pub const ALLOC_CHUNK: u64 = 16;
    pub const WRITE_CHUNK: u64 = 17;
    pub const EDIT_CHUNK: u64 = 18;
    pub const FREE_CHUNK: u64 = 19;
    pub const SHADOW_OPS: u64 = 20;
    pub const SHADOW_BUILD: u64 = 21;
    pub const L3_APPLY: u64 = 22;
}

/// Boundary roles used by scan tasks.
pub(crate) mod role {
    pub const FETCH_ALL: u64 = 0;
    pub const LEFT: u64 = 1;
    pub const RIGHT: u64 = 2;
    pub const BOTH: u64 = 3;
}

/// Edit flags for EDIT_CHUNK.
pub(crate) mod edit_flag {
    pub const CUT: u64 = 1;
    pub const SET_NEXT: u64 = 2;
    pub const SET_PREV: u64 = 4;
}

pub(crate) use crate::pim_model::WordReader;

/// Per-launch context: the module's view of the replicated top layer plus
/// the fixed level split.
pub(crate) struct ProgramCtx<'a> {
    pub l3: &'a L3Index,
    pub l1_levels: u8,
}

fn local_ptr(env: &ModuleEnv<'_, TreeObject>, addr: Word) -> PimPointer {
    PimPointer::new(env.module(), LocalAddress(addr))
}

fn slot_in(keys: &[Key], key: Key) -> Result<usize> {
    let p = keys.partition_point(|k| *k <= key);
    if p == 0 {
        return Err(Error::Protocol(format!(
            "key {key} routed below pivot {:?}",
            keys.first()
        )));
    }
    Ok(p - 1)
}

/// Appends every bottom-of-L2 leaf pointer under `idx` to `out`, in key
/// order.
fn collect_shadow_leaves(shadow: &ShadowSubtree, idx: usize, out: &mut Vec<PimPointer>) {
    let node = shadow.node(idx);
    for c in &node.children {
        match *c {
            ShadowChild::Leaf(p) => out.push(p),
            ShadowChild::Node(i) => collect_shadow_leaves(shadow, i, out),
        }
    }
}

/// The tree's PIM program: decodes this module's task buffer, runs every
/// task against module-local state, and fills the reply buffer.
pub(crate) fn tree_program(
    env: &mut ModuleEnv<'_, TreeObject>,
    tasks: &[Word],
    ctx: &ProgramCtx<'_>,
) -> Result<()> {
    let mut r = WordReader::new(tasks);
    while !r.done() {
        let t = r.word()?;
        match t {
            tag::L3_SEARCH => {
                let key = r.word()?;
                let ptr = ctx.l3.route(key)?;
                env.emit(ptr.pack());
            }
            tag::L3_SCAN => {
                let lo = r.word()?;
                let hi = r.word()?;
                let ptrs = ctx.l3.cover(lo, hi)?;
                env.emit(ptrs.len() as u64);
                for p in ptrs {
                    env.emit(p.pack());
                }
            }
            tag::FETCH_CHUNK => {
                let addr = r.word()?;
                let chunk = env.object(local_ptr(env, addr))?.as_chunk()?;
                let mut wire = Vec::with_capacity(chunk.wire_words() as usize);
                chunk.encode(&mut wire);
                env.emit(wire.len() as u64);
                env.reply(&wire);
            }
            tag::FETCH_TAIL => {
                let addr = r.word()?;
                let min_split = r.word()?;
                let chunk = env.object(local_ptr(env, addr))?.as_chunk()?;
                let cut = chunk.keys.partition_point(|k| *k <= min_split);
                let tail_keys: Vec<Key> = chunk.keys[cut..].to_vec();
                let tail_children: Vec<PimPointer> = chunk.children[cut..].to_vec();
                let next = chunk.next;
                let mut frags: Vec<Word> = Vec::new();
                let mut nfrag = 0u64;
                if chunk.level > ctx.l1_levels + 1 {
                    let shadow = chunk.shadow.as_ref().ok_or_else(|| {
                        Error::Protocol("middle-layer chunk without shadow".into())
                    })?;
                    for k in &tail_keys {
                        let slot =
                            shadow.root().keys.binary_search(k).map_err(|_| {
                                Error::Protocol(format!("shadow root missing key {k}"))
                            })?;
                        match shadow.root().children[slot] {
                            ShadowChild::Node(i) => shadow.encode_subtree(i, &mut frags),
                            ShadowChild::Leaf(_) => {
                                return Err(Error::Protocol(
                                    "leaf child above bottom middle level".into(),
                                ))
                            }
                        }
                        nfrag += 1;
                    }
                }
                env.emit(tail_keys.len() as u64);
                for (k, c) in tail_keys.iter().zip(&tail_children) {
                    env.emit(*k);
                    env.emit(c.pack());
                }
                env.emit(PimPointer::pack_opt(next));
                env.emit(nfrag);
                env.reply(&frags);
            }
            tag::FETCH_FULL => {
                let addr = r.word()?;
                let chunk = env.object(local_ptr(env, addr))?.as_chunk()?;
                let mut wire = Vec::with_capacity(chunk.wire_words() as usize);
                chunk.encode(&mut wire);
                let mut frags: Vec<Word> = Vec::new();
                let mut nfrag = 0u64;
                if chunk.level > ctx.l1_levels + 1 {
                    let shadow = chunk.shadow.as_ref().ok_or_else(|| {
                        Error::Protocol("middle-layer chunk without shadow".into())
                    })?;
                    for slot in 0..shadow.root().keys.len() {
                        match shadow.root().children[slot] {
                            ShadowChild::Node(i) => shadow.encode_subtree(i, &mut frags),
                            ShadowChild::Leaf(_) => {
                                return Err(Error::Protocol(
                                    "leaf child above bottom middle level".into(),
                                ))
                            }
                        }
                        nfrag += 1;
                    }
                }
                env.emit(wire.len() as u64);
                env.reply(&wire);
                env.emit(nfrag);
                env.reply(&frags);
            }
            tag::SEARCH_CHUNK => {
                let addr = r.word()?;
                let key = r.word()?;
                let chunk = env.object(local_ptr(env, addr))?.as_chunk()?;
                let slot = chunk.slot_of(key)?;
                let (level, found, child) = (chunk.level, chunk.keys[slot], chunk.children[slot]);
                if level == 1 {
                    env.emit(found);
                }
                env.emit(child.pack());
            }
            tag::SHADOW_SEARCH => {
                let addr = r.word()?;
                let key = r.word()?;
                let keep_max_level = r.word()?;
                let chunk = env.object(local_ptr(env, addr))?.as_chunk()?;
                let shadow = chunk
                    .shadow
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("shadow search on bare chunk".into()))?;
                let (origins, leaf) = shadow.descend(key, ctx.l1_levels)?;
                let kept: Vec<PimPointer> = origins
                    .iter()
                    .filter(|(lvl, _)| (*lvl as u64) <= keep_max_level)
                    .map(|(_, p)| *p)
                    .collect();
                env.emit(kept.len() as u64);
                for p in &kept {
                    env.emit(p.pack());
                }
                env.emit(leaf.pack());
            }
            tag::SCAN_SHADOW => {
                let addr = r.word()?;
                let lo = r.word()?;
                let hi = r.word()?;
                let role_w = r.word()?;
                let chunk = env.object(local_ptr(env, addr))?.as_chunk()?;
                let shadow = chunk
                    .shadow
                    .as_ref()
                    .ok_or_else(|| Error::Protocol("scan shadow on bare chunk".into()))?;
                let mut fa: Vec<PimPointer> = Vec::new();
                let mut sr: Vec<(u64, PimPointer)> = Vec::new();
                // (node idx, role) work stack; roles narrow as the walk descends
                let mut stack = vec![(0usize, role_w)];
                while let Some((idx, role_w)) = stack.pop() {
                    let node = shadow.node(idx);
                    let full = |out: &mut Vec<PimPointer>, child: &ShadowChild| match *child {
                        ShadowChild::Leaf(p) => out.push(p),
                        ShadowChild::Node(i) => collect_shadow_leaves(shadow, i, out),
                    };
                    let descend = |stack: &mut Vec<(usize, u64)>,
                                   sr: &mut Vec<(u64, PimPointer)>,
                                   child: &ShadowChild,
                                   role: u64| match *child {
                        ShadowChild::Leaf(p) => sr.push((role, p)),
                        ShadowChild::Node(i) => stack.push((i, role)),
                    };
                    match role_w {
                        role::FETCH_ALL => {
                            for c in &node.children {
                                full(&mut fa, c);
                            }
                        }
                        role::LEFT => {
                            let s = slot_in(&node.keys, lo)?;
                            for c in &node.children[s + 1..] {
                                full(&mut fa, c);
                            }
                            descend(&mut stack, &mut sr, &node.children[s], role::LEFT);
                        }
                        role::RIGHT => {
                            let s = slot_in(&node.keys, hi)?;
                            for c in &node.children[..s] {
                                full(&mut fa, c);
                            }
                            descend(&mut stack, &mut sr, &node.children[s], role::RIGHT);
                        }
                        role::BOTH => {
                            let sl = slot_in(&node.keys, lo)?;
                            let sh = slot_in(&node.keys, hi)?;
                            if sl == sh {
                                descend(&mut stack, &mut sr, &node.children[sl], role::BOTH);
                            } else {
                                for c in &node.children[sl + 1..sh] {
                                    full(&mut fa, c);
                                }
                                descend(&mut stack, &mut sr, &node.children[sl], role::LEFT);
                                descend(&mut stack, &mut sr, &node.children[sh], role::RIGHT);
                            }
                        }
                        other => return Err(Error::Protocol(format!("bad scan role {other}"))),
                    }
                }
                env.emit(fa.len() as u64);
                for p in &fa {
                    env.emit(p.pack());
                }
                env.emit(sr.len() as u64);
                for (role_w, p) in &sr {
                    env.emit(*role_w);
                    env.emit(p.pack());
                }
            }
            tag::SCAN_CHUNK => {
                let addr = r.word()?;
                let lo = r.word()?;
                let hi = r.word()?;
                let role_w = r.word()?;
                let chunk = env.object(local_ptr(env, addr))?.as_chunk()?;
                if chunk.level == 1 {
                    let pairs: Vec<(Key, PimPointer)> = chunk
                        .keys
                        .iter()
                        .zip(&chunk.children)
                        .filter(|(k, _)| **k >= lo && **k <= hi && **k != crate::SENTINEL_KEY)
                        .map(|(k, c)| (*k, *c))
                        .collect();
                    env.emit(pairs.len() as u64);
                    for (k, p) in pairs {
                        env.emit(k);
                        env.emit(p.pack());
                    }
                } else {
                    let mut fa: Vec<PimPointer> = Vec::new();
                    let mut sr: Vec<(u64, PimPointer)> = Vec::new();
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
                    env.emit(fa.len() as u64);
                    for p in &fa {
                        env.emit(p.pack());
                    }
                    env.emit(sr.len() as u64);
                    for (role_w, p) in &sr {
                        env.emit(*role_w);
                        env.emit(p.pack());
                    }
                }
            }
            tag::FETCH_DATA => {
                let addr = r.word()?;
                let d = *env.object(local_ptr(env, addr))?.as_data()?;
                env.reply(&[d.key, d.value, d.height as u64]);
            }
            tag::GET => {
                let key = r.word()?;
                match env.kv_get(key) {
                    Some(a) => {
                        let d = *env.object(local_ptr(env, a.0))?.as_data()?;
                        env.reply(&[1, d.value]);
                    }
                    None => env.reply(&[0, 0]),
                }
            }
            tag::GET_HEIGHT => {
                let key = r.word()?;
                match env.kv_get(key) {
                    Some(a) => {
                        let d = *env.object(local_ptr(env, a.0))?.as_data()?;
                        env.reply(&[1, d.height as u64]);
                    }
                    None => env.reply(&[0, 0]),
                }
            }
            tag::UPDATE => {
                let key = r.word()?;
                let value = r.word()?;
                match env.kv_get(key) {
                    Some(a) => {
                        let ptr = local_ptr(env, a.0);
                        match env.object_mut(ptr)? {
                            TreeObject::Data(d) => d.value = value,
                            TreeObject::Chunk(_) => {
                                return Err(Error::Protocol("hash index points at chunk".into()))
                            }
                        }
                        env.emit(1);
                    }
                    None => env.emit(0),
                }
            }
            tag::PUT_DATA => {
                let key = r.word()?;
                let value = r.word()?;
                let height = r.word()? as u8;
                match env.kv_get(key) {
                    Some(a) => {
                        let ptr = local_ptr(env, a.0);
                        match env.object_mut(ptr)? {
                            TreeObject::Data(d) => d.value = value,
                            TreeObject::Chunk(_) => {
                                return Err(Error::Protocol("hash index points at chunk".into()))
                            }
                        }
                        env.emit(a.0);
                    }
                    None => {
                        let addr = env.alloc(TreeObject::Data(DataNode { key, value, height }))?;
                        env.kv_insert(key, addr);
                        env.emit(addr.0);
                    }
                }
            }
            tag::DEL_DATA => {
                let key = r.word()?;
                if let Some(a) = env.kv_remove(key) {
                    env.free(a)?;
                }
            }
            tag::ALLOC_CHUNK => {
                let level = r.word()? as u8;
                let addr = env.alloc(TreeObject::Chunk(ChunkNode::empty(level)))?;
                env.emit(addr.0);
            }
            tag::WRITE_CHUNK => {
                let addr = r.word()?;
                let len = r.word()? as usize;
                let wire = r.slice(len)?;
                let (mut decoded, used) = ChunkNode::decode(wire)?;
                if used != len {
                    return Err(Error::Protocol("chunk write length mismatch".into()));
                }
                let ptr = local_ptr(env, addr);
                let chunk = env.object_mut(ptr)?.as_chunk_mut()?;
                if chunk.level != decoded.level {
                    return Err(Error::Protocol("chunk write changes level".into()));
                }
                decoded.shadow = chunk.shadow.take();
                *chunk = decoded;
            }
            tag::EDIT_CHUNK => {
                let addr = r.word()?;
                let flags = r.word()?;
                let cut = if flags & edit_flag::CUT != 0 {
                    Some(r.word()?)
                } else {
                    None
                };
                let next = if flags & edit_flag::SET_NEXT != 0 {
                    Some(r.opt_ptr()?)
                } else {
                    None
                };
                let prev = if flags & edit_flag::SET_PREV != 0 {
                    Some(r.opt_ptr()?)
                } else {
                    None
                };
                let ndel = r.word()? as usize;
                let dels = r.slice(ndel)?.to_vec();
                let nins = r.word()? as usize;
                let mut ins = Vec::with_capacity(nins);
                for _ in 0..nins {
                    let k = r.word()?;
                    let c = r.ptr()?;
                    ins.push((k, c));
                }
                let ptr = local_ptr(env, addr);
                let chunk = env.object_mut(ptr)?.as_chunk_mut()?;
                for k in dels {
                    match chunk.keys.binary_search(&k) {
                        Ok(i) => {
                            chunk.keys.remove(i);
                            chunk.children.remove(i);
                        }
                        Err(_) => {
                            return Err(Error::Protocol(format!("edit deletes absent key {k}")))
                        }
                    }
                }
                if let Some(cut) = cut {
                    let at = chunk.keys.partition_point(|k| *k <= cut);
                    chunk.keys.truncate(at);
                    chunk.children.truncate(at);
                }
                for (k, c) in ins {
                    match chunk.keys.binary_search(&k) {
                        Ok(_) => {
                            return Err(Error::Protocol(format!("edit inserts duplicate key {k}")))
                        }
                        Err(i) => {
                            chunk.keys.insert(i, k);
                            chunk.children.insert(i, c);
                        }
                    }
                }
                if let Some(n) = next {
                    chunk.next = n;
                }
                if let Some(p) = prev {
                    chunk.prev = p;
                }
            }
            tag::FREE_CHUNK => {
                let addr = r.word()?;
                env.free(LocalAddress(addr))?;
            }
            tag::SHADOW_OPS => {
                let addr = r.word()?;
                let len = r.word()? as usize;
                let ops = r.slice(len)?.to_vec();
                let l1 = ctx.l1_levels;
                let ptr = local_ptr(env, addr);
                let chunk = env.object_mut(ptr)?.as_chunk_mut()?;
                let shadow = chunk
                    .shadow
                    .as_mut()
                    .ok_or_else(|| Error::Protocol("shadow ops on bare chunk".into()))?;
                shadow.apply_ops(&ops, l1)?;
            }
            tag::SHADOW_BUILD => {
                let addr = r.word()?;
                let len = r.word()? as usize;
                let ser = r.slice(len)?;
                let built = ShadowSubtree::from_wire(ser, ctx.l1_levels)?;
                let ptr = local_ptr(env, addr);
                let chunk = env.object_mut(ptr)?.as_chunk_mut()?;
                chunk.shadow = Some(Box::new(built));
            }
            tag::L3_APPLY => {
                // Delta for the replicated top layer. Each module applies it
                // to its local replica; the simulation keeps one logical copy
                // host-side, so the payload is only acknowledged here.
                let len = r.word()? as usize;
                let _ = r.slice(len)?;
            }
            other => return Err(Error::Protocol(format!("unknown task tag {other}"))),
        }
    }
    Ok(())
}

/// Words billed when pulling a chunk: the fetch task plus the
/// length-prefixed contents.
pub fn chunk_pull_words(entries: usize) -> u64 {
    // tag + addr + len + (meta + prev + next + 2 * entries)
    3 + 3 + 2 * entries as u64
}
