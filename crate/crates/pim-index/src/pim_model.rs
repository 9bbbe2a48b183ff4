//! Deterministic simulation of a PIM machine.
//!
//! The machine is `P` PIM modules, each a private local memory with an
//! attached processor, plus a host that is the only communication hub.
//! Programs execute in bulk-synchronous rounds: the host scatters task
//! buffers, launches a PIM program on every module, then gathers reply
//! buffers. All traffic is accounted in 8-byte words, bit-exactly, on both
//! the host side and the module side, so conservation is checkable.
//!
//! Two accounting overlays are always recorded: `unpadded` counts each
//! buffer at its true length; `padded` counts every scatter/gather at the
//! maximum buffer length of that call, matching hardware that requires
//! equal-length transfers. A mode selects which overlay is authoritative
//! for load-balance reporting; the raw counters carry both.
//!
//! Module handlers run with access to exactly one module's memory and
//! buffers. Dereferencing a pointer into another module is detected and
//! aborts the run, mirroring the hardware fault.

use std::collections::{BTreeMap, HashMap};

use crate::{Error, Result};

/// Accounting unit: one 8-byte word. Keys, values, and pointers cost one
/// word each; task tags and length fields cost one word each.
pub const WORD_BYTES: usize = 8;

/// One accounting word.
pub type Word = u64;

/// Identifies a PIM module; `index < P` for the owning machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModuleId(pub u32);

impl std::fmt::Display for ModuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A slot in one module's local memory. Slots are append-allocated and
/// never reused, so a live address refers to at most one object ever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalAddress(pub u64);

/// A remote pointer: (module, local address). Dereferencing is only valid
/// on the named module; there is no direct PIM-to-PIM access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PimPointer {
    pub module: ModuleId,
    pub addr: LocalAddress,
}

/// Wire encoding of "no pointer".
pub const NULL_PTR_WORD: Word = u64::MAX;

impl PimPointer {
    pub fn new(module: ModuleId, addr: LocalAddress) -> Self {
        PimPointer { module, addr }
    }

    /// Packs into one accounting word: module id in the top 16 bits, local
    /// address in the low 48. `NULL_PTR_WORD` is reserved for "none".
    pub fn pack(self) -> Word {
        debug_assert!(self.module.0 < (1 << 16));
        debug_assert!(self.addr.0 < (1 << 48));
        ((self.module.0 as u64) << 48) | self.addr.0
    }

    pub fn unpack(word: Word) -> Option<Self> {
        if word == NULL_PTR_WORD {
            return None;
        }
        Some(PimPointer {
            module: ModuleId((word >> 48) as u32),
            addr: LocalAddress(word & ((1 << 48) - 1)),
        })
    }

    /// Packs an optional pointer, mapping `None` to `NULL_PTR_WORD`.
    pub fn pack_opt(ptr: Option<PimPointer>) -> Word {
        ptr.map_or(NULL_PTR_WORD, PimPointer::pack)
    }
}

/// Selects which accounting overlay drives load-balance reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccountingMode {
    /// Buffers cost their true length (the abstract machine model).
    #[default]
    Unpadded,
    /// Every scatter/gather costs the maximum buffer length of that call
    /// on every module (equal-length hardware transfers).
    Padded,
}

/// Traffic of a single bulk-synchronous round, per module, both overlays.
/// `recv` covers the scatters/broadcasts feeding the round's launch; `sent`
/// covers the gathers that followed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundStats {
    pub round: u64,
    pub recv: Vec<u64>,
    pub sent: Vec<u64>,
    pub recv_padded: Vec<u64>,
    pub sent_padded: Vec<u64>,
}

impl RoundStats {
    fn new(round: u64, modules: usize) -> Self {
        RoundStats {
            round,
            recv: vec![0; modules],
            sent: vec![0; modules],
            recv_padded: vec![0; modules],
            sent_padded: vec![0; modules],
        }
    }

    /// Per-module total traffic (sent + received) under the given mode.
    pub fn per_module_total(&self, mode: AccountingMode) -> Vec<u64> {
        let (r, s) = match mode {
            AccountingMode::Unpadded => (&self.recv, &self.sent),
            AccountingMode::Padded => (&self.recv_padded, &self.sent_padded),
        };
        r.iter().zip(s).map(|(a, b)| a + b).collect()
    }
}

/// Cumulative communication counters plus a per-round log.
///
/// Counters are monotone within a run. For every round, host words out
/// equal the sum of module receive deltas and host words in equal the sum
/// of module send deltas (conservation); the module-side counters are
/// maintained independently so the invariant is genuinely checkable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommStats {
    pub mode: AccountingMode,
    pub rounds: u64,
    pub per_module_sent: Vec<u64>,
    pub per_module_recv: Vec<u64>,
    pub per_module_sent_padded: Vec<u64>,
    pub per_module_recv_padded: Vec<u64>,
    /// Total words the host pushed toward modules (unpadded).
    pub host_words_out: u64,
    /// Total words the host pulled back from modules (unpadded).
    pub host_words_in: u64,
    pub per_round: Vec<RoundStats>,
}

impl CommStats {
    fn new(modules: usize, mode: AccountingMode) -> Self {
        CommStats {
            mode,
            rounds: 0,
            per_module_sent: vec![0; modules],
            per_module_recv: vec![0; modules],
            per_module_sent_padded: vec![0; modules],
            per_module_recv_padded: vec![0; modules],
            host_words_out: 0,
            host_words_in: 0,
            per_round: Vec::new(),
        }
    }

    pub fn modules(&self) -> usize {
        self.per_module_sent.len()
    }

    /// Per-module sent counters under the selected mode.
    pub fn sent(&self) -> &[u64] {
        match self.mode {
            AccountingMode::Unpadded => &self.per_module_sent,
            AccountingMode::Padded => &self.per_module_sent_padded,
        }
    }

    /// Per-module receive counters under the selected mode.
    pub fn recv(&self) -> &[u64] {
        match self.mode {
            AccountingMode::Unpadded => &self.per_module_recv,
            AccountingMode::Padded => &self.per_module_recv_padded,
        }
    }

    pub fn total_words(&self) -> u64 {
        self.sent().iter().sum::<u64>() + self.recv().iter().sum::<u64>()
    }

    /// Counters accumulated since `earlier` (which must be a snapshot of the
    /// same machine taken no later than this one).
    pub fn since(&self, earlier: &CommStats) -> CommStats {
        let sub =
            |a: &[u64], b: &[u64]| -> Vec<u64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
        CommStats {
            mode: self.mode,
            rounds: self.rounds - earlier.rounds,
            per_module_sent: sub(&self.per_module_sent, &earlier.per_module_sent),
            per_module_recv: sub(&self.per_module_recv, &earlier.per_module_recv),
            per_module_sent_padded: sub(
                &self.per_module_sent_padded,
                &earlier.per_module_sent_padded,
            ),
            per_module_recv_padded: sub(
                &self.per_module_recv_padded,
                &earlier.per_module_recv_padded,
            ),
            host_words_out: self.host_words_out - earlier.host_words_out,
            host_words_in: self.host_words_in - earlier.host_words_in,
            per_round: self.per_round[earlier.per_round.len()..].to_vec(),
        }
    }

    /// Per-module total traffic (sent + received) under the selected mode.
    pub fn per_module_total(&self) -> Vec<u64> {
        self.sent()
            .iter()
            .zip(self.recv())
            .map(|(a, b)| a + b)
            .collect()
    }

    /// max/mean of per-module totals; 0.0 when there was no traffic.
    pub fn imbalance(&self) -> f64 {
        imbalance_ratio(&self.per_module_total())
    }
}

/// max/mean of a load vector; 0.0 for empty or all-zero loads.
pub fn imbalance_ratio(loads: &[u64]) -> f64 {
    if loads.is_empty() {
        return 0.0;
    }
    let max = *loads.iter().max().unwrap();
    let sum: u64 = loads.iter().sum();
    if sum == 0 {
        return 0.0;
    }
    (max as f64) * (loads.len() as f64) / (sum as f64)
}

/// One module's private state: the append-allocated object table, two
/// module-local key indexes (a hash index and an ordered index, both
/// key -> local address), and the task/reply buffers.
#[derive(Debug, Clone)]
pub struct ModuleState<T> {
    memory: HashMap<u64, T>,
    next_addr: u64,
    live: usize,
    kv_index: HashMap<u64, u64>,
    ord_index: BTreeMap<u64, u64>,
    tasks: Vec<Word>,
    reply: Vec<Word>,
    /// Module-side receive counter, maintained independently of the host
    /// counters so conservation is a real cross-check.
    words_in: u64,
    words_out: u64,
}

impl<T> ModuleState<T> {
    fn new() -> Self {
        ModuleState {
            memory: HashMap::new(),
            next_addr: 0,
            live: 0,
            kv_index: HashMap::new(),
            ord_index: BTreeMap::new(),
            tasks: Vec::new(),
            reply: Vec::new(),
            words_in: 0,
            words_out: 0,
        }
    }

    pub fn live_objects(&self) -> usize {
        self.live
    }
}

/// Handler-side view of one module during a launch. All accessors check
/// that pointers stay inside this module.
pub struct ModuleEnv<'a, T> {
    id: ModuleId,
    capacity: Option<usize>,
    state: &'a mut ModuleState<T>,
}

impl<'a, T> ModuleEnv<'a, T> {
    pub fn module(&self) -> ModuleId {
        self.id
    }

    /// Appends words to this module's reply buffer.
    pub fn reply(&mut self, words: &[Word]) {
        self.state.reply.extend_from_slice(words);
    }

    pub fn emit(&mut self, word: Word) {
        self.state.reply.push(word);
    }

    /// Allocates a fresh slot for `obj`. Fails when a per-module capacity is
    /// configured and the module is full.
    pub fn alloc(&mut self, obj: T) -> Result<LocalAddress> {
        if let Some(cap) = self.capacity {
            if self.state.live >= cap {
                return Err(Error::ModuleOverflow {
                    module: self.id.0,
                    capacity: cap,
                });
            }
        }
        let addr = self.state.next_addr;
        self.state.next_addr += 1;
        self.state.memory.insert(addr, obj);
        self.state.live += 1;
        Ok(LocalAddress(addr))
    }

    pub fn free(&mut self, addr: LocalAddress) -> Result<T> {
        match self.state.memory.remove(&addr.0) {
            Some(obj) => {
                self.state.live -= 1;
                Ok(obj)
            }
            None => Err(Error::DanglingPointer {
                module: self.id.0,
                addr: addr.0,
            }),
        }
    }

    fn check_local(&self, ptr: PimPointer) -> Result<()> {
        if ptr.module != self.id {
            return Err(Error::CrossModuleAccess {
                module: self.id.0,
                target: ptr.module.0,
            });
        }
        Ok(())
    }

    pub fn object(&self, ptr: PimPointer) -> Result<&T> {
        self.check_local(ptr)?;
        self.state
            .memory
            .get(&ptr.addr.0)
            .ok_or(Error::DanglingPointer {
                module: self.id.0,
                addr: ptr.addr.0,
            })
    }

    pub fn object_mut(&mut self, ptr: PimPointer) -> Result<&mut T> {
        self.check_local(ptr)?;
        self.state
            .memory
            .get_mut(&ptr.addr.0)
            .ok_or(Error::DanglingPointer {
                module: self.id.0,
                addr: ptr.addr.0,
            })
    }

    pub fn kv_insert(&mut self, key: u64, addr: LocalAddress) {
        self.state.kv_index.insert(key, addr.0);
    }

    pub fn kv_get(&self, key: u64) -> Option<LocalAddress> {
        self.state.kv_index.get(&key).copied().map(LocalAddress)
    }

    pub fn kv_remove(&mut self, key: u64) -> Option<LocalAddress> {
        self.state.kv_index.remove(&key).map(LocalAddress)
    }

    pub fn ord_insert(&mut self, key: u64, addr: LocalAddress) {
        self.state.ord_index.insert(key, addr.0);
    }

    pub fn ord_remove(&mut self, key: u64) -> Option<LocalAddress> {
        self.state.ord_index.remove(&key).map(LocalAddress)
    }

    /// Largest indexed key `<= key`, if any.
    pub fn ord_predecessor(&self, key: u64) -> Option<(u64, LocalAddress)> {
        self.state
            .ord_index
            .range(..=key)
            .next_back()
            .map(|(k, a)| (*k, LocalAddress(*a)))
    }

    /// Indexed keys in `lo..=hi`, ascending.
    pub fn ord_range(&self, lo: u64, hi: u64) -> Vec<(u64, LocalAddress)> {
        self.state
            .ord_index
            .range(lo..=hi)
            .map(|(k, a)| (*k, LocalAddress(*a)))
            .collect()
    }
}

/// The machine: `P` isolated module memories plus bulk-synchronous
/// scatter / broadcast / launch / gather primitives with traffic accounting.
///
/// Handlers run sequentially in module order; they are module-pure, so a
/// parallel schedule would be legal, but the sequential order keeps runs
/// bit-identical.
pub struct PimMachine<T> {
    modules: Vec<ModuleState<T>>,
    stats: CommStats,
    /// Receive traffic staged by scatter/broadcast since the last launch;
    /// attributed to the next round when it starts.
    staged_recv: Vec<u64>,
    staged_recv_padded: Vec<u64>,
    launched_since_gather: bool,
    capacity: Option<usize>,
}

impl<T> PimMachine<T> {
    pub fn new(modules: usize, mode: AccountingMode) -> Result<Self> {
        if modules == 0 || modules > (1 << 16) {
            return Err(Error::Config(format!(
                "module count must be in 1..=65536, got {modules}"
            )));
        }
        Ok(PimMachine {
            modules: (0..modules).map(|_| ModuleState::new()).collect(),
            stats: CommStats::new(modules, mode),
            staged_recv: vec![0; modules],
            staged_recv_padded: vec![0; modules],
            launched_since_gather: false,
            capacity: None,
        })
    }

    /// Limits every module to `cap` live objects; allocation beyond the
    /// limit fails the launch with `ModuleOverflow`.
    pub fn set_capacity(&mut self, cap: Option<usize>) {
        self.capacity = cap;
    }

    pub fn module_count(&self) -> usize {
        self.modules.len()
    }

    pub fn mode(&self) -> AccountingMode {
        self.stats.mode
    }

    /// Replaces every module's task buffer with its entry of `buffers` and
    /// bills the receive traffic. Never advances the round counter.
    pub fn scatter(&mut self, buffers: Vec<Vec<Word>>) -> Result<()> {
        let p = self.modules.len();
        if buffers.len() != p {
            return Err(Error::Config(format!(
                "scatter expects {p} buffers, got {}",
                buffers.len()
            )));
        }
        let max_len = buffers.iter().map(Vec::len).max().unwrap_or(0) as u64;
        for (m, buf) in buffers.into_iter().enumerate() {
            let len = buf.len() as u64;
            self.stats.per_module_recv[m] += len;
            self.stats.per_module_recv_padded[m] += max_len;
            self.stats.host_words_out += len;
            self.staged_recv[m] += len;
            self.staged_recv_padded[m] += max_len;
            self.modules[m].words_in += len;
            self.modules[m].tasks = buf;
        }
        Ok(())
    }

    /// Copies one buffer into every module's task buffer; every module is
    /// billed the full length under both overlays.
    pub fn broadcast(&mut self, buffer: &[Word]) -> Result<()>
    where
        T: Clone,
    {
        let len = buffer.len() as u64;
        let p = self.modules.len();
        for m in 0..p {
            self.stats.per_module_recv[m] += len;
            self.stats.per_module_recv_padded[m] += len;
            self.stats.host_words_out += len;
            self.staged_recv[m] += len;
            self.staged_recv_padded[m] += len;
            self.modules[m].words_in += len;
            self.modules[m].tasks = buffer.to_vec();
        }
        Ok(())
    }

    /// Runs `handler` once per module over that module's state only, and
    /// advances the round counter by exactly one. The handler reads the
    /// module's task buffer (passed by value) and fills its reply buffer.
    pub fn launch<F>(&mut self, mut handler: F) -> Result<()>
    where
        F: FnMut(&mut ModuleEnv<'_, T>, &[Word]) -> Result<()>,
    {
        self.stats.rounds += 1;
        let round = self.stats.rounds;
        let p = self.modules.len();
        let mut log = RoundStats::new(round, p);
        log.recv = std::mem::replace(&mut self.staged_recv, vec![0; p]);
        log.recv_padded = std::mem::replace(&mut self.staged_recv_padded, vec![0; p]);
        self.stats.per_round.push(log);
        self.launched_since_gather = true;

        for m in 0..p {
            let state = &mut self.modules[m];
            let tasks = std::mem::take(&mut state.tasks);
            state.reply.clear();
            let mut env = ModuleEnv {
                id: ModuleId(m as u32),
                capacity: self.capacity,
                state,
            };
            handler(&mut env, &tasks)?;
        }
        Ok(())
    }

    /// Takes every module's reply buffer and bills the send traffic against
    /// the most recent launch.
    pub fn gather(&mut self) -> Result<Vec<Vec<Word>>> {
        if !self.launched_since_gather {
            return Err(Error::Protocol(
                "gather requires a completed launch since the previous gather".into(),
            ));
        }
        self.launched_since_gather = false;
        let replies: Vec<Vec<Word>> = self
            .modules
            .iter_mut()
            .map(|m| std::mem::take(&mut m.reply))
            .collect();
        let max_len = replies.iter().map(Vec::len).max().unwrap_or(0) as u64;
        let log = self
            .stats
            .per_round
            .last_mut()
            .expect("launch pushed a round log");
        for (m, r) in replies.iter().enumerate() {
            let len = r.len() as u64;
            self.stats.per_module_sent[m] += len;
            self.stats.per_module_sent_padded[m] += max_len;
            self.stats.host_words_in += len;
            self.modules[m].words_out += len;
            log.sent[m] += len;
            log.sent_padded[m] += max_len;
        }
        Ok(replies)
    }

    /// Immutable copy of the counters; the machine is unchanged.
    pub fn snapshot_stats(&self) -> CommStats {
        self.stats.clone()
    }

    pub fn stats(&self) -> &CommStats {
        &self.stats
    }

    /// Sum of the module-side receive counters (conservation cross-check).
    pub fn module_words_in_total(&self) -> u64 {
        self.modules.iter().map(|m| m.words_in).sum()
    }

    /// Sum of the module-side send counters (conservation cross-check).
    pub fn module_words_out_total(&self) -> u64 {
        self.modules.iter().map(|m| m.words_out).sum()
    }

    // ---- host-side simulation hooks -------------------------------------
    //
    // The accessors below model loading an initial machine image and
    // verification/debug instrumentation. They bypass the communication
    // interface and are never billed; operations on a live index must go
    // through scatter/launch/gather instead.

    /// Unbilled host read of one object.
    pub fn host_object(&self, ptr: PimPointer) -> Option<&T> {
        self.modules
            .get(ptr.module.0 as usize)?
            .memory
            .get(&ptr.addr.0)
    }

    /// Unbilled host write access to one object.
    pub fn host_object_mut(&mut self, ptr: PimPointer) -> Option<&mut T> {
        self.modules
            .get_mut(ptr.module.0 as usize)?
            .memory
            .get_mut(&ptr.addr.0)
    }

    /// Unbilled host-side allocation (initial image only).
    pub fn host_alloc(&mut self, module: ModuleId, obj: T) -> Result<PimPointer> {
        let cap = self.capacity;
        let state = self
            .modules
            .get_mut(module.0 as usize)
            .ok_or_else(|| Error::Config(format!("no module {module}")))?;
        if let Some(cap) = cap {
            if state.live >= cap {
                return Err(Error::ModuleOverflow {
                    module: module.0,
                    capacity: cap,
                });
            }
        }
        let addr = state.next_addr;
        state.next_addr += 1;
        state.memory.insert(addr, obj);
        state.live += 1;
        Ok(PimPointer::new(module, LocalAddress(addr)))
    }

    /// Unbilled host-side index seed (initial image only).
    pub fn host_kv_insert(&mut self, module: ModuleId, key: u64, addr: LocalAddress) {
        self.modules[module.0 as usize].kv_index.insert(key, addr.0);
    }

    /// Unbilled host-side ordered-index seed (initial image only).
    pub fn host_ord_insert(&mut self, module: ModuleId, key: u64, addr: LocalAddress) {
        self.modules[module.0 as usize]
            .ord_index
            .insert(key, addr.0);
    }

    /// Live object count of one module.
    pub fn live_objects(&self, module: ModuleId) -> usize {
        self.modules[module.0 as usize].live
    }

    /// Unbilled sorted dump of one module's objects, for verification.
    pub fn host_snapshot(&self, module: ModuleId) -> Vec<(LocalAddress, &T)> {
        let mut v: Vec<_> = self.modules[module.0 as usize]
            .memory
            .iter()
            .map(|(a, o)| (LocalAddress(*a), o))
            .collect();
        v.sort_by_key(|(a, _)| *a);
        v
    }
}

/// Sequential reader over a word stream with protocol-error reporting;
/// used by hosts and PIM programs to decode task and reply buffers.
pub struct WordReader<'a> {
    words: &'a [Word],
    pos: usize,
}

impl<'a> WordReader<'a> {
    pub fn new(words: &'a [Word]) -> Self {
        WordReader { words, pos: 0 }
    }

    pub fn done(&self) -> bool {
        self.pos >= self.words.len()
    }

    pub fn word(&mut self) -> Result<Word> {
        let w = self
            .words
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::Protocol("unexpected end of word stream".into()))?;
        self.pos += 1;
        Ok(w)
    }

    pub fn ptr(&mut self) -> Result<PimPointer> {
        PimPointer::unpack(self.word()?)
            .ok_or_else(|| Error::Protocol("unexpected null pointer".into()))
    }

    pub fn opt_ptr(&mut self) -> Result<Option<PimPointer>> {
        Ok(PimPointer::unpack(self.word()?))
    }

    pub fn slice(&mut self, n: usize) -> Result<&'a [Word]> {
        let end = self.pos + n;
        if end > self.words.len() {
            return Err(Error::Protocol("unexpected end of word stream".into()));
        }
        let s = &self.words[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    /// Remaining words without consuming them; pair with [`advance`].
    ///
    /// [`advance`]: WordReader::advance
    pub fn slice_rest(&self) -> &'a [Word] {
        &self.words[self.pos..]
    }

    pub fn advance(&mut self, n: usize) -> Result<()> {
        if self.pos + n > self.words.len() {
            return Err(Error::Protocol("advance past end of word stream".into()));
        }
        self.pos += n;
        Ok(())
    }
}

/// Deterministic key-to-module placement shared by the hash-distributed
/// layers: a splitmix64 finalizer reduced modulo `P`.
pub fn key_module(key: u64, modules: usize) -> ModuleId {
    let mut z = key.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ModuleId((z % modules as u64) as u32)
}
