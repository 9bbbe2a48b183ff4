//! Simulation of a processing-in-memory (PIM) machine and the batch-parallel
//! ordered indexes that run on it.
//!
//! The crate has five parts:
//!
//! * [`pim_model`] — the machine itself: `P` PIM modules with isolated local
//!   memories, a host that is the only communication hub, and word-exact
//!   accounting of all host/module traffic in bulk-synchronous rounds.
//! * [`pim_tree`] — a skew-resistant ordered index built from a replicated
//!   top layer, a middle layer of chunked skip-list nodes carrying shadow
//!   subtrees, a bottom chunked layer, and hash-distributed data nodes.
//!   Batches of `get`/`update`/`predecessor`/`insert`/`delete`/`scan` run as
//!   bulk-synchronous rounds with push-pull contention control.
//! * [`baseline_range`] — a range-partitioned competitor index: contiguous
//!   key ranges per module, no replication, skew-fragile by construction.
//! * [`workloads`] — deterministic generators: uniform and part-skewed
//!   Zipfian key streams, YCSB-style operation mixes, a word/doc-id key
//!   encoder, and a replayable line-based script format.
//! * [`oracle`] — a host-side sorted-map reference used to produce expected
//!   results and expected per-level structure for any batch sequence.

pub mod baseline_range;
mod error;
pub mod oracle;
pub mod pim_model;
pub mod pim_tree;
pub mod workloads;

pub use error::{Error, Result};

/// Keys are 64-bit unsigned integers. Key `0` is reserved as the minimum
/// sentinel and is never inserted or deleted by users.
pub type Key = u64;
/// Values are 64-bit unsigned integers (one accounting word).
pub type Value = u64;

/// The reserved minimum-sentinel key present in every level of every index.
pub const SENTINEL_KEY: Key = 0;

/// Outcome of a single scan range: either the matching pairs in ascending
/// key order, or a rejection because the range bounds were inverted.
pub type ScanOutcome = std::result::Result<Vec<(Key, Value)>, InvalidRange>;

/// Per-range rejection marker for `scan` inputs with `lo > hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvalidRange;

/// Batch entry points shared by the PIM-tree and the range-partitioned
/// baseline so harnesses can treat both uniformly.
pub trait BatchIndex {
    /// Short stable name for reports.
    fn kind(&self) -> &'static str;

    /// Point lookups by hash; absent keys yield `None`.
    fn get_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<Value>>>;

    /// In-place value replacement; the flag reports whether the key existed.
    fn update_batch(&mut self, pairs: &[(Key, Value)]) -> Result<Vec<bool>>;

    /// Inserts all pairs; inserting an existing key updates its value.
    fn insert_batch(&mut self, pairs: &[(Key, Value)]) -> Result<()>;

    /// Deletes the given keys; absent keys are ignored.
    fn delete_batch(&mut self, keys: &[Key]) -> Result<()>;

    /// For each query, the largest stored key `<= query` with its value, or
    /// `None` when the query precedes every stored key.
    fn predecessor_batch(&mut self, keys: &[Key]) -> Result<Vec<Option<(Key, Value)>>>;

    /// Range scans; each `(lo, hi)` yields all pairs with `lo <= key <= hi`.
    fn scan_batch(&mut self, ranges: &[(Key, Key)]) -> Result<Vec<ScanOutcome>>;

    /// Immutable view of the cumulative communication counters.
    fn comm_stats(&self) -> pim_model::CommStats;
}
