use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A host-side configuration contract was violated (wrong buffer count,
    /// invalid parameters, malformed inputs).
    #[error("configuration error: {0}")]
    Config(String),

    /// A PIM program dereferenced a pointer into a different module's
    /// memory. Mirrors the hardware fault: there is no direct PIM-to-PIM
    /// access, so this aborts the run.
    #[error("isolation fault: module {module} dereferenced a pointer into module {target}")]
    CrossModuleAccess { module: u32, target: u32 },

    /// A pointer referenced an address with no live object.
    #[error("dangling pointer: module {module} address {addr}")]
    DanglingPointer { module: u32, addr: u64 },

    /// A module ran out of local memory (only when a per-module capacity is
    /// configured). Reproduces the insert-overflow failure of the
    /// range-partitioned baseline under skew.
    #[error("module {module} overflowed its local memory (capacity {capacity} objects)")]
    ModuleOverflow { module: u32, capacity: usize },

    /// `gather` was invoked without a completed `launch` since the previous
    /// gather, or some other bulk-synchronous sequencing bug.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A user operation referenced the reserved sentinel key `0`.
    #[error("key 0 is reserved as the minimum sentinel")]
    ReservedKey,

    /// Existing-key workload generation was asked to draw from an empty set.
    #[error("cannot draw existing-key operations from an empty live key set")]
    EmptyKeyUniverse,

    /// Document ids must fit in 23 bits.
    #[error("document id {0} does not fit in 23 bits")]
    DocIdOverflow(u64),

    /// A workload script could not be parsed.
    #[error("script parse error at line {line}: {msg}")]
    ScriptParse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
