//! Replayable line-based workload scripts.
//!
//! Format, one line each:
//!
//! ```text
//! # comment
//! init <count>
//! batch <type> <n>
//! get <key>
//! upd <key> <value>
//! ins <key> <value>
//! del <key>
//! pred <key>
//! scan <lkey> <rkey>
//! ```
//!
//! `init <count>` asks the runner to warm up with that many uniform random
//! inserts from its seed. Every `batch` header is followed by exactly `n`
//! op lines of the named type.

use crate::{Error, Key, Result, Value};

/// One same-type atomic batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpBatch {
    Get(Vec<Key>),
    Update(Vec<(Key, Value)>),
    Insert(Vec<(Key, Value)>),
    Delete(Vec<Key>),
    Predecessor(Vec<Key>),
    Scan(Vec<(Key, Key)>),
}

impl OpBatch {
    pub fn kind(&self) -> &'static str {
        match self {
            OpBatch::Get(_) => "get",
            OpBatch::Update(_) => "update",
            OpBatch::Insert(_) => "insert",
            OpBatch::Delete(_) => "delete",
            OpBatch::Predecessor(_) => "predecessor",
            OpBatch::Scan(_) => "scan",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            OpBatch::Get(v) => v.len(),
            OpBatch::Update(v) => v.len(),
            OpBatch::Insert(v) => v.len(),
            OpBatch::Delete(v) => v.len(),
            OpBatch::Predecessor(v) => v.len(),
            OpBatch::Scan(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A warm-up size plus a sequence of same-type batches.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorkloadScript {
    pub init_count: u64,
    pub batches: Vec<OpBatch>,
}

pub fn write_script(script: &WorkloadScript) -> String {
    let mut out = String::from("# pim workload v1\n");
    out.push_str(&format!("init {}\n", script.init_count));
    for b in &script.batches {
        out.push_str(&format!("batch {} {}\n", b.kind(), b.len()));
        match b {
            OpBatch::Get(v) => {
                for k in v {
                    out.push_str(&format!("get {k}\n"));
                }
            }
            OpBatch::Update(v) => {
                for (k, val) in v {
                    out.push_str(&format!("upd {k} {val}\n"));
                }
            }
            OpBatch::Insert(v) => {
                for (k, val) in v {
                    out.push_str(&format!("ins {k} {val}\n"));
                }
            }
            OpBatch::Delete(v) => {
                for k in v {
                    out.push_str(&format!("del {k}\n"));
                }
            }
            OpBatch::Predecessor(v) => {
                for k in v {
                    out.push_str(&format!("pred {k}\n"));
                }
            }
            OpBatch::Scan(v) => {
                for (l, r) in v {
                    out.push_str(&format!("scan {l} {r}\n"));
                }
            }
        }
    }
    out
}

pub fn parse_script(text: &str) -> Result<WorkloadScript> {
    let err = |line: usize, msg: &str| Error::ScriptParse {
        line,
        msg: msg.into(),
    };
    let mut script = WorkloadScript::default();
    let mut lines = text.lines().enumerate().peekable();
    let mut saw_init = false;
    while let Some((ln, raw)) = lines.next() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap();
        match head {
            "init" => {
                if saw_init {
                    return Err(err(ln + 1, "duplicate init line"));
                }
                saw_init = true;
                script.init_count = parse_num(parts.next(), ln)?;
            }
            "batch" => {
                let kind = parts
                    .next()
                    .ok_or_else(|| err(ln + 1, "batch needs a type"))?
                    .to_string();
                let n = parse_num(parts.next(), ln)? as usize;
                let mut batch = match kind.as_str() {
                    "get" => OpBatch::Get(Vec::with_capacity(n)),
                    "update" => OpBatch::Update(Vec::with_capacity(n)),
                    "insert" => OpBatch::Insert(Vec::with_capacity(n)),
                    "delete" => OpBatch::Delete(Vec::with_capacity(n)),
                    "predecessor" => OpBatch::Predecessor(Vec::with_capacity(n)),
                    "scan" => OpBatch::Scan(Vec::with_capacity(n)),
                    other => return Err(err(ln + 1, &format!("unknown batch type {other}"))),
                };
                for _ in 0..n {
                    let (oln, oraw) = lines
                        .next()
                        .ok_or_else(|| err(ln + 1, "batch shorter than declared"))?;
                    let oline = oraw.trim();
                    let mut op = oline.split_whitespace();
                    let tag = op.next().ok_or_else(|| err(oln + 1, "empty op line"))?;
                    match (&mut batch, tag) {
                        (OpBatch::Get(v), "get") => v.push(parse_num(op.next(), oln)?),
                        (OpBatch::Update(v), "upd") => {
                            v.push((parse_num(op.next(), oln)?, parse_num(op.next(), oln)?))
                        }
                        (OpBatch::Insert(v), "ins") => {
                            v.push((parse_num(op.next(), oln)?, parse_num(op.next(), oln)?))
                        }
                        (OpBatch::Delete(v), "del") => v.push(parse_num(op.next(), oln)?),
                        (OpBatch::Predecessor(v), "pred") => v.push(parse_num(op.next(), oln)?),
                        (OpBatch::Scan(v), "scan") => {
                            v.push((parse_num(op.next(), oln)?, parse_num(op.next(), oln)?))
                        }
                        _ => return Err(err(oln + 1, &format!("op {tag} outside its batch"))),
                    }
                }
                script.batches.push(batch);
            }
            other => return Err(err(ln + 1, &format!("unknown directive {other}"))),
        }
    }
    Ok(script)
}

fn parse_num(tok: Option<&str>, line: usize) -> Result<u64> {
    tok.ok_or_else(|| Error::ScriptParse {
        line: line + 1,
        msg: "missing number".into(),
    })?
    .parse()
    .map_err(|e| Error::ScriptParse {
        line: line + 1,
        msg: format!("bad number: {e}"),
    })
}
