//! Experiment runner: builds an index (the push-pull tree or the
//! range-partitioned baseline), replays or generates a workload, and emits
//! per-batch communication metrics as CSV or JSON. Reports are byte-stable
//! for a fixed configuration and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pim_index::baseline_range::RangePartitionedIndex;
use pim_index::oracle::Oracle;
use pim_index::pim_model::AccountingMode;
use pim_index::pim_tree::{PimTree, TreeConfig};
use pim_index::workloads::{
    encode_wiki_key, gen_modified_zipfian, gen_uniform_keys, gen_ycsb, parse_script, KeyUniverse,
    OpBatch, SkewSpec, WorkloadScript, YcsbSpec, YcsbWorkload,
};
use pim_index::{BatchIndex, Error as SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKind {
    PimTree,
    RangePartitioned,
}

impl IndexKind {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        match s {
            "pim-tree" => Ok(IndexKind::PimTree),
            "range" | "range-partitioned" => Ok(IndexKind::RangePartitioned),
            other => bail!("unknown index kind {other:?} (expected pim-tree or range)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MicroOp {
    Get,
    Update,
    Predecessor,
    Insert,
    Delete,
    Scan,
}

impl MicroOp {
    fn name(self) -> &'static str {
        match self {
            MicroOp::Get => "get",
            MicroOp::Update => "update",
            MicroOp::Predecessor => "predecessor",
            MicroOp::Insert => "insert",
            MicroOp::Delete => "delete",
            MicroOp::Scan => "scan",
        }
    }
}

/// Workload selector: `micro:<op>`, `ycsb:<A-E>`, `wiki:<file>`, or
/// `script:<file>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "arg", rename_all = "lowercase")]
pub enum Workload {
    Micro(MicroOp),
    Ycsb(String),
    Wiki(String),
    Script(String),
}

impl Workload {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| {
            anyhow!("workload must look like micro:predecessor, ycsb:A, wiki:FILE, or script:FILE")
        })?;
        match kind {
            "micro" => Ok(Workload::Micro(match arg {
                "get" => MicroOp::Get,
                "update" => MicroOp::Update,
                "predecessor" => MicroOp::Predecessor,
                "insert" => MicroOp::Insert,
                "delete" => MicroOp::Delete,
                "scan" => MicroOp::Scan,
                other => bail!("unknown micro op {other:?}"),
            })),
            "ycsb" => {
                YcsbWorkload::parse(arg).ok_or_else(|| anyhow!("unknown YCSB letter {arg:?}"))?;
                Ok(Workload::Ycsb(arg.to_ascii_uppercase()))
            }
            "wiki" => Ok(Workload::Wiki(arg.to_string())),
            "script" => Ok(Workload::Script(arg.to_string())),
            other => bail!("unknown workload kind {other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accounting {
    Unpadded,
    Padded,
}

impl From<Accounting> for AccountingMode {
    fn from(a: Accounting) -> Self {
        match a {
            Accounting::Unpadded => AccountingMode::Unpadded,
            Accounting::Padded => AccountingMode::Padded,
        }
    }
}

/// Full description of one run; echoed verbatim into every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub index: IndexKind,
    pub modules: usize,
    pub fanout: u32,
    pub init_size: u64,
    pub ops: u64,
    pub batch_size: u64,
    /// Zipfian exponents; the run repeats per exponent on a fresh index.
    pub alphas: Vec<f64>,
    pub workload: Workload,
    pub seed: u64,
    pub accounting: Accounting,
    /// Per-module capacity as a multiple of the fair share
    /// `(init_size + ops) / modules`; `None` leaves memory unbounded.
    pub capacity_factor: Option<f64>,
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.modules == 0 {
            bail!("module count must be positive");
        }
        if self.fanout < 2 {
            bail!("fanout must be at least 2");
        }
        if self.batch_size == 0 {
            bail!("batch size must be positive");
        }
        if self.alphas.is_empty() {
            bail!("at least one alpha is required");
        }
        Ok(())
    }
}

/// One report line: a batch (or a per-alpha summary, or a recorded
/// failure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub alpha: f64,
    pub batch: u64,
    pub op: String,
    pub size: u64,
    pub rounds: u64,
    pub total_words: u64,
    pub words_per_op: f64,
    pub max_module_words: u64,
    pub mean_module_words: f64,
    pub imbalance: f64,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub rows: Vec<Row>,
}

const CSV_HEADER: &str = "alpha,batch,op,size,rounds,total_words,words_per_op,max_module_words,mean_module_words,imbalance,status";

impl Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let _ = writeln!(out, "# config {config}");
        let _ = writeln!(out, "{CSV_HEADER}");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.6},{},{},{},{},{},{:.6},{},{:.6},{:.6},{}",
                r.alpha,
                r.batch,
                r.op,
                r.size,
                r.rounds,
                r.total_words,
                r.words_per_op,
                r.max_module_words,
                r.mean_module_words,
                r.imbalance,
                r.status
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_csv(text: &str) -> anyhow::Result<Report> {
        let mut config = None;
        let mut rows = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# config ") {
                config = Some(serde_json::from_str(rest).context("config comment")?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') || line == CSV_HEADER {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                bail!("malformed CSV row: {line}");
            }
            rows.push(Row {
                alpha: f[0].parse()?,
                batch: f[1].parse()?,
                op: f[2].to_string(),
                size: f[3].parse()?,
                rounds: f[4].parse()?,
                total_words: f[5].parse()?,
                words_per_op: f[6].parse()?,
                max_module_words: f[7].parse()?,
                mean_module_words: f[8].parse()?,
                imbalance: f[9].parse()?,
                status: f[10].to_string(),
            });
        }
        Ok(Report {
            config: config.ok_or_else(|| anyhow!("CSV report lacks its config comment"))?,
            rows,
        })
    }

    pub fn from_json(text: &str) -> anyhow::Result<Report> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses by extension: `.json` as JSON, anything else as CSV.
    pub fn parse_file(path: &str, text: &str) -> anyhow::Result<Report> {
        if path.ends_with(".json") {
            Report::from_json(text)
        } else {
            Report::from_csv(text)
        }
    }
}

/// Ratio table between two reports with matching batch schedules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub alpha: f64,
    pub batch: u64,
    pub op: String,
    pub words_per_op_ratio: f64,
    pub imbalance_ratio: f64,
}

pub fn compare(a: &Report, b: &Report) -> anyhow::Result<Vec<CompareRow>> {
    let key = |r: &Row| (format!("{:.6}", r.alpha), r.batch, r.op.clone());
    let bmap: BTreeMap<_, &Row> = b.rows.iter().map(|r| (key(r), r)).collect();
    let mut out = Vec::new();
    for ra in &a.rows {
        let rb = bmap
            .get(&key(ra))
            .ok_or_else(|| anyhow!("schedules differ at alpha {} batch {}", ra.alpha, ra.batch))?;
        if ra.size != rb.size {
            bail!(
                "schedules differ: batch {} sizes {} versus {}",
                ra.batch,
                ra.size,
                rb.size
            );
        }
        let ratio = |x: f64, y: f64| if y == 0.0 { 0.0 } else { x / y };
        out.push(CompareRow {
            alpha: ra.alpha,
            batch: ra.batch,
            op: ra.op.clone(),
            words_per_op_ratio: ratio(rb.words_per_op, ra.words_per_op),
            imbalance_ratio: ratio(rb.imbalance, ra.imbalance),
        });
    }
    Ok(out)
}

pub fn compare_to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("alpha,batch,op,words_per_op_ratio,imbalance_ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.6},{},{},{:.6},{:.6}",
            r.alpha, r.batch, r.op, r.words_per_op_ratio, r.imbalance_ratio
        );
    }
    out
}

enum Index {
    Tree(Box<PimTree>),
    Range(Box<RangePartitionedIndex>),
}

impl Index {
    fn as_batch(&mut self) -> &mut dyn BatchIndex {
        match self {
            Index::Tree(t) => t.as_mut(),
            Index::Range(r) => r.as_mut(),
        }
    }
}

/// Builds the index, warms it up, replays the evaluation batches, and
/// collects one row per batch plus a summary row per alpha. A module
/// overflow of the baseline is recorded as a failure row, not an error.
pub fn run(config: &RunConfig) -> anyhow::Result<Report> {
    config.validate()?;
    let mut rows = Vec::new();
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        run_one_alpha(config, alpha, ai, &mut rows)?;
    }
    Ok(Report {
        config: config.clone(),
        rows,
    })
}

fn run_one_alpha(
    config: &RunConfig,
    alpha: f64,
    alpha_index: usize,
    rows: &mut Vec<Row>,
) -> anyhow::Result<()> {
    // per-alpha deterministic streams, decoupled from each other
    let seed = config.seed.wrapping_add(0x9e37_79b9 * alpha_index as u64);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let mut work_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x22);

    let script = build_script(config, alpha, &mut work_rng)?;
    let warmup: Vec<(u64, u64)> = gen_uniform_keys(script.init_count as usize, &mut init_rng)
        .into_iter()
        .map(|k| (k, init_rng.gen()))
        .collect();

    let capacity = config.capacity_factor.map(|f| {
        ((config.init_size + config.ops) as f64 * f / config.modules as f64).ceil() as usize
    });

    let mut oracle = Oracle::new();
    let mut index = match config.index {
        IndexKind::PimTree => {
            let tree_config = TreeConfig::new(config.modules, config.fanout, seed ^ 0x33)
                .map_err(|e| anyhow!("{e}"))?
                .with_accounting(config.accounting.into());
            let mut tree = PimTree::new(tree_config).map_err(|e| anyhow!("{e}"))?;
            for chunk in warmup.chunks(config.batch_size.max(1) as usize) {
                tree.insert_batch(chunk)
                    .map_err(|e| anyhow!("warm-up: {e}"))?;
                let heights = tree.last_heights().to_vec();
                oracle.insert_batch(&dedup(chunk), &heights);
            }
            Index::Tree(Box::new(tree))
        }
        IndexKind::RangePartitioned => {
            let idx = RangePartitionedIndex::build(
                config.modules,
                config.accounting.into(),
                capacity,
                &warmup,
                config.batch_size.max(1) as usize,
            )
            .map_err(|e| anyhow!("baseline warm-up: {e}"))?;
            oracle.insert(
                &warmup.iter().map(|(k, _)| (*k, 1)).collect::<Vec<_>>(),
                &warmup.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
            );
            Index::Range(Box::new(idx))
        }
    };

    // replay; existing-key draws are resolved against the oracle per batch
    for (bi, batch) in script.planned.iter().enumerate() {
        let resolved = resolve_batch(batch, &oracle, alpha, config, &mut work_rng)?;
        let before = index.as_batch().comm_stats();
        let outcome = apply_batch(index.as_batch(), &resolved);
        let after = index.as_batch().comm_stats();
        let delta = after.since(&before);

        let size = resolved.len() as u64;
        let totals = delta.per_module_total();
        let total_words: u64 = totals.iter().sum();
        let max_module = totals.iter().copied().max().unwrap_or(0);
        let mean_module = total_words as f64 / config.modules as f64;
        let mut row = Row {
            alpha,
            batch: bi as u64,
            op: resolved.kind().to_string(),
            size,
            rounds: delta.rounds,
            total_words,
            words_per_op: if size == 0 {
                0.0
            } else {
                total_words as f64 / size as f64
            },
            max_module_words: max_module,
            mean_module_words: mean_module,
            imbalance: delta.imbalance(),
            status: "ok".into(),
        };
        match outcome {
            Ok(()) => {
                apply_to_oracle(&mut oracle, &resolved, &mut index);
                rows.push(row);
            }
            Err(SimError::ModuleOverflow { module, capacity }) => {
                row.status = format!("overflow module {module} capacity {capacity}");
                rows.push(row);
                break;
            }
            Err(e) => return Err(anyhow!("batch {bi}: {e}")),
        }
    }

    // per-alpha summary
    let mine: Vec<&Row> = rows
        .iter()
        .filter(|r| r.alpha == alpha && r.op != "summary")
        .collect();
    let ops: u64 = mine.iter().map(|r| r.size).sum();
    let words: u64 = mine.iter().map(|r| r.total_words).sum();
    let rounds: u64 = mine.iter().map(|r| r.rounds).sum();
    let imb_mean = if mine.is_empty() {
        0.0
    } else {
        mine.iter().map(|r| r.imbalance).sum::<f64>() / mine.len() as f64
    };
    let failed = mine.iter().any(|r| r.status != "ok");
    rows.push(Row {
        alpha,
        batch: mine.len() as u64,
        op: "summary".into(),
        size: ops,
        rounds,
        total_words: words,
        words_per_op: if ops == 0 {
            0.0
        } else {
            words as f64 / ops as f64
        },
        max_module_words: mine.iter().map(|r| r.max_module_words).max().unwrap_or(0),
        mean_module_words: if mine.is_empty() {
            0.0
        } else {
            mine.iter().map(|r| r.mean_module_words).sum::<f64>() / mine.len() as f64
        },
        imbalance: imb_mean,
        status: if failed { "failed" } else { "ok" }.into(),
    });
    Ok(())
}

fn build_script(
    config: &RunConfig,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> anyhow::Result<ScriptToRun> {
    let batch = config.batch_size;
    match &config.workload {
        Workload::Micro(op) => {
            let full = config.ops / batch;
            let rem = config.ops % batch;
            let mut sizes: Vec<u64> = vec![batch; full as usize];
            if rem > 0 {
                sizes.push(rem);
            }
            Ok(ScriptToRun {
                init_count: config.init_size,
                planned: sizes
                    .into_iter()
                    .map(|n| Planned::Micro { op: *op, count: n })
                    .collect(),
            })
        }
        Workload::Ycsb(letter) => {
            let spec = YcsbSpec {
                workload: YcsbWorkload::parse(letter).expect("validated"),
                ops: config.ops,
                skew: SkewSpec::new(alpha, KeyUniverse::All64Bit)
                    .with_shuffle_period(config.batch_size),
                init_count: config.init_size,
                batch_unit: config.batch_size,
                scan_expected: 100,
            };
            let script = gen_ycsb(&spec, rng).map_err(|e| anyhow!("{e}"))?;
            Ok(ScriptToRun {
                init_count: script.init_count,
                planned: script.batches.into_iter().map(Planned::Literal).collect(),
            })
        }
        Workload::Script(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading script {path}"))?;
            let script = parse_script(&text).map_err(|e| anyhow!("{e}"))?;
            Ok(ScriptToRun {
                init_count: script.init_count,
                planned: script.batches.into_iter().map(Planned::Literal).collect(),
            })
        }
        Workload::Wiki(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading word file {path}"))?;
            let mut keys = Vec::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut parts = line.split_whitespace();
                let word = parts.next().unwrap();
                let doc: u64 = match parts.next() {
                    Some(d) => d
                        .parse()
                        .with_context(|| format!("doc id on line {}", i + 1))?,
                    None => (i as u64) & ((1 << 23) - 1),
                };
                keys.push(encode_wiki_key(word, doc).map_err(|e| anyhow!("{e}"))?);
            }
            if keys.len() as u64 <= config.init_size {
                bail!(
                    "word file provides {} keys, not enough beyond init {}",
                    keys.len(),
                    config.init_size
                );
            }
            // first init keys warm up, the rest are predecessor queries
            let init: Vec<(u64, u64)> = keys[..config.init_size as usize]
                .iter()
                .map(|k| (*k, rng.gen()))
                .collect();
            let queries: Vec<u64> = keys[config.init_size as usize..]
                .iter()
                .copied()
                .take(config.ops as usize)
                .collect();
            let mut planned = vec![Planned::Literal(OpBatch::Insert(init))];
            for chunk in queries.chunks(batch.max(1) as usize) {
                planned.push(Planned::Literal(OpBatch::Predecessor(chunk.to_vec())));
            }
            Ok(ScriptToRun {
                init_count: 0,
                planned,
            })
        }
    }
}

struct ScriptToRun {
    init_count: u64,
    planned: Vec<Planned>,
}

/// A batch as planned before replay. Existing-key micro draws resolve
/// against the oracle at replay time, since that universe moves as the
/// index fills.
#[derive(Clone)]
enum Planned {
    Literal(OpBatch),
    Micro { op: MicroOp, count: u64 },
}

fn resolve_batch(
    planned: &Planned,
    oracle: &Oracle,
    alpha: f64,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> anyhow::Result<OpBatch> {
    let existing =
        SkewSpec::new(alpha, KeyUniverse::ExistingKeys).with_shuffle_period(config.batch_size);
    let anywhere =
        SkewSpec::new(alpha, KeyUniverse::All64Bit).with_shuffle_period(config.batch_size);
    match planned {
        Planned::Literal(b) => Ok(b.clone()),
        Planned::Micro { op, count } => {
            let n = *count as usize;
            let live = oracle.live_keys();
            let batch = match op {
                MicroOp::Get => OpBatch::Get(
                    gen_modified_zipfian(&existing, n, Some(&live), rng)
                        .map_err(|e| anyhow!("{e}"))?,
                ),
                MicroOp::Delete => OpBatch::Delete(
                    gen_modified_zipfian(&existing, n, Some(&live), rng)
                        .map_err(|e| anyhow!("{e}"))?,
                ),
                MicroOp::Update => OpBatch::Update(
                    gen_modified_zipfian(&existing, n, Some(&live), rng)
                        .map_err(|e| anyhow!("{e}"))?
                        .into_iter()
                        .map(|k| (k, rng.gen()))
                        .collect(),
                ),
                MicroOp::Predecessor => OpBatch::Predecessor(
                    gen_modified_zipfian(&anywhere, n, None, rng).map_err(|e| anyhow!("{e}"))?,
                ),
                MicroOp::Insert => OpBatch::Insert(
                    gen_modified_zipfian(&anywhere, n, None, rng)
                        .map_err(|e| anyhow!("{e}"))?
                        .into_iter()
                        .map(|k| (k, rng.gen()))
                        .collect(),
                ),
                MicroOp::Scan => {
                    let width = if live.is_empty() {
                        u64::MAX
                    } else {
                        (u128::from(u64::MAX) / live.len() as u128 * 100).min(u128::from(u64::MAX))
                            as u64
                    };
                    OpBatch::Scan(
                        gen_modified_zipfian(&anywhere, n, None, rng)
                            .map_err(|e| anyhow!("{e}"))?
                            .into_iter()
                            .map(|k| (k, k.saturating_add(width)))
                            .collect(),
                    )
                }
            };
            Ok(batch)
        }
    }
}

fn apply_batch(index: &mut dyn BatchIndex, batch: &OpBatch) -> Result<(), SimError> {
    match batch {
        OpBatch::Get(keys) => index.get_batch(keys).map(|_| ()),
        OpBatch::Update(pairs) => index.update_batch(pairs).map(|_| ()),
        OpBatch::Insert(pairs) => index.insert_batch(pairs),
        OpBatch::Delete(keys) => index.delete_batch(keys),
        OpBatch::Predecessor(keys) => index.predecessor_batch(keys).map(|_| ()),
        OpBatch::Scan(ranges) => index.scan_batch(ranges).map(|_| ()),
    }
}

fn apply_to_oracle(oracle: &mut Oracle, batch: &OpBatch, index: &mut Index) {
    match batch {
        OpBatch::Insert(pairs) => match index {
            Index::Tree(t) => {
                let heights = t.last_heights().to_vec();
                oracle.insert_batch(&dedup(pairs), &heights);
            }
            Index::Range(_) => oracle.insert(
                &pairs.iter().map(|(k, _)| (*k, 1)).collect::<Vec<_>>(),
                &pairs.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
            ),
        },
        OpBatch::Delete(keys) => oracle.delete_batch(keys),
        OpBatch::Update(pairs) => {
            oracle.update_batch(pairs);
        }
        _ => {}
    }
}

fn dedup(pairs: &[(u64, u64)]) -> Vec<(u64, u64)> {
    let mut index = std::collections::HashMap::new();
    let mut items: Vec<(u64, u64)> = Vec::new();
    for (k, v) in pairs {
        match index.get(k) {
            Some(&i) => items[i] = (*k, *v),
            None => {
                index.insert(*k, items.len());
                items.push((*k, *v));
            }
        }
    }
    items
}

/// Generates a standalone workload script (for `gen-workload`).
pub fn generate_script(
    workload: &Workload,
    config: &RunConfig,
    alpha: f64,
) -> anyhow::Result<WorkloadScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x22);
    match workload {
        Workload::Ycsb(letter) => {
            let spec = YcsbSpec {
                workload: YcsbWorkload::parse(letter).ok_or_else(|| anyhow!("bad letter"))?,
                ops: config.ops,
                skew: SkewSpec::new(alpha, KeyUniverse::All64Bit)
                    .with_shuffle_period(config.batch_size),
                init_count: config.init_size,
                batch_unit: config.batch_size,
                scan_expected: 100,
            };
            gen_ycsb(&spec, &mut rng).map_err(|e| anyhow!("{e}"))
        }
        Workload::Micro(op) => {
            // micro scripts materialize whole-space streams; existing-key
            // ops need a live index and are resolved at run time instead
            let mut batches = Vec::new();
            let spec =
                SkewSpec::new(alpha, KeyUniverse::All64Bit).with_shuffle_period(config.batch_size);
            let mut left = config.ops;
            while left > 0 {
                let n = left.min(config.batch_size) as usize;
                left -= n as u64;
                let keys =
                    gen_modified_zipfian(&spec, n, None, &mut rng).map_err(|e| anyhow!("{e}"))?;
                batches.push(match op {
                    MicroOp::Predecessor => OpBatch::Predecessor(keys),
                    MicroOp::Insert => {
                        OpBatch::Insert(keys.into_iter().map(|k| (k, rng.gen())).collect())
                    }
                    MicroOp::Scan => {
                        let width = (u128::from(u64::MAX) / u128::from(config.init_size.max(1))
                            * 100)
                            .min(u128::from(u64::MAX)) as u64;
                        OpBatch::Scan(
                            keys.into_iter()
                                .map(|k| (k, k.saturating_add(width)))
                                .collect(),
                        )
                    }
                    other => bail!(
                        "gen-workload supports whole-space micro ops \
                         (predecessor, insert, scan), not {}",
                        other.name()
                    ),
                });
            }
            Ok(WorkloadScript {
                init_count: config.init_size,
                batches,
            })
        }
        other => bail!("gen-workload cannot generate {other:?}"),
    }
}
