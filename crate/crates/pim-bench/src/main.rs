//! Command-line front end: `bench` runs an experiment and writes a report,
//! `gen-workload` materializes a replayable script, `compare` turns two
//! reports into a ratio table.

use std::io::Write as _;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use pim_bench::{
    compare, compare_to_csv, generate_script, run, Accounting, IndexKind, Report, RunConfig,
    Workload,
};
use pim_index::workloads::write_script;

#[derive(Parser)]
#[command(
    name = "pim-bench",
    about = "Benchmark harness for the PIM index simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and emit per-batch metrics.
    Bench(BenchArgs),
    /// Generate a replayable workload script.
    GenWorkload(GenArgs),
    /// Produce a ratio table from two reports with matching schedules.
    Compare(CompareArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Index under test: pim-tree | range.
    #[arg(long)]
    index: Option<String>,
    /// Number of PIM modules.
    #[arg(long = "pim-modules")]
    pim_modules: Option<usize>,
    /// Expected node fanout.
    #[arg(long)]
    fanout: Option<u32>,
    /// Warm-up inserts before evaluation.
    #[arg(long = "init-size")]
    init_size: Option<u64>,
    /// Evaluation operations.
    #[arg(long)]
    ops: Option<u64>,
    /// Operations per batch.
    #[arg(long = "batch-size")]
    batch_size: Option<u64>,
    /// Comma-separated Zipfian exponents, one run per value.
    #[arg(long)]
    alpha: Option<String>,
    /// micro:<op> | ycsb:<A-E> | wiki:<file> | script:<file>.
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// unpadded | padded.
    #[arg(long)]
    accounting: Option<String>,
    /// Per-module capacity as a multiple of the fair share.
    #[arg(long = "capacity-factor")]
    capacity_factor: Option<f64>,
    /// Base configuration file (TOML); explicit flags override it.
    #[arg(long)]
    config: Option<String>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<String>,
    /// csv | json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct GenArgs {
    /// ycsb:<A-E> or a whole-space micro op (micro:predecessor etc).
    #[arg(long)]
    workload: String,
    #[arg(long = "init-size", default_value_t = 100_000)]
    init_size: u64,
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long = "batch-size", default_value_t = 10_000)]
    batch_size: u64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct CompareArgs {
    /// Baseline report (ratios are relative to this one).
    report_a: String,
    /// Report under comparison.
    report_b: String,
    #[arg(long)]
    out: Option<String>,
    /// csv | json.
    #[arg(long, default_value = "csv")]
    format: String,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        // machine-readable failure on stderr, nonzero exit
        let msg = serde_json::json!({ "error": format!("{e:#}") });
        eprintln!("{msg}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Bench(args) => {
            let config = bench_config(&args)?;
            let report = run(&config)?;
            let text = match args.format.as_str() {
                "csv" => report.to_csv(),
                "json" => report.to_json(),
                other => return Err(anyhow!("unknown format {other:?}")),
            };
            emit(args.out.as_deref(), &text)
        }
        Command::GenWorkload(args) => {
            let workload = Workload::parse(&args.workload)?;
            let config = RunConfig {
                index: IndexKind::PimTree,
                modules: 64,
                fanout: 16,
                init_size: args.init_size,
                ops: args.ops,
                batch_size: args.batch_size,
                alphas: vec![args.alpha],
                workload: workload.clone(),
                seed: args.seed,
                accounting: Accounting::Unpadded,
                capacity_factor: None,
            };
            let script = generate_script(&workload, &config, args.alpha)?;
            emit(args.out.as_deref(), &write_script(&script))
        }
        Command::Compare(args) => {
            let a_text = std::fs::read_to_string(&args.report_a)
                .with_context(|| format!("reading {}", args.report_a))?;
            let b_text = std::fs::read_to_string(&args.report_b)
                .with_context(|| format!("reading {}", args.report_b))?;
            let a = Report::parse_file(&args.report_a, &a_text)?;
            let b = Report::parse_file(&args.report_b, &b_text)?;
            let rows = compare(&a, &b)?;
            let text = match args.format.as_str() {
                "csv" => compare_to_csv(&rows),
                "json" => {
                    let mut s = serde_json::to_string_pretty(&rows)?;
                    s.push('\n');
                    s
                }
                other => return Err(anyhow!("unknown format {other:?}")),
            };
            emit(args.out.as_deref(), &text)
        }
    }
}

/// Desk-scale defaults, overlaid by the config file, overlaid by flags.
fn bench_config(args: &BenchArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("reading config {path}"))?;
            toml::from_str(&text).with_context(|| format!("parsing config {path}"))?
        }
        None => RunConfig {
            index: IndexKind::PimTree,
            modules: 64,
            fanout: 16,
            init_size: 1_000_000,
            ops: 500_000,
            batch_size: 100_000,
            alphas: vec![0.0, 0.3, 0.6, 0.9, 1.2],
            workload: Workload::Micro(pim_bench::MicroOp::Predecessor),
            seed: 42,
            accounting: Accounting::Unpadded,
            capacity_factor: None,
        },
    };
    if let Some(s) = &args.index {
        config.index = IndexKind::parse(s)?;
    }
    if let Some(p) = args.pim_modules {
        config.modules = p;
    }
    if let Some(b) = args.fanout {
        config.fanout = b;
    }
    if let Some(n) = args.init_size {
        config.init_size = n;
    }
    if let Some(n) = args.ops {
        config.ops = n;
    }
    if let Some(n) = args.batch_size {
        config.batch_size = n;
    }
    if let Some(a) = &args.alpha {
        config.alphas = a
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| anyhow!("alpha {t:?}: {e}"))
            })
            .collect::<anyhow::Result<_>>()?;
    }
    if let Some(w) = &args.workload {
        config.workload = Workload::parse(w)?;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(a) = &args.accounting {
        config.accounting = match a.as_str() {
            "unpadded" => Accounting::Unpadded,
            "padded" => Accounting::Padded,
            other => return Err(anyhow!("unknown accounting {other:?}")),
        };
    }
    if args.capacity_factor.is_some() {
        config.capacity_factor = args.capacity_factor;
    }
    Ok(config)
}

fn emit(out: Option<&str>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {path}")),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .context("writing stdout"),
    }
}
