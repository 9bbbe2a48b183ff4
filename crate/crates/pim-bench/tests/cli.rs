//! End-to-end runs of the binary: exit codes, file outputs, and the
//! machine-readable error channel.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pim-bench"))
}

#[test]
fn bench_writes_a_csv_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let status = bin()
        .args([
            "bench",
            "--index",
            "pim-tree",
            "--pim-modules",
            "16",
            "--fanout",
            "16",
            "--init-size",
            "2000",
            "--ops",
            "1000",
            "--batch-size",
            "500",
            "--alpha",
            "0,1.2",
            "--workload",
            "micro:predecessor",
            "--seed",
            "5",
            "--accounting",
            "unpadded",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# config "));
    assert!(text.contains("alpha,batch,op"));
    assert!(text.lines().filter(|l| l.contains(",predecessor,")).count() >= 4);
}

#[test]
fn gen_workload_emits_a_parsable_script_and_bench_replays_it() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("workload.txt");
    let status = bin()
        .args([
            "gen-workload",
            "--workload",
            "ycsb:B",
            "--init-size",
            "2000",
            "--ops",
            "1500",
            "--batch-size",
            "500",
            "--alpha",
            "0.9",
            "--seed",
            "11",
            "--out",
            script.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&script).unwrap();
    let parsed = pim_index::workloads::parse_script(&text).unwrap();
    assert_eq!(parsed.init_count, 2000);
    assert_eq!(parsed.batches.iter().map(|b| b.len()).sum::<usize>(), 1500);

    let out = dir.path().join("replay.json");
    let status = bin()
        .args([
            "bench",
            "--index",
            "range",
            "--pim-modules",
            "16",
            "--init-size",
            "2000",
            "--ops",
            "1500",
            "--batch-size",
            "500",
            "--alpha",
            "0",
            "--workload",
            &format!("script:{}", script.display()),
            "--seed",
            "11",
            "--format",
            "json",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report = pim_bench::Report::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report.rows.iter().any(|r| r.op == "predecessor"));
    assert!(report.rows.iter().any(|r| r.op == "insert"));
}

#[test]
fn compare_of_a_report_with_itself_is_unity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    assert!(bin()
        .args([
            "bench",
            "--pim-modules",
            "16",
            "--init-size",
            "1000",
            "--ops",
            "600",
            "--batch-size",
            "300",
            "--alpha",
            "0",
            "--workload",
            "micro:get",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let table = dir.path().join("ratios.csv");
    assert!(bin()
        .args([
            "compare",
            out.to_str().unwrap(),
            out.to_str().unwrap(),
            "--out",
            table.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&table).unwrap();
    for line in text.lines().skip(1) {
        assert!(line.ends_with(",1.000000,1.000000"), "{line}");
    }
}

#[test]
fn config_file_seeds_the_run_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
index = "pim-tree"
modules = 16
fanout = 16
init_size = 1000
ops = 400
batch_size = 200
alphas = [0.0]
seed = 3
accounting = "unpadded"

[workload]
kind = "micro"
arg = "get"
"#,
    )
    .unwrap();
    let out = dir.path().join("r.csv");
    assert!(bin()
        .args([
            "bench",
            "--config",
            cfg.to_str().unwrap(),
            "--ops",
            "600",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"ops\":600"), "flag override lost");
    assert!(text.contains("\"modules\":16"));
}

#[test]
fn wiki_workload_runs_from_a_word_file() {
    let dir = tempfile::tempdir().unwrap();
    let words = dir.path().join("words.txt");
    let mut text = String::new();
    for i in 0..3000 {
        text.push_str(&format!("word{i} {}\n", i * 7));
    }
    std::fs::write(&words, text).unwrap();
    let out = dir.path().join("wiki.csv");
    let status = bin()
        .args([
            "bench",
            "--index",
            "pim-tree",
            "--pim-modules",
            "16",
            "--init-size",
            "2000",
            "--ops",
            "800",
            "--batch-size",
            "400",
            "--alpha",
            "0",
            "--workload",
            &format!("wiki:{}", words.display()),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        text.lines().filter(|l| l.contains(",predecessor,")).count(),
        2
    );
}

#[test]
fn failures_exit_nonzero_with_machine_readable_error() {
    let output = bin()
        .args(["bench", "--index", "nonsense"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8(output.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert!(v["error"].as_str().unwrap().contains("nonsense"));
}
