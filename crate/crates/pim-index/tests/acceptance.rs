//! Acceptance suite. One test per criterion (shadow fidelity rides along
//! with the oracle-equivalence replays that exercise it); each prints a
//! PASS line once its assertions hold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pim_index::baseline_range::RangePartitionedIndex;
use pim_index::oracle::Oracle;
use pim_index::pim_model::AccountingMode;
use pim_index::pim_tree::{chunk_pull_words, generate_height, merge_ranges, PimTree, TreeConfig};
use pim_index::workloads::{gen_modified_zipfian, gen_uniform_keys, KeyUniverse, SkewSpec};
use pim_index::{BatchIndex, Error};

const MODULES: usize = 64;
const FANOUT: u32 = 16;
/// Batch size at which load-balance claims apply: P * log2(P) * B * 2.
const BALANCED_S: usize = 12_288;

fn tree(seed: u64) -> PimTree {
    PimTree::new(TreeConfig::new(MODULES, FANOUT, seed).unwrap()).unwrap()
}

fn uniform_pairs(n: usize, rng: &mut ChaCha8Rng) -> Vec<(u64, u64)> {
    gen_uniform_keys(n, rng)
        .into_iter()
        .map(|k| (k, rng.gen()))
        .collect()
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

/// Criteria 1 and 2: ten seeded scripts, each a 1e5-insert warm-up, 1e5
/// mixed point ops, and 1e3 scans, at exponents 0 and 1.2. Every batch
/// result from both indexes equals the oracle exactly, and the tree's
/// shadows deep-match their physical subtrees after every update batch.
#[test]
fn criterion_1_oracle_equivalence_and_2_shadow_fidelity() {
    const INIT: usize = 100_000;
    const MIXED: usize = 100_000;
    const SCANS: usize = 1_000;
    const BATCH: usize = 5_000;

    for script_id in 0..10u64 {
        let alpha = if script_id < 5 { 0.0 } else { 1.2 };
        let seed = 1000 + script_id;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warmup = uniform_pairs(INIT, &mut rng);

        let mut t = tree(seed ^ 0xA);
        let mut b =
            RangePartitionedIndex::build(MODULES, AccountingMode::Unpadded, None, &warmup, BATCH)
                .unwrap();
        let mut tree_oracle = Oracle::new();
        let mut base_oracle = Oracle::new();
        for chunk in warmup.chunks(BATCH) {
            t.insert_batch(chunk).unwrap();
            let heights = t.last_heights().to_vec();
            tree_oracle.insert_batch(&dedup(chunk), &heights);
        }
        base_oracle.insert(
            &warmup.iter().map(|(k, _)| (*k, 1)).collect::<Vec<_>>(),
            &warmup.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
        );

        let existing =
            SkewSpec::new(alpha, KeyUniverse::ExistingKeys).with_shuffle_period(BATCH as u64);
        let anywhere =
            SkewSpec::new(alpha, KeyUniverse::All64Bit).with_shuffle_period(BATCH as u64);

        let batches = MIXED / BATCH;
        for bi in 0..batches {
            match bi % 5 {
                0 => {
                    let live = tree_oracle.live_keys();
                    let keys =
                        gen_modified_zipfian(&existing, BATCH, Some(&live), &mut rng).unwrap();
                    assert_eq!(t.get_batch(&keys).unwrap(), tree_oracle.get_batch(&keys));
                    let live = base_oracle.live_keys();
                    let keys =
                        gen_modified_zipfian(&existing, BATCH, Some(&live), &mut rng).unwrap();
                    assert_eq!(b.get_batch(&keys).unwrap(), base_oracle.get_batch(&keys));
                }
                1 => {
                    let live = tree_oracle.live_keys();
                    let pairs: Vec<(u64, u64)> =
                        gen_modified_zipfian(&existing, BATCH, Some(&live), &mut rng)
                            .unwrap()
                            .into_iter()
                            .map(|k| (k, rng.gen()))
                            .collect();
                    assert_eq!(
                        t.update_batch(&pairs).unwrap(),
                        tree_oracle.update_batch(&pairs)
                    );
                    assert!(t.verify_shadow_integrity().is_empty());
                    assert_eq!(
                        b.update_batch(&pairs).unwrap(),
                        base_oracle.update_batch(&pairs)
                    );
                }
                2 => {
                    let keys = gen_modified_zipfian(&anywhere, BATCH, None, &mut rng).unwrap();
                    assert_eq!(
                        t.predecessor_batch(&keys).unwrap(),
                        tree_oracle.predecessor_batch(&keys)
                    );
                    assert_eq!(
                        b.predecessor_batch(&keys).unwrap(),
                        base_oracle.predecessor_batch(&keys)
                    );
                }
                3 => {
                    let pairs: Vec<(u64, u64)> =
                        gen_modified_zipfian(&anywhere, BATCH, None, &mut rng)
                            .unwrap()
                            .into_iter()
                            .map(|k| (k, rng.gen()))
                            .collect();
                    t.insert_batch(&pairs).unwrap();
                    let heights = t.last_heights().to_vec();
                    tree_oracle.insert_batch(&dedup(&pairs), &heights);
                    assert!(t.verify_shadow_integrity().is_empty());
                    b.insert_batch(&pairs).unwrap();
                    base_oracle.insert(
                        &pairs.iter().map(|(k, _)| (*k, 1)).collect::<Vec<_>>(),
                        &pairs.iter().map(|(_, v)| *v).collect::<Vec<_>>(),
                    );
                }
                _ => {
                    let live = tree_oracle.live_keys();
                    let keys =
                        gen_modified_zipfian(&existing, BATCH, Some(&live), &mut rng).unwrap();
                    t.delete_batch(&keys).unwrap();
                    tree_oracle.delete_batch(&keys);
                    assert!(t.verify_shadow_integrity().is_empty());
                    let live = base_oracle.live_keys();
                    let keys =
                        gen_modified_zipfian(&existing, BATCH, Some(&live), &mut rng).unwrap();
                    b.delete_batch(&keys).unwrap();
                    base_oracle.delete_batch(&keys);
                }
            }
        }

        // scans, two batches of 500
        let live_count = tree_oracle.len().max(1) as u128;
        let width = (u128::from(u64::MAX) / live_count * 100).min(u128::from(u64::MAX)) as u64;
        for _ in 0..2 {
            let ranges: Vec<(u64, u64)> =
                gen_modified_zipfian(&anywhere, SCANS / 2, None, &mut rng)
                    .unwrap()
                    .into_iter()
                    .map(|k| (k, k.saturating_add(width)))
                    .collect();
            assert_eq!(
                t.scan_batch(&ranges).unwrap(),
                tree_oracle.scan_batch(&ranges)
            );
            assert_eq!(
                b.scan_batch(&ranges).unwrap(),
                base_oracle.scan_batch(&ranges)
            );
        }

        // closing structural checks for this script
        t.audit_structure().unwrap();
        assert_eq!(
            t.level_key_sets().unwrap(),
            tree_oracle.level_key_sets(t.config().total_levels())
        );
    }
    println!("criterion 1 (oracle equivalence, both indexes, 10 scripts): PASS");
    println!("criterion 2 (shadow fidelity after every update batch): PASS");
}

/// Criterion 3: with 64 modules and fanout 16, every get batch costs
/// exactly one launch and every predecessor batch at most seven.
#[test]
fn criterion_3_round_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = tree(33);
    for chunk in uniform_pairs(30_000, &mut rng).chunks(10_000) {
        t.insert_batch(chunk).unwrap();
    }
    let mut oracle_keys: Vec<u64> = Vec::new();
    for (k, _) in t.last_heights() {
        oracle_keys.push(*k);
    }

    for alpha in [0.0, 1.2] {
        let anywhere = SkewSpec::new(alpha, KeyUniverse::All64Bit);
        for _ in 0..5 {
            let keys = gen_modified_zipfian(&anywhere, 4_096, None, &mut rng).unwrap();
            let before = t.snapshot_stats().rounds;
            t.get_batch(&keys).unwrap();
            assert_eq!(t.snapshot_stats().rounds - before, 1, "get uses one round");

            let before = t.snapshot_stats().rounds;
            t.predecessor_batch(&keys).unwrap();
            let used = t.snapshot_stats().rounds - before;
            assert!(used <= 7, "predecessor batch used {used} rounds");
        }
    }
    println!("criterion 3 (get = 1 round, predecessor <= 7 rounds): PASS");
}

/// Criterion 4: predecessor cost per op must be skew-insensitive (skewed
/// cost at most 1.5x uniform) and size-insensitive (each alpha's mean
/// within 1.3x across a tenfold change in index size).
///
/// The size-constancy half is expected to fail for the skewed exponent at
/// these exact parameters: with S = 12288 over n = 1e5 keys the Zipfian
/// head concentrates hundreds of queries per chunk, so the mandated pull
/// thresholds collapse most of the batch into node transfers (~10
/// words/op), while at n = 1e6 the same head spreads tenfold thinner,
/// stays below the thresholds, and is pushed at full per-query price
/// (~15.5 words/op) — a ~1.5x spread from behavior the structure requires
/// for its contention guarantees. Both values stay well under the uniform
/// constant, so cost never grows with n; the check fails only because the
/// savings at the smaller scale vary. The assertions are kept as stated
/// rather than loosened.
#[test]
fn criterion_4_per_op_communication_constancy() {
    let mut results: Vec<Vec<f64>> = Vec::new(); // [n][alpha] -> words/op
    for n in [100_000usize, 1_000_000] {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut t = tree(44);
        for chunk in uniform_pairs(n, &mut rng).chunks(100_000) {
            t.insert_batch(chunk).unwrap();
        }
        let mut per_alpha = Vec::new();
        for alpha in [0.0, 1.2] {
            let spec =
                SkewSpec::new(alpha, KeyUniverse::All64Bit).with_shuffle_period(BALANCED_S as u64);
            let mut words = 0u64;
            let mut ops = 0u64;
            for _ in 0..5 {
                let keys = gen_modified_zipfian(&spec, BALANCED_S, None, &mut rng).unwrap();
                let before = t.snapshot_stats();
                t.predecessor_batch(&keys).unwrap();
                let delta = t.snapshot_stats().since(&before);
                words += delta.per_module_total().iter().sum::<u64>();
                ops += keys.len() as u64;
            }
            per_alpha.push(words as f64 / ops as f64);
        }
        results.push(per_alpha);
    }
    println!(
        "criterion 4 detail: words/op [n=1e5] uniform {:.2} skewed {:.2}; \
         [n=1e6] uniform {:.2} skewed {:.2}",
        results[0][0], results[0][1], results[1][0], results[1][1]
    );
    let mut failures = Vec::new();
    for (i, n) in [100_000, 1_000_000].iter().enumerate() {
        let (uniform, skewed) = (results[i][0], results[i][1]);
        if skewed > 1.5 * uniform {
            failures.push(format!(
                "n={n}: skewed {skewed:.2} words/op exceeds 1.5x uniform {uniform:.2}"
            ));
        }
    }
    println!(
        "criterion 4 (skewed words/op <= 1.5x uniform): {}",
        if failures.is_empty() { "PASS" } else { "FAIL" }
    );
    for (a, name) in ["uniform", "skewed"].iter().enumerate() {
        let (small, big) = (results[0][a], results[1][a]);
        let ratio = (small / big).max(big / small);
        if ratio > 1.3 {
            failures.push(format!(
                "{name}: words/op varies {ratio:.2}x between n=1e5 and n=1e6 \
                 (pull-threshold collapse at the smaller scale; see ledger)"
            ));
        }
    }
    println!(
        "criterion 4 (words/op constant in n within 1.3x): {}",
        if failures.iter().any(|f| f.contains("varies")) {
            "FAIL"
        } else {
            "PASS"
        }
    );
    assert!(failures.is_empty(), "criterion 4: {}", failures.join("; "));
}

/// Criterion 5: per-batch max/mean module traffic of the tree, averaged
/// over 20 balanced-size predecessor batches, stays at or below 3.5 at
/// every tested exponent.
#[test]
fn criterion_5_tree_load_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = tree(55);
    for chunk in uniform_pairs(100_000, &mut rng).chunks(20_000) {
        t.insert_batch(chunk).unwrap();
    }
    for alpha in [0.0, 0.3, 0.6, 0.9, 1.2] {
        let spec =
            SkewSpec::new(alpha, KeyUniverse::All64Bit).with_shuffle_period(BALANCED_S as u64);
        let mut sum = 0.0;
        for _ in 0..20 {
            let keys = gen_modified_zipfian(&spec, BALANCED_S, None, &mut rng).unwrap();
            let before = t.snapshot_stats();
            t.predecessor_batch(&keys).unwrap();
            sum += t.snapshot_stats().since(&before).imbalance();
        }
        let avg = sum / 20.0;
        assert!(
            avg <= 3.5,
            "alpha {alpha}: average imbalance {avg:.3} > 3.5"
        );
        println!("criterion 5 detail: alpha {alpha} average imbalance {avg:.3}");
    }
    println!("criterion 5 (tree max/mean traffic <= 3.5 at all alphas): PASS");
}

/// Criterion 6: the baseline's task-load imbalance at alpha 1.2 is at
/// least five times its uniform value, and with a capacity of twice the
/// fair share a skewed insert run records an overflow. Both directions
/// hold for every tested seed.
#[test]
fn criterion_6_baseline_skew_fragility() {
    for seed in [60u64, 61] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let warmup = uniform_pairs(100_000, &mut rng);
        let mut idx =
            RangePartitionedIndex::build(MODULES, AccountingMode::Unpadded, None, &warmup, 100_000)
                .unwrap();
        let mut ratio = [0.0f64; 2];
        for (i, alpha) in [0.0, 1.2].into_iter().enumerate() {
            let spec = SkewSpec::new(alpha, KeyUniverse::All64Bit).with_shuffle_period(100_000);
            let mut sum = 0.0;
            for _ in 0..5 {
                let keys = gen_modified_zipfian(&spec, 100_000, None, &mut rng).unwrap();
                let before = idx.comm_stats();
                idx.predecessor_batch(&keys).unwrap();
                let delta = idx.comm_stats().since(&before);
                sum += pim_index::pim_model::imbalance_ratio(&delta.per_module_recv);
            }
            ratio[i] = sum / 5.0;
        }
        assert!(
            ratio[1] >= 5.0 * ratio[0],
            "seed {seed}: skewed imbalance {:.2} not 5x uniform {:.2}",
            ratio[1],
            ratio[0]
        );

        // overflow at twice the fair share under skewed inserts
        let planned_inserts = 50_000u64;
        let cap = (2 * (warmup.len() as u64 + planned_inserts) / MODULES as u64) as usize;
        let mut capped = RangePartitionedIndex::build(
            MODULES,
            AccountingMode::Unpadded,
            Some(cap),
            &warmup,
            100_000,
        )
        .unwrap();
        let spec = SkewSpec::new(1.2, KeyUniverse::All64Bit).with_shuffle_period(10_000);
        let mut overflowed = false;
        for _ in 0..5 {
            let pairs: Vec<(u64, u64)> = gen_modified_zipfian(&spec, 10_000, None, &mut rng)
                .unwrap()
                .into_iter()
                .map(|k| (k, 1))
                .collect();
            match capped.insert_batch(&pairs) {
                Ok(()) => {}
                Err(Error::ModuleOverflow { .. }) => {
                    overflowed = true;
                    break;
                }
                Err(e) => panic!("unexpected failure: {e}"),
            }
        }
        assert!(overflowed, "seed {seed}: skewed inserts never overflowed");
    }
    println!("criterion 6 (baseline skew fragility and capped overflow): PASS");
}

/// Criterion 7: height statistics over ten million draws with fanout 16
/// and three distributed levels.
#[test]
fn criterion_7_height_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 10_000_000u64;
    let mut reach_l2 = 0u64; // height >= 2
    let mut reach_top = 0u64; // height > 3
    for _ in 0..n {
        let h = generate_height(16, &mut rng);
        if h >= 2 {
            reach_l2 += 1;
        }
        if h > 3 {
            reach_top += 1;
        }
    }
    let check = |got: u64, p: f64, what: &str| {
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (got as f64 - mean).abs() <= 3.0 * sigma,
            "{what}: {got} outside {mean:.0} +- {:.0}",
            3.0 * sigma
        );
    };
    check(reach_l2, 1.0 / 16.0, "reaching the middle layer");
    check(reach_top, 1.0 / 4096.0, "reaching the replicated layer");
    println!("criterion 7 (height fractions 1/16 and 1/4096 within 3 sigma): PASS");
}

/// Criterion 8: ten thousand distinct queries that all resolve inside one
/// gap pull the contended node once per round instead of pushing ten
/// thousand tasks at it.
#[test]
fn criterion_8_push_pull_contention_cap() {
    const S: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut t = tree(88);
    let pairs = uniform_pairs(10_000, &mut rng);
    t.insert_batch(&pairs).unwrap();
    let mut oracle = Oracle::new();
    oracle.insert_batch(&dedup(&pairs), t.last_heights());

    // distinct keys inside one inter-key gap share every search node
    let live = oracle.live_keys();
    let (gap_at, gap_len) = live
        .windows(2)
        .map(|w| (w[0], w[1] - w[0]))
        .max_by_key(|(_, g)| *g)
        .unwrap();
    assert!(gap_len as usize > S, "need a gap wider than the batch");
    let queries: Vec<u64> = (1..=S as u64).map(|i| gap_at + i).collect();

    let got = t.predecessor_batch(&queries).unwrap();
    assert_eq!(got, oracle.predecessor_batch(&queries));

    let metrics = t.last_metrics().clone();
    let k_l2 = t.config().l2_pull_threshold;
    let k_l1 = t.config().l1_pull_threshold;
    let max_len = t.max_chunk_len();
    let node_transfer = chunk_pull_words(max_len);

    assert!(!metrics.l2_pulls.is_empty() || !metrics.l1_pulls.is_empty());
    for (count, words) in &metrics.l2_pulls {
        assert!(*count <= S / k_l2, "pulled {count} nodes > S/K");
        assert!(
            *words <= *count as u64 * node_transfer,
            "pull words {words} exceed node transfers"
        );
    }
    for (count, words) in &metrics.l1_pulls {
        assert!(*count <= S.max(k_l1) / k_l1, "pulled {count} nodes > S/K");
        assert!(*words <= (*count as u64).max(1) * node_transfer);
    }
    // identical destination: every pulled round moves exactly one node, so
    // hot-node traffic is bounded by one transfer per round
    let hot_words: u64 = metrics
        .l2_pulls
        .iter()
        .chain(&metrics.l1_pulls)
        .map(|(_, w)| *w)
        .sum();
    let rounds = (metrics.l2_pulls.len() + metrics.l1_pulls.len()) as u64;
    assert!(
        hot_words <= rounds * node_transfer,
        "hot traffic {hot_words} over {rounds} rounds exceeds node size each"
    );
    assert!(
        hot_words < (S as u64) / 2,
        "hot traffic {hot_words} scales with the batch"
    );
    println!("criterion 8 (contention pulls one node per round, not the batch): PASS");
}

/// Criterion 9: ten thousand random ranges across ten batches — merged
/// ranges stay pairwise disjoint and covering, and every per-input result
/// equals the oracle.
#[test]
fn criterion_9_scan_merging() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut t = tree(99);
    let pairs = uniform_pairs(20_000, &mut rng);
    t.insert_batch(&pairs).unwrap();
    let mut oracle = Oracle::new();
    oracle.insert_batch(&dedup(&pairs), t.last_heights());

    for _ in 0..10 {
        let ranges: Vec<(u64, u64)> = (0..1_000)
            .map(|_| {
                let a: u64 = rng.gen();
                let w = rng.gen_range(0..u64::MAX / 500);
                (a, a.saturating_add(w))
            })
            .collect();
        let merged = merge_ranges(&ranges);
        for w in merged.windows(2) {
            assert!(w[0].1 < w[1].0, "merged ranges overlap");
        }
        for (lo, hi) in &ranges {
            assert!(
                merged.iter().any(|(ml, mh)| ml <= lo && hi <= mh),
                "input range not covered"
            );
        }
        assert_eq!(t.scan_batch(&ranges).unwrap(), oracle.scan_batch(&ranges));
    }
    println!("criterion 9 (scan merge disjointness, coverage, oracle equality): PASS");
}
