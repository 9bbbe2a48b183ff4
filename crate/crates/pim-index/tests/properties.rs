//! Property tests over the crate invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use pim_index::oracle::Oracle;
use pim_index::pim_tree::{merge_ranges, PimTree, TreeConfig};
use pim_index::workloads::{parse_script, write_script, OpBatch, WorkloadScript};

fn ranges_strategy() -> impl Strategy<Value = Vec<(u64, u64)>> {
    vec((0u64..10_000, 0u64..10_000), 0..60).prop_map(|v| {
        v.into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merged_ranges_are_disjoint_and_cover(ranges in ranges_strategy()) {
        let merged = merge_ranges(&ranges);
        for w in merged.windows(2) {
            prop_assert!(w[0].1 < w[1].0, "overlap between {:?} and {:?}", w[0], w[1]);
        }
        for (lo, hi) in &ranges {
            let covered = merged.iter().any(|(ml, mh)| ml <= lo && hi <= mh);
            prop_assert!(covered, "input ({lo},{hi}) not covered");
        }
        // merged bounds come from the inputs
        for (ml, mh) in &merged {
            prop_assert!(ranges.iter().any(|(lo, _)| lo == ml));
            prop_assert!(ranges.iter().any(|(_, hi)| hi == mh));
        }
    }

    #[test]
    fn script_roundtrips(init in 0u64..100_000, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut batches = Vec::new();
        for _ in 0..rng.gen_range(0..6) {
            let n = rng.gen_range(0..20);
            batches.push(match rng.gen_range(0..6) {
                0 => OpBatch::Get((0..n).map(|_| rng.gen()).collect()),
                1 => OpBatch::Update((0..n).map(|_| (rng.gen(), rng.gen())).collect()),
                2 => OpBatch::Insert((0..n).map(|_| (rng.gen(), rng.gen())).collect()),
                3 => OpBatch::Delete((0..n).map(|_| rng.gen()).collect()),
                4 => OpBatch::Predecessor((0..n).map(|_| rng.gen()).collect()),
                _ => OpBatch::Scan((0..n).map(|_| (rng.gen(), rng.gen())).collect()),
            });
        }
        let script = WorkloadScript { init_count: init, batches };
        prop_assert_eq!(parse_script(&write_script(&script)).unwrap(), script);
    }
}

proptest! {
    // tree runs are comparatively expensive; fewer cases suffice
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tree_matches_oracle_on_random_programs(
        seed in any::<u64>(),
        ops in vec((0u8..5, vec((1u64..2_000, 0u64..100), 1..40)), 1..8),
    ) {
        let mut t = PimTree::new(TreeConfig::new(8, 4, seed).unwrap()).unwrap();
        let mut o = Oracle::new();
        for (kind, data) in ops {
            match kind {
                0 => {
                    t.insert_batch(&data).unwrap();
                    o.insert_batch(&dedup(&data), t.last_heights());
                }
                1 => {
                    let keys: Vec<u64> = data.iter().map(|(k, _)| *k).collect();
                    t.delete_batch(&keys).unwrap();
                    o.delete_batch(&keys);
                }
                2 => {
                    let keys: Vec<u64> = data.iter().map(|(k, _)| *k).collect();
                    prop_assert_eq!(t.get_batch(&keys).unwrap(), o.get_batch(&keys));
                }
                3 => {
                    let keys: Vec<u64> = data.iter().map(|(k, _)| *k).collect();
                    prop_assert_eq!(
                        t.predecessor_batch(&keys).unwrap(),
                        o.predecessor_batch(&keys)
                    );
                }
                _ => {
                    let ranges: Vec<(u64, u64)> =
                        data.iter().map(|(k, v)| (*k, *k + *v)).collect();
                    prop_assert_eq!(t.scan_batch(&ranges).unwrap(), o.scan_batch(&ranges));
                }
            }
            prop_assert!(t.verify_shadow_integrity().is_empty());
        }
        t.audit_structure().unwrap();
    }

    #[test]
    fn predecessor_results_ignore_batch_order(
        seed in any::<u64>(),
        queries in vec(0u64..5_000, 1..200),
    ) {
        use rand::SeedableRng;
        use rand::seq::SliceRandom;
        let mut t = PimTree::new(TreeConfig::new(8, 4, seed).unwrap()).unwrap();
        let pairs: Vec<(u64, u64)> = (1..=500).map(|k| (k * 9, k)).collect();
        t.insert_batch(&pairs).unwrap();

        let base = t.predecessor_batch(&queries).unwrap();
        let mut shuffled = queries.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let other = t.predecessor_batch(&shuffled).unwrap();

        let mut a = base;
        let mut b = other;
        a.sort_unstable();
        b.sort_unstable();
        // permuting the batch permutes the answers, nothing else
        prop_assert_eq!(a, b);
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
