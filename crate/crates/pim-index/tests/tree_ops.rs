//! Tree behavior against the oracle and the structural invariants, at
//! small scale with hand-picked heights as well as randomized batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pim_index::oracle::Oracle;
use pim_index::pim_tree::{PimTree, TreeConfig};

fn tree(modules: usize, fanout: u32, seed: u64) -> PimTree {
    PimTree::new(TreeConfig::new(modules, fanout, seed).unwrap()).unwrap()
}

fn assert_shadows_clean(t: &PimTree) {
    let report = t.verify_shadow_integrity();
    assert!(
        report.is_empty(),
        "shadow mismatches: {:?}",
        report.iter().take(3).collect::<Vec<_>>()
    );
}

#[test]
fn four_module_walkthrough() {
    // heights chosen so the top distributed level holds chunks [0,3] and
    // [5,7]: key 5 reaches the replicated layer, keys 3 and 7 stop at the
    // middle level, key 1 stays at the bottom.
    let mut t = tree(4, 2, 1);
    assert_eq!(t.config().l1_levels, 1);
    assert_eq!(t.config().l2_levels, 1);
    t.insert_batch_with_heights(&[(1, 10), (3, 30), (5, 50), (7, 70)], &[1, 2, 3, 2])
        .unwrap();
    t.audit_structure().unwrap();
    assert_shadows_clean(&t);
    assert_eq!(t.top_layer_len(), 1);

    let sets = t.level_key_sets().unwrap();
    assert_eq!(sets[0], vec![1, 3, 5, 7]);
    assert_eq!(sets[1], vec![3, 5, 7]);

    // queries 1, 3, 4 route to the sentinel-pivoted top chunk; 7 routes to
    // the chunk pivoted at 5
    let r = t.predecessor_batch(&[1, 3, 4, 7]).unwrap();
    assert_eq!(
        r,
        vec![Some((1, 10)), Some((3, 30)), Some((3, 30)), Some((7, 70))]
    );

    // exact-match query returns the key itself; below-sentinel returns none
    assert_eq!(t.predecessor_batch(&[5]).unwrap(), vec![Some((5, 50))]);
    assert_eq!(
        t.predecessor_batch(&[u64::MAX]).unwrap(),
        vec![Some((7, 70))]
    );

    // point scan on a present key returns exactly that pair
    assert_eq!(
        t.scan_batch(&[(5, 5)]).unwrap(),
        vec![Ok(vec![(5, 50)])]
    );
}

#[test]
fn join_and_split_one_node() {
    // existing node [2,4,5,7,9] at level 1 under pivot 2 (height 2);
    // inserting 3 (h=1) joins it, 6 and 8 (h=2) split it in three.
    let mut t = tree(4, 4, 2);
    t.insert_batch_with_heights(&[(2, 0), (4, 0), (5, 0), (7, 0), (9, 0)], &[2, 1, 1, 1, 1])
        .unwrap();
    let before = t.level_key_sets().unwrap();
    assert_eq!(before[0], vec![2, 4, 5, 7, 9]);
    assert_eq!(before[1], vec![2]);

    t.insert_batch_with_heights(&[(3, 0), (6, 0), (8, 0)], &[1, 2, 2])
        .unwrap();
    t.audit_structure().unwrap();
    assert_shadows_clean(&t);
    let after = t.level_key_sets().unwrap();
    assert_eq!(after[0], vec![2, 3, 4, 5, 6, 7, 8, 9]);
    assert_eq!(after[1], vec![2, 6, 8]);

    // the level-1 chain now runs [..2..5][6,7][8,9]
    let r = t.scan_batch(&[(2, 9)]).unwrap().pop().unwrap().unwrap();
    assert_eq!(
        r.iter().map(|(k, _)| *k).collect::<Vec<_>>(),
        vec![2, 3, 4, 5, 6, 7, 8, 9]
    );
}

#[test]
fn delete_pivot_merges_left() {
    let mut t = tree(4, 4, 3);
    // keys 2 and 6 are pivots at level 1; deleting 6 must merge [6,7,9]'s
    // remainder into the chunk holding [2,4,5]
    t.insert_batch_with_heights(
        &[(2, 0), (4, 0), (5, 0), (6, 0), (7, 0), (9, 0)],
        &[2, 1, 1, 2, 1, 1],
    )
    .unwrap();
    t.delete_batch(&[6]).unwrap();
    t.audit_structure().unwrap();
    assert_shadows_clean(&t);
    let sets = t.level_key_sets().unwrap();
    assert_eq!(sets[0], vec![2, 4, 5, 7, 9]);
    assert_eq!(sets[1], vec![2]);
    let r = t.scan_batch(&[(0, 100)]).unwrap().pop().unwrap().unwrap();
    assert_eq!(
        r.iter().map(|(k, _)| *k).collect::<Vec<_>>(),
        vec![2, 4, 5, 7, 9]
    );
}

#[test]
fn delete_everything_returns_to_skeleton() {
    let mut t = tree(4, 4, 4);
    let pairs: Vec<(u64, u64)> = (1..=40).map(|k| (k * 7, k)).collect();
    t.insert_batch(&pairs).unwrap();
    assert_eq!(t.len(), 40);
    t.delete_batch(&pairs.iter().map(|(k, _)| *k).collect::<Vec<_>>())
        .unwrap();
    assert_eq!(t.len(), 0);
    t.audit_structure().unwrap();
    assert_shadows_clean(&t);
    for set in t.level_key_sets().unwrap() {
        assert!(set.is_empty());
    }
    assert_eq!(t.top_layer_len(), 0);
    let r = t
        .scan_batch(&[(0, u64::MAX)])
        .unwrap()
        .pop()
        .unwrap()
        .unwrap();
    assert!(r.is_empty());
}

#[test]
fn get_costs_one_round_and_misses_are_values() {
    let mut t = tree(8, 16, 5);
    t.insert_batch(&[(5, 50)]).unwrap();
    let before = t.snapshot_stats();
    let got = t.get_batch(&[5, 6]).unwrap();
    let after = t.snapshot_stats();
    assert_eq!(got, vec![Some(50), None]);
    assert_eq!(after.rounds - before.rounds, 1);

    // empty batch costs nothing
    let before = t.snapshot_stats();
    assert!(t.get_batch(&[]).unwrap().is_empty());
    assert_eq!(t.snapshot_stats().rounds, before.rounds);
}

#[test]
fn update_only_touches_existing_keys() {
    let mut t = tree(8, 16, 6);
    t.insert_batch(&[(10, 1), (20, 2)]).unwrap();
    let flags = t.update_batch(&[(10, 11), (15, 0), (20, 22)]).unwrap();
    assert_eq!(flags, vec![true, false, true]);
    assert_eq!(
        t.get_batch(&[10, 15, 20]).unwrap(),
        vec![Some(11), None, Some(22)]
    );
}

#[test]
fn insert_existing_key_updates_value() {
    let mut t = tree(8, 16, 7);
    t.insert_batch(&[(42, 1)]).unwrap();
    let sets_before = t.level_key_sets().unwrap();
    t.insert_batch(&[(42, 99)]).unwrap();
    assert_eq!(t.level_key_sets().unwrap(), sets_before);
    assert_eq!(t.get_batch(&[42]).unwrap(), vec![Some(99)]);
    assert_eq!(t.len(), 1);
}

#[test]
fn in_batch_duplicates_last_write_wins() {
    let mut t = tree(8, 16, 8);
    t.insert_batch(&[(7, 1), (7, 2), (7, 3)]).unwrap();
    assert_eq!(t.get_batch(&[7]).unwrap(), vec![Some(3)]);
    assert_eq!(t.len(), 1);
}

#[test]
fn predecessor_round_bound_holds() {
    let mut t = tree(64, 16, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let pairs: Vec<(u64, u64)> = (0..5000)
        .map(|_| (rng.gen::<u64>().max(1), rng.gen()))
        .collect();
    t.insert_batch(&pairs).unwrap();

    let bound = t.config().predecessor_round_bound();
    for _ in 0..5 {
        let queries: Vec<u64> = (0..2000).map(|_| rng.gen()).collect();
        let before = t.snapshot_stats().rounds;
        t.predecessor_batch(&queries).unwrap();
        let used = t.snapshot_stats().rounds - before;
        assert!(used <= bound, "{used} rounds > bound {bound}");
    }
}

#[test]
fn deep_middle_layer_works() {
    // 512 modules gives two middle levels, so shadows nest
    let mut t = tree(512, 16, 10);
    assert_eq!(t.config().l2_levels, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut oracle = Oracle::new();

    for _ in 0..4 {
        let pairs: Vec<(u64, u64)> = (0..3000)
            .map(|_| (rng.gen::<u64>().max(1), rng.gen()))
            .collect();
        t.insert_batch(&pairs).unwrap();
        let items = dedup(&pairs);
        oracle.insert_batch(&items, t.last_heights());

        let dels: Vec<u64> = oracle
            .live_keys()
            .into_iter()
            .filter(|_| rng.gen_bool(0.2))
            .collect();
        t.delete_batch(&dels).unwrap();
        oracle.delete_batch(&dels);

        t.audit_structure().unwrap();
        assert_shadows_clean(&t);
        assert_eq!(
            t.level_key_sets().unwrap(),
            oracle.level_key_sets(t.config().total_levels())
        );
        assert_eq!(
            t.top_layer_keys(),
            oracle.top_layer_keys(t.config().total_levels())
        );

        let queries: Vec<u64> = (0..1500).map(|_| rng.gen()).collect();
        assert_eq!(
            t.predecessor_batch(&queries).unwrap(),
            oracle.predecessor_batch(&queries)
        );

        let ranges: Vec<(u64, u64)> = (0..100)
            .map(|_| {
                let a = rng.gen::<u64>();
                let w = rng.gen_range(0..u64::MAX / 50);
                (a, a.saturating_add(w))
            })
            .collect();
        assert_eq!(t.scan_batch(&ranges).unwrap(), oracle.scan_batch(&ranges));
    }
}

#[test]
fn random_mixed_batches_match_oracle() {
    let mut t = tree(16, 4, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut oracle = Oracle::new();

    for round in 0..10 {
        let universe = 1u64..5_000;
        let pairs: Vec<(u64, u64)> = (0..400)
            .map(|_| (rng.gen_range(universe.clone()), rng.gen()))
            .collect();
        t.insert_batch(&pairs).unwrap();
        oracle.insert_batch(&dedup(&pairs), t.last_heights());

        let gets: Vec<u64> = (0..300).map(|_| rng.gen_range(universe.clone())).collect();
        assert_eq!(t.get_batch(&gets).unwrap(), oracle.get_batch(&gets));

        let upds: Vec<(u64, u64)> = (0..150)
            .map(|_| (rng.gen_range(universe.clone()), rng.gen()))
            .collect();
        assert_eq!(t.update_batch(&upds).unwrap(), oracle.update_batch(&upds));

        let preds: Vec<u64> = (0..300).map(|_| rng.gen_range(0..6_000)).collect();
        assert_eq!(
            t.predecessor_batch(&preds).unwrap(),
            oracle.predecessor_batch(&preds)
        );

        let dels: Vec<u64> = (0..200).map(|_| rng.gen_range(universe.clone())).collect();
        t.delete_batch(&dels).unwrap();
        oracle.delete_batch(&dels);

        let ranges: Vec<(u64, u64)> = (0..50)
            .map(|_| {
                let a = rng.gen_range(0..5_500);
                let b = rng.gen_range(0..5_500);
                (a, b) // inverted ranges exercise per-range rejection
            })
            .collect();
        assert_eq!(t.scan_batch(&ranges).unwrap(), oracle.scan_batch(&ranges));

        t.audit_structure().unwrap();
        assert_shadows_clean(&t);
        assert_eq!(
            t.level_key_sets().unwrap(),
            oracle.level_key_sets(t.config().total_levels()),
            "round {round}"
        );
    }
}

#[test]
fn corrupted_shadow_is_reported_once() {
    let mut t = tree(8, 4, 14);
    let pairs: Vec<(u64, u64)> = (1..=200).map(|k| (k * 13, k)).collect();
    t.insert_batch(&pairs).unwrap();
    assert_shadows_clean(&t);
    assert!(t.debug_corrupt_one_shadow());
    assert_eq!(t.verify_shadow_integrity().len(), 1);
}

#[test]
fn pull_threshold_boundary() {
    // fanout 2 puts the bottom pull threshold at 2: three queries on one
    // node pull it exactly once, two queries push instead
    let mut t = tree(4, 2, 20);
    t.insert_batch_with_heights(&[(10, 1), (20, 2), (30, 3)], &[1, 1, 1])
        .unwrap();
    assert_eq!(t.config().l1_pull_threshold, 2);

    t.predecessor_batch(&[11, 21, 31]).unwrap();
    let pulls: Vec<(usize, u64)> = t.last_metrics().l1_pulls.clone();
    assert_eq!(pulls.iter().map(|(n, _)| *n).sum::<usize>(), 1);
    let node_words = pulls.iter().map(|(_, w)| *w).sum::<u64>();
    // one transfer: task (2) + length (1) + meta/links (3) + 4 entries (8)
    assert_eq!(node_words, pim_index::pim_tree::chunk_pull_words(4));

    t.predecessor_batch(&[11, 21]).unwrap();
    assert_eq!(
        t.last_metrics()
            .l1_pulls
            .iter()
            .map(|(n, _)| *n)
            .sum::<usize>(),
        0
    );
}

#[test]
fn padded_accounting_rides_along() {
    use pim_index::pim_model::AccountingMode;
    let config = TreeConfig::new(8, 4, 21)
        .unwrap()
        .with_accounting(AccountingMode::Padded);
    let mut t = PimTree::new(config).unwrap();
    let pairs: Vec<(u64, u64)> = (1..=300).map(|k| (k * 11, k)).collect();
    t.insert_batch(&pairs).unwrap();
    assert_eq!(t.predecessor_batch(&[50]).unwrap(), vec![Some((44, 4))],);
    let stats = t.snapshot_stats();
    // padded counters dominate unpadded ones module by module
    for m in 0..8 {
        assert!(stats.per_module_recv_padded[m] >= stats.per_module_recv[m]);
        assert!(stats.per_module_sent_padded[m] >= stats.per_module_sent[m]);
    }
    assert!(stats.total_words() >= stats.per_module_recv.iter().sum::<u64>());
}

#[test]
fn single_module_machine_works() {
    let mut t = tree(1, 4, 22);
    let pairs: Vec<(u64, u64)> = (1..=100).map(|k| (k * 3, k)).collect();
    t.insert_batch(&pairs).unwrap();
    t.audit_structure().unwrap();
    assert_shadows_clean(&t);
    assert_eq!(t.get_batch(&[30, 31]).unwrap(), vec![Some(10), None]);
    let r = t.scan_batch(&[(1, 50)]).unwrap().pop().unwrap().unwrap();
    assert_eq!(r.len(), 16);
    t.delete_batch(&[30]).unwrap();
    assert_eq!(t.get_batch(&[30]).unwrap(), vec![None]);
}

#[test]
fn determinism_across_identical_runs() {
    let run = || {
        let mut t = tree(16, 8, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..3 {
            let pairs: Vec<(u64, u64)> = (0..500)
                .map(|_| (rng.gen::<u64>().max(1), rng.gen()))
                .collect();
            t.insert_batch(&pairs).unwrap();
            let dels: Num = pairs.iter().step_by(3).map(|(k, _)| *k).collect();
            t.delete_batch(&dels).unwrap();
        }
        let stats = t.snapshot_stats();
        (
            stats.rounds,
            stats.per_module_sent.clone(),
            stats.per_module_recv.clone(),
        )
    };
    type Num = Vec<u64>;
    assert_eq!(run(), run());
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
