//! Structural soak at binary fanout: tall towers, nested shadows many
//! levels deep, and constant churn, audited against the oracle each round.

use pim_index::oracle::Oracle;
use pim_index::pim_tree::{PimTree, TreeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Eleven distributed levels with seven nested shadow levels.
#[test]
fn soak_deep_binary_fanout() {
    soak(TreeConfig::new(1024, 2, 777).unwrap(), (4, 7));
}

// Two bottom levels plus heavy replicated-layer churn (1/16 of keys).
#[test]
fn soak_two_bottom_levels_with_top_churn() {
    soak(TreeConfig::new(16, 2, 779).unwrap(), (2, 2));
}

fn soak(config: TreeConfig, expect_levels: (u8, u8)) {
    assert_eq!((config.l1_levels, config.l2_levels), expect_levels);
    let mut t = PimTree::new(config).unwrap();
    let mut o = Oracle::new();
    let mut rng = ChaCha8Rng::seed_from_u64(778);
    for round in 0..30 {
        let pairs: Vec<(u64, u64)> = (0..800).map(|_| (rng.gen::<u64>().max(1), rng.gen())).collect();
        t.insert_batch(&pairs).unwrap();
        let heights = t.last_heights().to_vec();
        let items = {
            let mut ix = std::collections::HashMap::new();
            let mut v: Vec<(u64, u64)> = Vec::new();
            for (k, val) in &pairs { match ix.get(k) { Some(&i) => v[i] = (*k, *val), None => { ix.insert(*k, v.len()); v.push((*k, *val)); } } }
            v
        };
        o.insert_batch(&items, &heights);
        let dels: Vec<u64> = o.live_keys().into_iter().filter(|_| rng.gen_bool(0.35)).collect();
        t.delete_batch(&dels).unwrap();
        o.delete_batch(&dels);

        t.audit_structure().unwrap();
        let rep = t.verify_shadow_integrity();
        assert!(rep.is_empty(), "round {round}: {} shadow mismatches: {:?}", rep.len(), rep.first());
        assert_eq!(t.level_key_sets().unwrap(), o.level_key_sets(t.config().total_levels()), "round {round}");
        assert_eq!(t.top_layer_keys(), o.top_layer_keys(t.config().total_levels()), "round {round}");

        let qs: Vec<u64> = (0..400).map(|_| rng.gen()).collect();
        assert_eq!(t.predecessor_batch(&qs).unwrap(), o.predecessor_batch(&qs), "round {round}");
        let ranges: Vec<(u64, u64)> = (0..50).map(|_| { let a: u64 = rng.gen(); (a, a.saturating_add(rng.gen_range(0..u64::MAX/20))) }).collect();
        assert_eq!(t.scan_batch(&ranges).unwrap(), o.scan_batch(&ranges), "round {round}");
    }
    eprintln!("soak complete: {} live keys, {} top-layer keys", t.len(), t.top_layer_len());
}
