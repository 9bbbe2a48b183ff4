//! YCSB-style operation mixes over the part-skewed key stream.
//!
//! Mixes: A is half predecessor half insert, B is 95/5, C is predecessor
//! only, D is insert only, E is 95% scan with 5% insert. Ops accumulate in
//! per-type pending batches; a batch dispatches once its expected returned
//! size crosses the configured unit (point ops count one element, a scan
//! its expected hit count), keeping batches same-type and atomic.

use rand::Rng;

use crate::workloads::{gen_modified_zipfian, OpBatch, SkewSpec, WorkloadScript};
use crate::{Key, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YcsbWorkload {
    A,
    B,
    C,
    D,
    E,
}

impl YcsbWorkload {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Some(YcsbWorkload::A),
            "B" => Some(YcsbWorkload::B),
            "C" => Some(YcsbWorkload::C),
            "D" => Some(YcsbWorkload::D),
            "E" => Some(YcsbWorkload::E),
            _ => None,
        }
    }

    /// (predecessor, insert, scan) weights out of 100.
    fn mix(self) -> (u32, u32, u32) {
        match self {
            YcsbWorkload::A => (50, 50, 0),
            YcsbWorkload::B => (95, 5, 0),
            YcsbWorkload::C => (100, 0, 0),
            YcsbWorkload::D => (0, 100, 0),
            YcsbWorkload::E => (0, 5, 95),
        }
    }
}

#[derive(Debug, Clone)]
pub struct YcsbSpec {
    pub workload: YcsbWorkload,
    pub ops: u64,
    pub skew: SkewSpec,
    /// Warm-up inserts recorded in the script header.
    pub init_count: u64,
    /// Expected elements a batch may return before it must dispatch.
    pub batch_unit: u64,
    /// Expected elements returned per scan; fixes the scan width against
    /// the warm-up density.
    pub scan_expected: u64,
}

/// Generates the batched script for one YCSB-style run.
pub fn gen_ycsb(spec: &YcsbSpec, rng: &mut impl Rng) -> Result<WorkloadScript> {
    let (w_pred, w_ins, w_scan) = spec.workload.mix();
    let keys = gen_modified_zipfian(&spec.skew, spec.ops as usize, None, rng)?;
    // scan width targeting `scan_expected` hits over the warmed-up density
    let scan_width = if spec.init_count > 0 {
        (u128::from(u64::MAX) / u128::from(spec.init_count) * u128::from(spec.scan_expected))
            .min(u128::from(u64::MAX)) as u64
    } else {
        u64::MAX
    };

    let mut script = WorkloadScript {
        init_count: spec.init_count,
        ..Default::default()
    };
    let mut preds: Vec<Key> = Vec::new();
    let mut inserts: Vec<(Key, Key)> = Vec::new();
    let mut scans: Vec<(Key, Key)> = Vec::new();

    for key in keys {
        let dice = rng.gen_range(0..100u32);
        if dice < w_pred {
            preds.push(key);
            if preds.len() as u64 >= spec.batch_unit {
                script
                    .batches
                    .push(OpBatch::Predecessor(std::mem::take(&mut preds)));
            }
        } else if dice < w_pred + w_ins {
            inserts.push((key, rng.gen()));
            if inserts.len() as u64 >= spec.batch_unit {
                script
                    .batches
                    .push(OpBatch::Insert(std::mem::take(&mut inserts)));
            }
        } else {
            scans.push((key, key.saturating_add(scan_width)));
            if scans.len() as u64 * spec.scan_expected >= spec.batch_unit {
                script
                    .batches
                    .push(OpBatch::Scan(std::mem::take(&mut scans)));
            }
        }
        let _ = w_scan;
    }
    if !preds.is_empty() {
        script.batches.push(OpBatch::Predecessor(preds));
    }
    if !inserts.is_empty() {
        script.batches.push(OpBatch::Insert(inserts));
    }
    if !scans.is_empty() {
        script.batches.push(OpBatch::Scan(scans));
    }
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::KeyUniverse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(workload: YcsbWorkload, ops: u64, batch_unit: u64) -> YcsbSpec {
        YcsbSpec {
            workload,
            ops,
            skew: SkewSpec::new(0.0, KeyUniverse::All64Bit),
            init_count: 100_000,
            batch_unit,
            scan_expected: 100,
        }
    }

    #[test]
    fn c_is_predecessor_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = gen_ycsb(&spec(YcsbWorkload::C, 100, 1000), &mut rng).unwrap();
        assert_eq!(s.batches.len(), 1);
        assert!(matches!(&s.batches[0], OpBatch::Predecessor(v) if v.len() == 100));
    }

    #[test]
    fn a_is_half_inserts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = gen_ycsb(&spec(YcsbWorkload::A, 10_000, 100_000), &mut rng).unwrap();
        let inserts: usize = s
            .batches
            .iter()
            .map(|b| match b {
                OpBatch::Insert(v) => v.len(),
                _ => 0,
            })
            .sum();
        // 3 sigma of binomial(10000, 0.5)
        let sigma = (10_000.0f64 * 0.25).sqrt();
        assert!((inserts as f64 - 5000.0).abs() < 3.0 * sigma, "{inserts}");
    }

    #[test]
    fn e_flushes_scans_by_expected_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // unit 1000 with 100 expected per scan: scan batches hold 10 scans
        let s = gen_ycsb(&spec(YcsbWorkload::E, 2_000, 1000), &mut rng).unwrap();
        let scan_sizes: Vec<usize> = s
            .batches
            .iter()
            .filter_map(|b| match b {
                OpBatch::Scan(v) => Some(v.len()),
                _ => None,
            })
            .collect();
        assert!(!scan_sizes.is_empty());
        // all but the trailing flush hit the unit exactly
        for sz in &scan_sizes[..scan_sizes.len() - 1] {
            assert_eq!(*sz, 10);
        }
    }

    #[test]
    fn d_is_insert_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = gen_ycsb(&spec(YcsbWorkload::D, 500, 200), &mut rng).unwrap();
        assert!(s.batches.iter().all(|b| matches!(b, OpBatch::Insert(_))));
        let total: usize = s.batches.iter().map(OpBatch::len).sum();
        assert_eq!(total, 500);
    }
}
