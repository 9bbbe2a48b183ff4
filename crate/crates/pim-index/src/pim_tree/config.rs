//! Tree shape parameters and their derivation from the machine size.

use rand::Rng;

use crate::pim_model::AccountingMode;
use crate::{Error, Result};

/// Shape and tuning of a tree instance.
///
/// Level counts derive from the machine size: with fanout `B` over `P`
/// modules the bottom layer gets `max(1, ceil(log_B log_B P))` levels, the
/// middle layer `max(1, ceil(log_B P) - l1_levels)` levels; keys taller than
/// both layers live in the replicated top layer. The pull thresholds are
/// `B * l2_levels` for the middle layer and `B` for the bottom layer.
#[derive(Debug, Clone)]
pub struct TreeConfig {
    pub modules: usize,
    pub fanout: u32,
    pub l1_levels: u8,
    pub l2_levels: u8,
    pub l1_pull_threshold: usize,
    pub l2_pull_threshold: usize,
    /// Pull rounds stop early once max planned module load is at most this
    /// multiple of the mean.
    pub imbalance_factor: f64,
    /// Merged scan ranges wider than this multiple of the mean input range
    /// width are split before execution.
    pub scan_split_multiplier: u64,
    pub seed: u64,
    pub accounting: AccountingMode,
}

impl TreeConfig {
    pub fn new(modules: usize, fanout: u32, seed: u64) -> Result<Self> {
        if modules == 0 || modules > (1 << 16) {
            return Err(Error::Config(format!(
                "module count must be in 1..=65536, got {modules}"
            )));
        }
        if fanout < 2 {
            return Err(Error::Config(format!(
                "fanout must be at least 2, got {fanout}"
            )));
        }
        let (l1, l2) = derive_levels(modules, fanout);
        Ok(TreeConfig {
            modules,
            fanout,
            l1_levels: l1,
            l2_levels: l2,
            l1_pull_threshold: fanout as usize,
            l2_pull_threshold: fanout as usize * l2 as usize,
            imbalance_factor: 3.0,
            scan_split_multiplier: 16,
            seed,
            accounting: AccountingMode::Unpadded,
        })
    }

    pub fn with_accounting(mut self, mode: AccountingMode) -> Self {
        self.accounting = mode;
        self
    }

    /// Number of levels in the distributed (non-replicated) part.
    pub fn total_levels(&self) -> u8 {
        self.l1_levels + self.l2_levels
    }

    /// Smallest batch size at which the load-balance guarantees are claimed:
    /// `P * log2(P) * B * l2_levels`.
    pub fn min_balanced_batch(&self) -> usize {
        let logp = (self.modules as f64).log2().max(1.0).ceil() as usize;
        self.modules * logp * self.fanout as usize * self.l2_levels as usize
    }

    /// Stage bound on launches per predecessor batch:
    /// `1 + l2_levels + 1 + 2 * l1_levels + 1`.
    pub fn predecessor_round_bound(&self) -> u64 {
        3 + self.l2_levels as u64 + 2 * self.l1_levels as u64
    }
}

/// Ceil that forgives floating-point residue on exact integers.
fn ceil_snapped(v: f64) -> f64 {
    if (v - v.round()).abs() < 1e-9 {
        v.round()
    } else {
        v.ceil()
    }
}

fn derive_levels(modules: usize, fanout: u32) -> (u8, u8) {
    let b = fanout as f64;
    let lbp = (modules as f64).ln() / b.ln();
    if lbp <= 1.0 {
        return (1, 1);
    }
    let llbp = lbp.ln() / b.ln();
    let l1 = ceil_snapped(llbp).max(1.0) as u8;
    let l2 = ceil_snapped(lbp - llbp).max(1.0) as u8;
    (l1, l2)
}

/// Draws a level count from the geometric distribution with promotion
/// probability `1/fanout`: `P[h >= k+1 | h >= k] = 1/fanout`, so a fraction
/// `fanout^-k` of keys reaches above level `k`.
pub fn generate_height(fanout: u32, rng: &mut impl Rng) -> u8 {
    let mut h = 1u8;
    while h < 64 && rng.gen_ratio(1, fanout) {
        h += 1;
    }
    h
}

/// Planned-load balance test: true iff `max <= factor * mean`.
pub fn check_balance(loads: &[u64], factor: f64) -> bool {
    if loads.is_empty() {
        return true;
    }
    let max = *loads.iter().max().unwrap() as f64;
    let sum: u64 = loads.iter().sum();
    max * loads.len() as f64 <= factor * sum as f64
}
