//! Deterministic workload generators.
//!
//! The skewed key streams follow a part-then-uniform scheme: the key space
//! (or the live key set) is divided evenly into `parts` parts, a part is
//! drawn from a Zipfian distribution over part ranks, then a key is drawn
//! uniformly inside the part. Part probabilities are periodically
//! reshuffled over the parts. Exponent `alpha = 0` degenerates to uniform.

mod script;
mod wiki;
mod ycsb;

pub use script::{parse_script, write_script, OpBatch, WorkloadScript};
pub use wiki::encode_wiki_key;
pub use ycsb::{gen_ycsb, YcsbSpec, YcsbWorkload};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Error, Key, Result};

/// Which universe skewed draws come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyUniverse {
    /// Parts partition the live key set; draws return existing keys.
    ExistingKeys,
    /// Parts partition all 64-bit keys above the sentinel.
    All64Bit,
}

/// Parameters of the part-skewed Zipfian stream.
#[derive(Debug, Clone)]
pub struct SkewSpec {
    /// Zipfian exponent over part ranks; `0` is uniform.
    pub alpha: f64,
    /// Number of parts the universe is divided into.
    pub parts: usize,
    /// Draws between part-probability reshuffles; `0` disables shuffling.
    pub shuffle_period: u64,
    pub universe: KeyUniverse,
}

impl SkewSpec {
    pub fn new(alpha: f64, universe: KeyUniverse) -> Self {
        SkewSpec {
            alpha,
            parts: 2048,
            shuffle_period: 0,
            universe,
        }
    }

    pub fn with_parts(mut self, parts: usize) -> Self {
        self.parts = parts;
        self
    }

    pub fn with_shuffle_period(mut self, period: u64) -> Self {
        self.shuffle_period = period;
        self
    }
}

/// Zipfian sampler over part ranks: precomputed CDF plus a rank-to-part
/// permutation that reshuffles every `shuffle_period` draws.
pub struct PartSampler {
    cdf: Vec<f64>,
    perm: Vec<u32>,
    period: u64,
    drawn: u64,
}

impl PartSampler {
    pub fn new(alpha: f64, parts: usize, shuffle_period: u64) -> Result<Self> {
        if parts == 0 {
            return Err(Error::Config("part count must be positive".into()));
        }
        if !(0.0..=16.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} out of range")));
        }
        let mut cdf = Vec::with_capacity(parts);
        let mut acc = 0.0;
        for rank in 1..=parts {
            acc += (rank as f64).powf(-alpha);
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        Ok(PartSampler {
            cdf,
            perm: (0..parts as u32).collect(),
            period: shuffle_period,
            drawn: 0,
        })
    }

    pub fn parts(&self) -> usize {
        self.cdf.len()
    }

    /// Draws a part index, reshuffling the rank-to-part map on period
    /// boundaries.
    pub fn sample(&mut self, rng: &mut impl Rng) -> usize {
        if self.period > 0 && self.drawn > 0 && self.drawn % self.period == 0 {
            self.perm.shuffle(rng);
        }
        self.drawn += 1;
        let u: f64 = rng.gen();
        let rank = self.cdf.partition_point(|c| *c < u).min(self.cdf.len() - 1);
        self.perm[rank] as usize
    }

    /// Probability mass of the rank-1 part.
    pub fn head_mass(&self) -> f64 {
        self.cdf[0]
    }
}

/// Draws `count` keys part-then-uniform. Existing-key draws require the
/// live key slice (ascending); the whole-space universe never yields the
/// sentinel.
pub fn gen_modified_zipfian(
    spec: &SkewSpec,
    count: usize,
    live: Option<&[Key]>,
    rng: &mut impl Rng,
) -> Result<Vec<Key>> {
    let mut out = Vec::with_capacity(count);
    match spec.universe {
        KeyUniverse::ExistingKeys => {
            let live = live.ok_or(Error::EmptyKeyUniverse)?;
            if live.is_empty() {
                return Err(Error::EmptyKeyUniverse);
            }
            let parts = spec.parts.min(live.len());
            let mut sampler = PartSampler::new(spec.alpha, parts, spec.shuffle_period)?;
            for _ in 0..count {
                let part = sampler.sample(rng);
                let lo = part * live.len() / parts;
                let hi = (part + 1) * live.len() / parts;
                out.push(live[rng.gen_range(lo..hi.max(lo + 1))]);
            }
        }
        KeyUniverse::All64Bit => {
            let mut sampler = PartSampler::new(spec.alpha, spec.parts, spec.shuffle_period)?;
            let width = u64::MAX / spec.parts as u64;
            for _ in 0..count {
                let part = sampler.sample(rng) as u64;
                let lo = 1 + part * width;
                let hi = if part as usize + 1 == spec.parts {
                    u64::MAX
                } else {
                    lo + width
                };
                out.push(rng.gen_range(lo..=hi));
            }
        }
    }
    Ok(out)
}

/// Uniform keys over the whole space (never the sentinel); the warm-up
/// stream.
pub fn gen_uniform_keys(count: usize, rng: &mut impl Rng) -> Vec<Key> {
    (0..count).map(|_| rng.gen_range(1..=u64::MAX)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_zero_is_uniform_over_parts() {
        let spec = SkewSpec::new(0.0, KeyUniverse::All64Bit).with_parts(64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let keys = gen_modified_zipfian(&spec, 64_000, None, &mut rng).unwrap();
        let width = u64::MAX / 64;
        let mut counts = [0u64; 64];
        for k in keys {
            counts[(((k - 1) / width) as usize).min(63)] += 1;
        }
        // each part expects 1000; 3 sigma of binomial(64000, 1/64)
        let sigma = (64_000.0f64 * (1.0 / 64.0) * (63.0 / 64.0)).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() < 3.0 * sigma + 1.0, "count {c}");
        }
    }

    #[test]
    fn head_part_matches_zipf_mass() {
        // numeric normalization is the independent reference
        let parts = 2048;
        let alpha = 1.2;
        let norm: f64 = (1..=parts).map(|r| (r as f64).powf(-alpha)).sum();
        let expect = 1.0 / norm;

        let spec = SkewSpec::new(alpha, KeyUniverse::All64Bit).with_parts(parts);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000usize;
        let keys = gen_modified_zipfian(&spec, n, None, &mut rng).unwrap();
        // without shuffling, rank 1 stays at part 0
        let width = u64::MAX / parts as u64;
        let top = keys.iter().filter(|k| (*k - 1) / width == 0).count();
        let sigma = (n as f64 * expect * (1.0 - expect)).sqrt();
        assert!(
            ((top as f64) - n as f64 * expect).abs() < 3.0 * sigma,
            "top part hit {top}, expected {}",
            n as f64 * expect
        );
    }

    #[test]
    fn existing_universe_only_returns_live_keys() {
        let live: Vec<u64> = (1..=1000).map(|i| i * 3).collect();
        let spec = SkewSpec::new(1.2, KeyUniverse::ExistingKeys).with_parts(128);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let keys = gen_modified_zipfian(&spec, 5000, Some(&live), &mut rng).unwrap();
        let set: std::collections::BTreeSet<u64> = live.iter().copied().collect();
        assert!(keys.iter().all(|k| set.contains(k)));

        assert!(matches!(
            gen_modified_zipfian(&spec, 10, Some(&[]), &mut rng),
            Err(Error::EmptyKeyUniverse)
        ));
    }

    #[test]
    fn duplicate_fraction_stays_low_at_production_ratio() {
        // a batch of one thousandth of the live keys keeps duplicates
        // under 10% even at the heaviest skew
        let live: Vec<u64> = (1..=1_000_000u64).collect();
        let spec = SkewSpec::new(1.2, KeyUniverse::ExistingKeys).with_parts(2048);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = gen_modified_zipfian(&spec, 1000, Some(&live), &mut rng).unwrap();
        let uniq: std::collections::BTreeSet<u64> = batch.iter().copied().collect();
        let dup_fraction = 1.0 - uniq.len() as f64 / batch.len() as f64;
        assert!(dup_fraction < 0.10, "duplicate fraction {dup_fraction}");
    }

    #[test]
    fn shuffle_moves_the_hot_part() {
        let spec = SkewSpec::new(1.2, KeyUniverse::All64Bit)
            .with_parts(64)
            .with_shuffle_period(10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let keys = gen_modified_zipfian(&spec, 40_000, None, &mut rng).unwrap();
        let width = u64::MAX / 64;
        let hot_per_window: Vec<usize> = keys
            .chunks(10_000)
            .map(|w| {
                let mut counts = [0usize; 64];
                for k in w {
                    counts[(((k - 1) / width) as usize).min(63)] += 1;
                }
                counts
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, c)| **c)
                    .unwrap()
                    .0
            })
            .collect();
        let distinct: std::collections::BTreeSet<usize> = hot_per_window.iter().copied().collect();
        assert!(
            distinct.len() > 1,
            "hot part never moved: {hot_per_window:?}"
        );
    }

    #[test]
    fn part_frequencies_converge_to_zipf_mass() {
        // chi-square against the numerically normalized Zipf masses
        let parts = 64usize;
        let alpha = 0.9;
        let n = 1_000_000usize;
        let spec = SkewSpec::new(alpha, KeyUniverse::All64Bit).with_parts(parts);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let keys = gen_modified_zipfian(&spec, n, None, &mut rng).unwrap();
        let width = u64::MAX / parts as u64;
        let mut counts = vec![0u64; parts];
        for k in keys {
            counts[(((k - 1) / width) as usize).min(parts - 1)] += 1;
        }
        let norm: f64 = (1..=parts).map(|r| (r as f64).powf(-alpha)).sum();
        let mut chi2 = 0.0;
        for (rank, c) in counts.iter().enumerate() {
            let expect = n as f64 * ((rank + 1) as f64).powf(-alpha) / norm;
            chi2 += (*c as f64 - expect).powi(2) / expect;
        }
        // chi-square with 63 degrees of freedom: mean 63, sigma sqrt(126)
        let bound = 63.0 + 3.0 * (126.0f64).sqrt();
        assert!(chi2 < bound, "chi2 {chi2:.1} exceeds {bound:.1}");
    }

    #[test]
    fn streams_are_reproducible() {
        let spec = SkewSpec::new(0.9, KeyUniverse::All64Bit).with_shuffle_period(100);
        let a = gen_modified_zipfian(&spec, 1000, None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gen_modified_zipfian(&spec, 1000, None, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
