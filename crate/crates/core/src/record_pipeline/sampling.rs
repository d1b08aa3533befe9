//! Deterministic test-set sampling.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014), chosen because
//! it is a dozen lines in any language, so a seed reproduces the same
//! subset outside Rust. Selection is a partial Fisher–Yates shuffle over
//! record positions; bounded draws use rejection sampling:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! next = z ^ (z >> 31)                      (all arithmetic mod 2^64)
//!
//! below(m): limit = 2^64 - (2^64 mod m); draw x until x < limit; return x mod m
//!
//! idx = [0, 1, ..., len-1]
//! for i in 0..n: j = i + below(len - i); swap(idx[i], idx[j])
//! result = records[idx[0]], ..., records[idx[n-1]]
//! ```

use super::{ClinicalRecord, PipelineError};

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let span = 1u128 << 64;
        let limit = span - span % u128::from(bound);
        loop {
            let x = self.next_u64();
            if u128::from(x) < limit {
                return x % bound;
            }
        }
    }
}

/// Positions selected for a sample of `n` out of `len`.
pub(crate) fn sample_positions(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = SplitMix64::new(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = i + rng.below((len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

/// Picks `n` records; a pure function of (input order, `n`, `seed`).
pub fn sample_test_set(
    records: &[ClinicalRecord],
    n: usize,
    seed: u64,
) -> Result<Vec<ClinicalRecord>, PipelineError> {
    if n > records.len() {
        return Err(PipelineError::NotEnoughRecords { requested: n, available: records.len() });
    }
    Ok(sample_positions(records.len(), n, seed)
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}
