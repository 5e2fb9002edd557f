//! Deterministic response functions `λ: x ↦ a`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ceiling on the number of enumerated strategies.
pub const STRATEGY_CAP: u128 = 1_000_000;

/// All deterministic strategies for the given outcome counts, enumerated in
/// mixed radix with setting 0 as the most significant digit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterministicStrategySet {
    outcome_counts: Vec<usize>,
    len: usize,
}

impl DeterministicStrategySet {
    pub fn new(outcome_counts: &[usize]) -> Result<Self> {
        Self::with_cap(outcome_counts, STRATEGY_CAP)
    }

    pub fn with_cap(outcome_counts: &[usize], cap: u128) -> Result<Self> {
        if outcome_counts.iter().any(|&o| o == 0) {
            return Err(Error::OutOfRange("every setting needs at least one outcome".into()));
        }
        let count = outcome_counts.iter().try_fold(1u128, |acc, &o| acc.checked_mul(o as u128));
        match count {
            Some(c) if c <= cap => Ok(Self { outcome_counts: outcome_counts.to_vec(), len: c as usize }),
            Some(c) => Err(Error::CapExceeded { count: c, cap }),
            None => Err(Error::CapExceeded { count: u128::MAX, cap }),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_settings(&self) -> usize {
        self.outcome_counts.len()
    }

    pub fn outcome_counts(&self) -> &[usize] {
        &self.outcome_counts
    }

    /// Outcome assigned to setting `x` by strategy `lambda`.
    pub fn outcome(&self, lambda: usize, x: usize) -> usize {
        let stride: usize = self.outcome_counts[x + 1..].iter().product();
        (lambda / stride) % self.outcome_counts[x]
    }

    pub fn strategy(&self, lambda: usize) -> Vec<usize> {
        (0..self.num_settings()).map(|x| self.outcome(lambda, x)).collect()
    }

    /// Response function `v(a|x,λ)`.
    pub fn response(&self, a: usize, x: usize, lambda: usize) -> bool {
        self.outcome(lambda, x) == a
    }

    /// Index of the strategy with the given outcomes.
    pub fn index_of(&self, outcomes: &[usize]) -> usize {
        outcomes
            .iter()
            .zip(&self.outcome_counts)
            .fold(0, |acc, (&a, &o)| acc * o + a)
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len).map(move |l| self.strategy(l))
    }

    /// Strategies with `λ(x) = a`.
    pub fn with_outcome(&self, x: usize, a: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&l| self.outcome(l, x) == a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_is_exhaustive_and_deterministic() {
        let s = DeterministicStrategySet::new(&[2, 3, 2]).unwrap();
        assert_eq!(s.len(), 12);
        let all: Vec<_> = s.iter().collect();
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 12);
        for (l, st) in all.iter().enumerate() {
            assert_eq!(s.index_of(st), l);
            for x in 0..3 {
                let hits = (0..s.outcome_counts()[x]).filter(|&a| s.response(a, x, l)).count();
                assert_eq!(hits, 1);
            }
        }
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[1], vec![0, 0, 1]);
    }

    #[test]
    fn cap_refuses() {
        let e = DeterministicStrategySet::with_cap(&[10, 10, 10], 999).unwrap_err();
        assert!(matches!(e, Error::CapExceeded { count: 1000, cap: 999 }));
        assert!(DeterministicStrategySet::new(&[3; 20]).is_err());
    }
}
