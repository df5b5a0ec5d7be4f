use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Task};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl Fractions {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 || [self.train, self.val, self.test].iter().any(|&f| f < 0.0) {
            return Err(CorpusError::Fractions(sum));
        }
        Ok(())
    }
}

/// Stratified three-way partition of `0..strata.len()`.
///
/// Items are shuffled within their stratum, then ordered by their relative
/// rank inside the stratum, and the ordered list is cut at the global
/// fraction boundaries. Bucket sizes therefore match the fractions up to
/// rounding and every stratum is spread proportionally over the buckets.
pub fn split_indices(
    strata: &[Option<usize>],
    fractions: Fractions,
    seed: u64,
) -> Result<[Vec<usize>; 3], CorpusError> {
    fractions.validate()?;
    let mut rng = seed::rng(seed, "split");
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(*s).or_default().push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(strata.len());
    for (g, (_, mut members)) in groups.into_iter().enumerate() {
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        for (rank, idx) in members.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / n, g, idx));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = strata.len();
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_val = ((fractions.val * n as f64).round() as usize).min(n - n_train);
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for (pos, (_, _, idx)) in keyed.into_iter().enumerate() {
        let bucket = if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        };
        out[bucket].push(idx);
    }
    for b in &mut out {
        b.sort_unstable();
    }
    Ok(out)
}

/// Splits a corpus into train/val/test, stratified by `task` when given.
pub fn split(
    corpus: &Corpus,
    fractions: Fractions,
    seed: u64,
    task: Option<Task>,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    let strata: Vec<Option<usize>> = corpus
        .documents
        .iter()
        .map(|d| task.and_then(|t| d.label_index(t)))
        .collect();
    let [a, b, c] = split_indices(&strata, fractions, seed)?;
    Ok((corpus.subset(&a), corpus.subset(&b), corpus.subset(&c)))
}
