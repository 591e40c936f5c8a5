use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MotionSequence;
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
        }
    }
}

/// Sequence ids per split; subjects never straddle two splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn select<'a>(corpus: &'a [MotionSequence], ids: &[String]) -> Vec<&'a MotionSequence> {
        corpus.iter().filter(|s| ids.contains(&s.id)).collect()
    }

    pub fn train_set<'a>(&self, corpus: &'a [MotionSequence]) -> Vec<&'a MotionSequence> {
        Self::select(corpus, &self.train)
    }

    pub fn validation_set<'a>(&self, corpus: &'a [MotionSequence]) -> Vec<&'a MotionSequence> {
        Self::select(corpus, &self.validation)
    }

    pub fn test_set<'a>(&self, corpus: &'a [MotionSequence]) -> Vec<&'a MotionSequence> {
        Self::select(corpus, &self.test)
    }
}

/// Splits by subject: subjects are shuffled with `seed` and dealt out in
/// proportion to `fractions`. Every class with a positive fraction gets at
/// least one subject.
pub fn make_split(
    corpus: &[MotionSequence],
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    let f = [fractions.train, fractions.validation, fractions.test];
    if f.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::config("split fractions must be non-negative"));
    }
    if math::abs(f.iter().sum::<f64>() - 1.0) > 1e-9 {
        return Err(Error::config("split fractions must sum to 1"));
    }
    let mut subjects: Vec<&str> = corpus.iter().map(|s| s.subject_id.as_str()).collect();
    subjects.sort_unstable();
    subjects.dedup();
    let classes = f.iter().filter(|x| **x > 0.0).count();
    if subjects.len() < classes {
        return Err(Error::config(alloc::format!(
            "{} subjects cannot fill {} split classes",
            subjects.len(),
            classes
        )));
    }
    let n = subjects.len();
    let mut counts = [0usize; 3];
    for i in 1..3 {
        counts[i] = math::round(f[i] * n as f64) as usize;
        if f[i] > 0.0 {
            counts[i] = counts[i].max(1);
        }
    }
    counts[0] = n.saturating_sub(counts[1] + counts[2]);
    if f[0] > 0.0 && counts[0] == 0 {
        // Rounding handed everything to the smaller classes; take one back.
        let donor = if counts[1] >= counts[2] { 1 } else { 2 };
        counts[donor] -= 1;
        counts[0] = 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let (tr, rest) = subjects.split_at(counts[0]);
    let (va, te) = rest.split_at(counts[1]);
    let ids = |group: &[&str]| -> Vec<String> {
        corpus
            .iter()
            .filter(|s| group.contains(&s.subject_id.as_str()))
            .map(|s| s.id.clone())
            .collect()
    };
    Ok(DatasetSplit {
        train: ids(tr),
        validation: ids(va),
        test: ids(te),
        seed,
    })
}
