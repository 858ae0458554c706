//! Fitness evaluation: genotype → phenotype decoding, the native CNN trainer
//! and two surrogate landscapes.

mod cnn;
pub mod nn;
mod phenotype;
mod surrogate;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::grammar::Genotype;

pub use cnn::{evaluate_cnn, initial_score, train_and_score, CnnEvaluator, TrainSettings};
pub use phenotype::{decode, Infeasible, LayerSpec, Phenotype};
pub use surrogate::{
    evaluate_rugged_surrogate, evaluate_smooth_surrogate, smooth_distance, smooth_target,
    stable_unit_hash, RuggedSurrogate, SmoothSurrogate,
};

/// Loss assigned to shape-infeasible or diverged networks.
pub const PENALTY: f64 = 1e9;

/// Losses (minimised) and accuracies of one evaluated genotype.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessPair {
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

impl FitnessPair {
    /// Both losses at the sentinel; accuracies are reported as zero.
    pub fn penalty() -> Self {
        FitnessPair {
            train_loss: PENALTY,
            test_loss: PENALTY,
            train_accuracy: 0.0,
            test_accuracy: 0.0,
        }
    }

    pub fn is_penalty(&self) -> bool {
        self.train_loss >= PENALTY
    }

    /// Selection order on training loss. Penalised pairs sort after every
    /// finite loss.
    pub fn cmp_fitness(&self, other: &FitnessPair) -> Ordering {
        self.is_penalty()
            .cmp(&other.is_penalty())
            .then_with(|| self.train_loss.total_cmp(&other.train_loss))
    }

    /// Pairs with a non-finite or negative loss become the penalty.
    pub(crate) fn sanitized(self) -> Self {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.train_loss) && ok(self.test_loss) && !self.is_penalty() {
            self
        } else {
            FitnessPair::penalty()
        }
    }
}

/// Maps a genotype to its fitness. Must be a pure function of
/// `(genotype, seed)` and whatever data the evaluator owns.
pub trait FitnessEvaluator: Sync {
    fn evaluate(&self, genotype: &Genotype, seed: u64) -> FitnessPair;
}

impl<F> FitnessEvaluator for F
where
    F: Fn(&Genotype, u64) -> FitnessPair + Sync,
{
    fn evaluate(&self, genotype: &Genotype, seed: u64) -> FitnessPair {
        self(genotype, seed)
    }
}

/// Index of the best pair; ties go to the lowest index.
pub fn best_index(pairs: &[FitnessPair]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in pairs.iter().enumerate() {
        match best {
            Some(b) if p.cmp_fitness(&pairs[b]) != Ordering::Less => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(train: f64) -> FitnessPair {
        FitnessPair {
            train_loss: train,
            test_loss: train,
            train_accuracy: 0.5,
            test_accuracy: 0.5,
        }
    }

    #[test]
    fn penalty_is_worse_than_any_finite_loss() {
        let p = FitnessPair::penalty();
        for v in [0.0, 1.0, 1e8, 9.99e8] {
            assert_eq!(p.cmp_fitness(&pair(v)), Ordering::Greater);
            assert_eq!(pair(v).cmp_fitness(&p), Ordering::Less);
        }
        assert_eq!(p.cmp_fitness(&p), Ordering::Equal);
    }

    #[test]
    fn ties_go_to_first() {
        let ps = [pair(2.0), pair(1.0), pair(1.0), FitnessPair::penalty()];
        assert_eq!(best_index(&ps), Some(1));
        assert_eq!(best_index(&[]), None);
        let all_bad = [FitnessPair::penalty(), FitnessPair::penalty()];
        assert_eq!(best_index(&all_bad), Some(0));
    }

    #[test]
    fn non_finite_becomes_penalty() {
        assert!(pair(f64::NAN).sanitized().is_penalty());
        assert!(pair(f64::INFINITY).sanitized().is_penalty());
        assert_eq!(pair(0.3).sanitized(), pair(0.3));
    }
}
