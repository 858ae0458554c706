use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, Subset};
use crate::grammar::Genotype;

use super::nn::{Network, Real};
use super::phenotype::{decode, Phenotype};
use super::{FitnessEvaluator, FitnessPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 8,
            batch_size: 64,
        }
    }
}

const EVAL_BATCH: usize = 256;

fn batch_input<T: Real>(s: &Subset, idx: &[usize], out: &mut Vec<T>) {
    out.clear();
    for &i in idx {
        out.extend(
            s.image(i)
                .iter()
                .map(|&v| T::from_f32(v).expect("finite pixel")),
        );
    }
}

/// Mean loss and accuracy over a whole subset, dropout off.
fn score<T: Real, R: Rng + ?Sized>(net: &mut Network<T>, s: &Subset, rng: &mut R) -> (f64, f64) {
    if s.is_empty() {
        return (0.0, 0.0);
    }
    let mut x = Vec::new();
    let mut total = 0.0;
    let mut correct = 0usize;
    let order: Vec<usize> = (0..s.len()).collect();
    for idx in order.chunks(EVAL_BATCH) {
        batch_input(s, idx, &mut x);
        let labels: Vec<usize> = idx.iter().map(|&i| s.labels[i]).collect();
        let classes = net.class_count();
        let probs = net.forward(&x, idx.len(), false, rng);
        for (row, &y) in probs.chunks_exact(classes).zip(&labels) {
            let p = row[y].to_f64().unwrap_or(0.0);
            total -= p.max(f64::MIN_POSITIVE).ln();
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                )
                .0;
            correct += usize::from(best == y);
        }
    }
    (total / s.len() as f64, correct as f64 / s.len() as f64)
}

/// Loss and accuracy on both subsets of a freshly initialised, untrained network.
pub fn initial_score<T: Real>(p: &Phenotype, data: &DatasetSplit, seed: u64) -> FitnessPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<T>::new(p, &mut rng);
    let (train_loss, train_accuracy) = score(&mut net, &data.train, &mut rng);
    let (test_loss, test_accuracy) = score(&mut net, &data.test, &mut rng);
    FitnessPair {
        train_loss,
        test_loss,
        train_accuracy,
        test_accuracy,
    }
    .sanitized()
}

/// Initialises, trains with mini-batch SGD, then scores on full train and test passes.
pub fn train_and_score<T: Real, R: Rng + ?Sized>(
    p: &Phenotype,
    data: &DatasetSplit,
    settings: &TrainSettings,
    rng: &mut R,
) -> FitnessPair {
    let mut net = Network::<T>::new(p, rng);
    let train = &data.train;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut x = Vec::new();
    let mut labels = Vec::new();
    let batch = settings.batch_size.max(1);
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for idx in order.chunks(batch) {
            batch_input(train, idx, &mut x);
            labels.clear();
            labels.extend(idx.iter().map(|&i| train.labels[i]));
            let loss = net.loss_and_grad(&x, &labels, true, rng);
            if !loss.is_finite() {
                return FitnessPair::penalty();
            }
            net.sgd_step();
        }
    }
    let (train_loss, train_accuracy) = score(&mut net, train, rng);
    let (test_loss, test_accuracy) = score(&mut net, &data.test, rng);
    FitnessPair {
        train_loss,
        test_loss,
        train_accuracy,
        test_accuracy,
    }
    .sanitized()
}

/// Decodes, then trains in `f32`. Infeasible genotypes get the penalty.
pub fn evaluate_cnn(
    g: &Genotype,
    data: &DatasetSplit,
    settings: &TrainSettings,
    seed: u64,
) -> FitnessPair {
    match decode(g, data.input_shape(), data.class_count) {
        Ok(p) => {
            train_and_score::<f32, _>(&p, data, settings, &mut ChaCha8Rng::seed_from_u64(seed))
        }
        Err(_) => FitnessPair::penalty(),
    }
}

/// CNN backend bound to one dataset split.
#[derive(Clone, Debug)]
pub struct CnnEvaluator {
    pub data: Arc<DatasetSplit>,
    pub settings: TrainSettings,
}

impl FitnessEvaluator for CnnEvaluator {
    fn evaluate(&self, genotype: &Genotype, seed: u64) -> FitnessPair {
        evaluate_cnn(genotype, &self.data, &self.settings, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;
    use crate::grammar::{
        Activation, ConvGene, Gene, GenotypeId, OptimizerGene, OutputGene, PoolGene, PoolKind,
    };

    fn minimal(classes: usize, lr: f64) -> Genotype {
        Genotype {
            id: GenotypeId(1),
            parent: None,
            s1: vec![Gene::Conv(ConvGene {
                filters: 32,
                kernel_size: 3,
                stride: 1,
                activation: Activation::Relu,
                use_bias: true,
            })],
            s2: vec![],
            output: OutputGene {
                units: classes,
                activation: Activation::Softmax,
                use_bias: true,
            },
            optimizer: OptimizerGene {
                learning_rate: lr,
                decay: 1e-4,
                momentum: 0.9,
                nesterov: false,
            },
        }
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let data = synthetic(10, 20, 8, 8, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = decode(&minimal(10, 0.01), data.input_shape(), 10).unwrap();
        let f = initial_score::<f32>(&p, &data, 3);
        assert!((f.train_loss - 10f64.ln()).abs() < 0.15, "{f:?}");
    }

    #[test]
    fn training_separates_two_blobs_and_is_deterministic() {
        let data = synthetic(2, 100, 8, 8, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = minimal(2, 0.01);
        let p = decode(&g, data.input_shape(), 2).unwrap();
        let before = initial_score::<f32>(&p, &data, 4);
        let after = evaluate_cnn(&g, &data, &TrainSettings::default(), 4);
        assert!(
            after.train_loss < before.train_loss,
            "{before:?} -> {after:?}"
        );
        assert!(after.train_accuracy > 0.9, "{after:?}");
        assert_eq!(after, evaluate_cnn(&g, &data, &TrainSettings::default(), 4));
    }

    #[test]
    fn infeasible_genotype_gets_penalty() {
        let data = synthetic(2, 4, 8, 8, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = minimal(2, 0.01);
        g.s1.push(Gene::Pool(PoolGene {
            kind: PoolKind::Max,
            pool_size: 5,
            stride: 1,
        }));
        g.s1.push(Gene::Pool(PoolGene {
            kind: PoolKind::Max,
            pool_size: 5,
            stride: 1,
        }));
        assert!(evaluate_cnn(&g, &data, &TrainSettings::default(), 0).is_penalty());
    }
}
