//! Analytic test landscapes: a smooth distance-to-target bowl and an
//! uncorrelated hash landscape.

use sha2::{Digest, Sha256};

use crate::grammar::{
    Activation, ConvGene, DenseGene, Gene, Genotype, GenotypeId, Grammar, OptimizerGene,
    OutputGene, Param, PoolGene,
};

use super::{FitnessEvaluator, FitnessPair};

/// Maps `bytes` to `[0, 1)` through the top 53 bits of their SHA-256 digest.
pub fn stable_unit_hash(bytes: &[u8]) -> f64 {
    let digest = Sha256::digest(bytes);
    let word = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    (word >> 11) as f64 / (1u64 << 53) as f64
}

/// Weight per unit of domain-index distance on ordered domains.
const PARAM_WEIGHT: f64 = 1.0;
/// Nominal domains (activations, flags, pool type) carry no order, so their
/// index distance is not scored.
const NOMINAL_WEIGHT: f64 = 0.0;
/// Weight per gene of section-size distance.
const COUNT_WEIGHT: f64 = 2.0;
const TARGET_S1: usize = 2;
const TARGET_S2: usize = 1;
const TARGET_DROPOUT: f64 = 0.25;
const NOISE: f64 = 0.01;

/// Target domain index of a parameter; clamped into the grammar's domain.
fn target_index(grammar: &Grammar, p: Param) -> Option<usize> {
    use Param::*;
    let idx = match p {
        ConvFilters => 1,
        ConvKernelSize => 1,
        ConvStride => 0,
        ConvActivation => 0,
        ConvUseBias => 0,
        PoolKind => 0,
        PoolSize => 0,
        PoolStride => 1,
        DenseUnits => 3,
        DenseActivation => 1,
        DenseUseBias => 0,
        OutputUseBias => 0,
        LearningRate => 0,
        Decay => 2,
        Momentum => 1,
        Nesterov => 0,
        DropoutRate => return None,
    };
    grammar.domain_len(p).map(|n| idx.min(n - 1))
}

fn weight(p: Param) -> f64 {
    use Param::*;
    match p {
        ConvActivation | ConvUseBias | PoolKind | DenseActivation | DenseUseBias
        | OutputUseBias | Nesterov => NOMINAL_WEIGHT,
        _ => PARAM_WEIGHT,
    }
}

fn gene_distance(grammar: &Grammar, gene: &Gene) -> f64 {
    gene.params()
        .iter()
        .map(|&p| match gene {
            Gene::Dropout(d) => (d.rate - TARGET_DROPOUT).abs() * weight(p),
            _ => {
                let at = grammar.value_index(gene, p).unwrap_or(0) as f64;
                let target = target_index(grammar, p).unwrap_or(0) as f64;
                (at - target).abs() * weight(p)
            }
        })
        .sum()
}

/// Weighted L1 distance of `g` from the target assignment; zero at the target.
pub fn smooth_distance(grammar: &Grammar, g: &Genotype) -> f64 {
    let counts = g.s1.len().abs_diff(TARGET_S1) + g.s2.len().abs_diff(TARGET_S2);
    let genes: f64 =
        g.s1.iter()
            .chain(&g.s2)
            .chain([
                &Gene::Output(g.output.clone()),
                &Gene::Optimizer(g.optimizer.clone()),
            ])
            .map(|gene| gene_distance(grammar, gene))
            .sum();
    COUNT_WEIGHT * counts as f64 + genes
}

/// The genotype at distance zero for `class_count` classes.
pub fn smooth_target(grammar: &Grammar, class_count: usize) -> Genotype {
    let at = |p: Param| target_index(grammar, p).unwrap_or(0);
    Genotype {
        id: GenotypeId(0),
        parent: None,
        s1: vec![
            Gene::Conv(ConvGene {
                filters: grammar.conv_filters[at(Param::ConvFilters)],
                kernel_size: grammar.conv_kernel_size[at(Param::ConvKernelSize)],
                stride: grammar.conv_stride[at(Param::ConvStride)],
                activation: grammar.conv_activation[at(Param::ConvActivation)],
                use_bias: grammar.conv_use_bias[at(Param::ConvUseBias)],
            }),
            Gene::Pool(PoolGene {
                kind: grammar.pool_kind[at(Param::PoolKind)],
                pool_size: grammar.pool_size[at(Param::PoolSize)],
                stride: grammar.pool_stride[at(Param::PoolStride)],
            }),
        ],
        s2: vec![Gene::Dense(DenseGene {
            units: grammar.dense_units[at(Param::DenseUnits)],
            activation: grammar.dense_activation[at(Param::DenseActivation)],
            use_bias: grammar.dense_use_bias[at(Param::DenseUseBias)],
        })],
        output: OutputGene {
            units: class_count,
            activation: Activation::Softmax,
            use_bias: grammar.output_use_bias[at(Param::OutputUseBias)],
        },
        optimizer: OptimizerGene {
            learning_rate: grammar.learning_rate[at(Param::LearningRate)],
            decay: grammar.decay[at(Param::Decay)],
            momentum: grammar.momentum[at(Param::Momentum)],
            nesterov: grammar.nesterov[at(Param::Nesterov)],
        },
    }
}

/// Distance-to-target landscape; single-parameter moves change the loss by a
/// bounded amount.
pub fn evaluate_smooth_surrogate(grammar: &Grammar, g: &Genotype) -> FitnessPair {
    let train_loss = smooth_distance(grammar, g);
    let noise = NOISE * stable_unit_hash(format!("smooth-test\n{}", g.canonical_text()).as_bytes());
    let test_loss = train_loss + noise;
    FitnessPair {
        train_loss,
        test_loss,
        train_accuracy: 1.0 / (1.0 + train_loss),
        test_accuracy: 1.0 / (1.0 + test_loss),
    }
}

/// Hash landscape: every distinct genotype gets an independent-looking value in `[0, 1)`.
pub fn evaluate_rugged_surrogate(g: &Genotype) -> FitnessPair {
    let text = g.canonical_text();
    let train_loss = stable_unit_hash(text.as_bytes());
    let test_loss = stable_unit_hash(format!("rugged-test\n{text}").as_bytes());
    FitnessPair {
        train_loss,
        test_loss,
        train_accuracy: 1.0 - train_loss,
        test_accuracy: 1.0 - test_loss,
    }
}

#[derive(Clone, Debug, Default)]
pub struct SmoothSurrogate {
    pub grammar: Grammar,
}

impl FitnessEvaluator for SmoothSurrogate {
    fn evaluate(&self, genotype: &Genotype, _seed: u64) -> FitnessPair {
        evaluate_smooth_surrogate(&self.grammar, genotype)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RuggedSurrogate;

impl FitnessEvaluator for RuggedSurrogate {
    fn evaluate(&self, genotype: &Genotype, _seed: u64) -> FitnessPair {
        evaluate_rugged_surrogate(genotype)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::validate;

    #[test]
    fn target_has_zero_loss() {
        let gr = Grammar::default();
        let t = smooth_target(&gr, 10);
        assert!(validate(&t, &gr).is_ok());
        let f = evaluate_smooth_surrogate(&gr, &t);
        assert_eq!(f.train_loss, 0.0);
        assert!(f.test_loss >= 0.0 && f.test_loss < NOISE);
    }

    #[test]
    fn one_index_step_costs_one_weight() {
        let gr = Grammar::default();
        let mut g = smooth_target(&gr, 10);
        gr.set_value_index(&mut g.s1[0], Param::ConvFilters, 2);
        assert_eq!(evaluate_smooth_surrogate(&gr, &g).train_loss, PARAM_WEIGHT);
        let mut g = smooth_target(&gr, 10);
        g.s2.clear();
        assert_eq!(evaluate_smooth_surrogate(&gr, &g).train_loss, COUNT_WEIGHT);
    }

    #[test]
    fn rugged_is_deterministic_and_in_unit_interval() {
        let gr = Grammar::default();
        let g = smooth_target(&gr, 10);
        let a = evaluate_rugged_surrogate(&g);
        assert_eq!(a, evaluate_rugged_surrogate(&g));
        for v in [a.train_loss, a.test_loss] {
            assert!((0.0..1.0).contains(&v));
        }
        // lineage ids do not affect fitness
        let mut h = g.clone();
        h.id = GenotypeId(99);
        assert_eq!(evaluate_rugged_surrogate(&h), a);
    }
}
