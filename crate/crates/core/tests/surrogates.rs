use landscape_lab::evaluator::{FitnessEvaluator, RuggedSurrogate, SmoothSurrogate};
use landscape_lab::grammar::{random_genotype, Grammar, SectionLimits};
use landscape_lab::measures::{autocorrelation_report, THRESHOLD};
use landscape_lab::mutation::MutationKind;
use landscape_lab::walks::selective_walk;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn median_rho1(evaluator: &dyn FitnessEvaluator, kind: MutationKind, seed: u64) -> f64 {
    let grammar = Grammar::default();
    let limits = SectionLimits::default();
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let walks: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            let start = random_genotype(&grammar, 10, rng, &limits).unwrap();
            selective_walk(start, kind, 3, 30, evaluator, &grammar, &limits, rng)
                .unwrap()
                .train_series()
        })
        .collect();
    let r = autocorrelation_report(&walks, &[1], THRESHOLD);
    r.step(1).unwrap().boxplot.unwrap().median
}

#[test]
fn smooth_median_lag_one_is_above_threshold() {
    for kind in MutationKind::ALL {
        for seed in 0..10 {
            let m = median_rho1(&SmoothSurrogate::default(), kind, seed);
            assert!(m > THRESHOLD, "{kind} seed {seed}: median {m}");
        }
    }
}

#[test]
fn rugged_median_lag_one_is_below_threshold() {
    for kind in MutationKind::ALL {
        for seed in 0..10 {
            let m = median_rho1(&RuggedSurrogate, kind, seed);
            assert!(m < THRESHOLD, "{kind} seed {seed}: median {m}");
        }
    }
}
