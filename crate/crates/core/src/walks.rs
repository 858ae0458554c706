//! Selective walks and the generational neuroevolution loop.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluator::{best_index, FitnessEvaluator, FitnessPair};
use crate::grammar::{random_genotype, Genotype, Grammar, SectionLimits};
use crate::mutation::{mutate, MutationKind};

/// A genotype with its fitness.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub genotype: Genotype,
    pub fitness: FitnessPair,
}

/// One walk position: the chosen solution plus the neighbor sample it won.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkStep {
    pub solution: Scored,
    /// Empty for the start solution.
    pub candidates: Vec<Scored>,
    /// Index of `solution` within `candidates`.
    pub chosen: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkTrace {
    pub kind: MutationKind,
    pub m: usize,
    /// Positions `s_0..s_n`.
    pub steps: Vec<WalkStep>,
    /// Neighbor evaluations, excluding the start solution.
    pub neighbor_evaluations: usize,
}

impl WalkTrace {
    pub fn n(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn train_series(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.solution.fitness.train_loss)
            .collect()
    }

    pub fn test_series(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.solution.fitness.test_loss)
            .collect()
    }
}

/// Evaluates in parallel on the current rayon pool. Seeds are drawn in order
/// beforehand, so results do not depend on scheduling.
fn evaluate_all<E, R>(evaluator: &E, genotypes: Vec<Genotype>, rng: &mut R) -> Vec<Scored>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    let seeds: Vec<u64> = genotypes.iter().map(|_| rng.gen()).collect();
    genotypes
        .into_par_iter()
        .zip(seeds)
        .map(|(genotype, seed)| {
            let fitness = evaluator.evaluate(&genotype, seed).sanitized();
            Scored { genotype, fitness }
        })
        .collect()
}

/// Each step samples `m` mutants of the current solution and moves to the one
/// with the lowest training loss (first generated on ties).
#[allow(clippy::too_many_arguments)]
pub fn selective_walk<E, R>(
    start: Genotype,
    kind: MutationKind,
    m: usize,
    n: usize,
    evaluator: &E,
    grammar: &Grammar,
    limits: &SectionLimits,
    rng: &mut R,
) -> Result<WalkTrace>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    if m == 0 || n == 0 {
        return Err(Error::config(format!(
            "walk: neighbors (m={m}) and length (n={n}) must be positive"
        )));
    }
    let first = evaluate_all(evaluator, vec![start], rng).remove(0);
    let mut steps = vec![WalkStep {
        solution: first,
        candidates: Vec::new(),
        chosen: None,
    }];
    let mut neighbor_evaluations = 0;
    for _ in 0..n {
        let current = &steps.last().expect("start").solution.genotype;
        let mutants = (0..m)
            .map(|_| mutate(current, kind, grammar, rng, limits))
            .collect::<Result<Vec<_>>>()?;
        let candidates = evaluate_all(evaluator, mutants, rng);
        neighbor_evaluations += candidates.len();
        let fits: Vec<FitnessPair> = candidates.iter().map(|c| c.fitness).collect();
        let best = best_index(&fits).expect("m >= 1");
        steps.push(WalkStep {
            solution: candidates[best].clone(),
            candidates,
            chosen: Some(best),
        });
    }
    Ok(WalkTrace {
        kind,
        m,
        steps,
        neighbor_evaluations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvolutionParams {
    pub pop_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Population member with the lowest training loss.
    pub best: Scored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionTrace {
    pub kind: MutationKind,
    pub records: Vec<GenerationRecord>,
    pub evaluations: usize,
}

impl EvolutionTrace {
    pub fn best_train(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.best.fitness.train_loss)
            .collect()
    }
}

/// Tournament of `size` uniform draws with replacement; the lowest training loss
/// wins, earliest draw on ties.
fn tournament<R: Rng + ?Sized>(pop: &[Scored], size: usize, rng: &mut R) -> usize {
    let mut winner = rng.gen_range(0..pop.len());
    for _ in 1..size {
        let c = rng.gen_range(0..pop.len());
        if pop[c].fitness.cmp_fitness(&pop[winner].fitness).is_lt() {
            winner = c;
        }
    }
    winner
}

fn record(generation: usize, pop: &[Scored]) -> GenerationRecord {
    let fits: Vec<FitnessPair> = pop.iter().map(|s| s.fitness).collect();
    GenerationRecord {
        generation,
        best: pop[best_index(&fits).expect("non-empty population")].clone(),
    }
}

/// Generational loop with tournament selection and mutation only; the whole
/// population is replaced each generation.
#[allow(clippy::too_many_arguments)]
pub fn evolve<E, R>(
    kind: MutationKind,
    params: EvolutionParams,
    class_count: usize,
    evaluator: &E,
    grammar: &Grammar,
    limits: &SectionLimits,
    rng: &mut R,
) -> Result<EvolutionTrace>
where
    E: FitnessEvaluator + ?Sized,
    R: Rng + ?Sized,
{
    if params.pop_size < 2 {
        return Err(Error::config(format!(
            "evolution.population_size: must be at least 2, got {}",
            params.pop_size
        )));
    }
    if params.tournament_size == 0 {
        return Err(Error::config(
            "evolution.tournament_size: must be at least 1",
        ));
    }
    let initial = (0..params.pop_size)
        .map(|_| random_genotype(grammar, class_count, rng, limits))
        .collect::<Result<Vec<_>>>()?;
    let mut pop = evaluate_all(evaluator, initial, rng);
    let mut evaluations = pop.len();
    let mut records = vec![record(0, &pop)];
    for generation in 1..=params.generations {
        let offspring = (0..params.pop_size)
            .map(|_| {
                let w = tournament(&pop, params.tournament_size, rng);
                mutate(&pop[w].genotype, kind, grammar, rng, limits)
            })
            .collect::<Result<Vec<_>>>()?;
        pop = evaluate_all(evaluator, offspring, rng);
        evaluations += pop.len();
        records.push(record(generation, &pop));
    }
    Ok(EvolutionTrace {
        kind,
        records,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{smooth_target, RuggedSurrogate, SmoothSurrogate};
    use crate::mutation::is_neighbor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn start(seed: u64) -> Genotype {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_genotype(&Grammar::default(), 10, &mut rng, &SectionLimits::default()).unwrap()
    }

    #[test]
    fn walk_shape_and_evaluation_count() {
        let calls = AtomicUsize::new(0);
        let eval = |g: &Genotype, s: u64| {
            calls.fetch_add(1, Ordering::Relaxed);
            RuggedSurrogate.evaluate(g, s)
        };
        let gr = Grammar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = selective_walk(
            start(1),
            MutationKind::Parameters,
            3,
            30,
            &eval,
            &gr,
            &SectionLimits::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(w.train_series().len(), 31);
        assert_eq!(w.test_series().len(), 31);
        assert_eq!(w.neighbor_evaluations, 90);
        assert_eq!(calls.load(Ordering::Relaxed), 91);
        for pair in w.steps.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            assert!(is_neighbor(
                &prev.solution.genotype,
                &next.solution.genotype,
                w.kind,
                &gr
            ));
            for c in &next.candidates {
                assert!(next.solution.fitness.train_loss <= c.fitness.train_loss);
            }
        }
    }

    #[test]
    fn walk_on_smooth_mostly_descends() {
        // 10 walks per master seed, steps pooled per seed
        let gr = Grammar::default();
        let limits = SectionLimits::default();
        let eval = SmoothSurrogate::default();
        for seed in 1..=20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut down = 0;
            for _ in 0..10 {
                let s = random_genotype(&gr, 10, &mut rng, &limits).unwrap();
                let w = selective_walk(
                    s,
                    MutationKind::Parameters,
                    3,
                    30,
                    &eval,
                    &gr,
                    &limits,
                    &mut rng,
                )
                .unwrap();
                down += w.train_series().windows(2).filter(|p| p[1] <= p[0]).count();
            }
            assert!(down as f64 >= 0.8 * 300.0, "seed {seed}: {down}/300");
        }
    }

    #[test]
    fn evolution_counts_and_zero_generations() {
        let gr = Grammar::default();
        let limits = SectionLimits::default();
        let params = EvolutionParams {
            pop_size: 10,
            generations: 20,
            tournament_size: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = evolve(
            MutationKind::Topology,
            params,
            10,
            &RuggedSurrogate,
            &gr,
            &limits,
            &mut rng,
        )
        .unwrap();
        assert_eq!(t.records.len(), 21);
        assert_eq!(t.evaluations, 210);

        let p0 = EvolutionParams {
            generations: 0,
            ..params
        };
        let t = evolve(
            MutationKind::Learning,
            p0,
            10,
            &RuggedSurrogate,
            &gr,
            &limits,
            &mut rng,
        )
        .unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.evaluations, 10);

        let bad = EvolutionParams {
            pop_size: 1,
            ..params
        };
        assert!(evolve(
            MutationKind::Learning,
            bad,
            10,
            &RuggedSurrogate,
            &gr,
            &limits,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn test_losses_never_steer() {
        let gr = Grammar::default();
        let limits = SectionLimits::default();
        let honest = SmoothSurrogate::default();
        let corrupt = |g: &Genotype, s: u64| {
            let mut f = honest.evaluate(g, s);
            f.test_loss = 1e6 - f.test_loss;
            f
        };
        let run = |e: &dyn FitnessEvaluator| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            selective_walk(
                start(2),
                MutationKind::Topology,
                3,
                15,
                e,
                &gr,
                &limits,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(&honest);
        let b = run(&corrupt);
        let ids = |w: &WalkTrace| {
            w.steps
                .iter()
                .map(|s| s.solution.genotype.id)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
        assert_eq!(a.train_series(), b.train_series());
    }

    #[test]
    fn topology_moves_leave_the_smooth_optimum() {
        let gr = Grammar::default();
        let t = smooth_target(&gr, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = selective_walk(
            t,
            MutationKind::Topology,
            3,
            5,
            &SmoothSurrogate::default(),
            &gr,
            &SectionLimits::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(w.train_series()[0], 0.0);
        // any add or delete moves a section count off target
        assert!(w.train_series()[1] > 0.0);
    }
}
