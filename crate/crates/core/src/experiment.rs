//! Runs walks and evolution for each (dataset, mutation) cell and writes the
//! traces under `<out>/<dataset>/<mutation>/`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{derive_seed, Backend, Config, DataSource, DatasetConfig};
use crate::data::{load_idx, make_split, make_split_pools, synthetic, DatasetSplit, RawDataset};
use crate::error::{Error, Result};
use crate::evaluator::{CnnEvaluator, FitnessEvaluator, RuggedSurrogate, SmoothSurrogate};
use crate::grammar::{random_genotype, Grammar};
use crate::mutation::MutationKind;
use crate::traces::{
    create_dir, run_stem, walk_stem, write_json, write_run, write_walk, EvolutionManifest, RunMeta,
    WalkMeta, WalksManifest, EVOLUTION_DIR, MANIFEST, WALKS_DIR,
};
use crate::walks::{evolve, selective_walk, EvolutionParams};

enum Pools {
    One(RawDataset),
    Two(RawDataset, RawDataset),
    Synthetic,
}

/// A configured dataset with its pools loaded once.
pub struct Dataset {
    pub config: DatasetConfig,
    pools: Pools,
}

impl Dataset {
    pub fn load(config: &DatasetConfig) -> Result<Dataset> {
        let pools = match &config.source {
            DataSource::Idx {
                images,
                labels,
                test_images: Some(ti),
                test_labels: Some(tl),
            } => Pools::Two(load_idx(images, labels)?, load_idx(ti, tl)?),
            DataSource::Idx { images, labels, .. } => Pools::One(load_idx(images, labels)?),
            DataSource::Synthetic { .. } => Pools::Synthetic,
        };
        Ok(Dataset {
            config: config.clone(),
            pools,
        })
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn class_count(&self) -> usize {
        match (&self.pools, &self.config.source) {
            (Pools::One(r), _) => r.class_count(),
            (Pools::Two(a, b), _) => a.class_count().max(b.class_count()),
            (Pools::Synthetic, DataSource::Synthetic { classes, .. }) => *classes,
            (Pools::Synthetic, _) => unreachable!("synthetic pools come from a synthetic source"),
        }
    }

    /// A fresh train/test split drawn with `seed`.
    pub fn split(&self, seed: u64) -> Result<DatasetSplit> {
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = &self.config;
        let mut split = match (&self.pools, &c.source) {
            (Pools::One(r), _) => make_split(&c.name, r, c.train_size, c.test_size, rng)?,
            (Pools::Two(a, b), _) => {
                make_split_pools(&c.name, a, b, c.train_size, c.test_size, rng)?
            }
            (
                Pools::Synthetic,
                DataSource::Synthetic {
                    classes,
                    per_class,
                    height,
                    width,
                    channels,
                },
            ) => synthetic(*classes, *per_class, *height, *width, *channels, rng)?,
            (Pools::Synthetic, _) => unreachable!("synthetic pools come from a synthetic source"),
        };
        split.name = c.name.clone();
        Ok(split)
    }
}

pub fn cell_dir(out: &Path, dataset: &str, kind: MutationKind) -> PathBuf {
    out.join(dataset).join(kind.name())
}

/// Evaluator for one run. The CNN backend trains on `split`; surrogates ignore it.
fn evaluator(
    cfg: &Config,
    grammar: &Grammar,
    ds: &Dataset,
    split_seed: u64,
) -> Result<Box<dyn FitnessEvaluator>> {
    Ok(match cfg.evaluator {
        Backend::Cnn => Box::new(CnnEvaluator {
            data: Arc::new(ds.split(split_seed)?),
            settings: cfg.training,
        }),
        Backend::Smooth => Box::new(SmoothSurrogate {
            grammar: grammar.clone(),
        }),
        Backend::Rugged => Box::new(RuggedSurrogate),
    })
}

/// Deletes files of an earlier run whose names start with `prefix`, so a
/// smaller rerun does not leave stale traces behind.
fn clear_prefixed(dir: &Path, prefix: &str) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let stale = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with(prefix));
        if stale && path.is_file() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Runs `walk.count` independent selective walks for one cell.
pub fn run_walks(
    cfg: &Config,
    ds: &Dataset,
    kind: MutationKind,
    out: &Path,
) -> Result<WalksManifest> {
    let grammar = Grammar::default();
    let dir = cell_dir(out, ds.name(), kind).join(WALKS_DIR);
    create_dir(&dir)?;
    clear_prefixed(&dir, "walk_")?;
    let class_count = ds.class_count();
    let walks = (0..cfg.walk.count)
        .into_par_iter()
        .map(|i| {
            let label = format!("{}/{kind}/walk/{i}", ds.name());
            let seed = derive_seed(cfg.seed, &label);
            let eval = evaluator(
                cfg,
                &grammar,
                ds,
                derive_seed(cfg.seed, &format!("{label}/split")),
            )?;
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let start = random_genotype(&grammar, class_count, rng, &cfg.limits)?;
            let trace = selective_walk(
                start,
                kind,
                cfg.walk.neighbors,
                cfg.walk.length,
                eval.as_ref(),
                &grammar,
                &cfg.limits,
                rng,
            )?;
            write_walk(&dir, i, &trace)?;
            eprintln!("{}/{kind}: {} done", ds.name(), walk_stem(i));
            Ok(WalkMeta {
                id: i,
                seed,
                steps: trace.steps.len(),
                neighbor_evaluations: trace.neighbor_evaluations,
                start_evaluations: 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = WalksManifest {
        dataset: ds.name().to_string(),
        mutation: kind,
        evaluator: cfg.evaluator,
        master_seed: cfg.seed,
        length: cfg.walk.length,
        neighbors: cfg.walk.neighbors,
        walks,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Runs `evolution.runs` independent evolutionary runs for one cell.
pub fn run_evolution(
    cfg: &Config,
    ds: &Dataset,
    kind: MutationKind,
    out: &Path,
) -> Result<EvolutionManifest> {
    let grammar = Grammar::default();
    let dir = cell_dir(out, ds.name(), kind).join(EVOLUTION_DIR);
    create_dir(&dir)?;
    clear_prefixed(&dir, "run_")?;
    let params = EvolutionParams {
        pop_size: cfg.evolution.population_size,
        generations: cfg.evolution.generations,
        tournament_size: cfg.evolution.tournament_size,
    };
    let runs = (0..cfg.evolution.runs)
        .into_par_iter()
        .map(|i| {
            let label = format!("{}/{kind}/evolution/{i}", ds.name());
            let seed = derive_seed(cfg.seed, &label);
            let eval = evaluator(
                cfg,
                &grammar,
                ds,
                derive_seed(cfg.seed, &format!("{label}/split")),
            )?;
            let rng = &mut ChaCha8Rng::seed_from_u64(seed);
            let trace = evolve(
                kind,
                params,
                ds.class_count(),
                eval.as_ref(),
                &grammar,
                &cfg.limits,
                rng,
            )?;
            write_run(&dir, i, &trace)?;
            eprintln!("{}/{kind}: {} done", ds.name(), run_stem(i));
            Ok(RunMeta {
                id: i,
                seed,
                generations: trace.records.len() - 1,
                evaluations: trace.evaluations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = EvolutionManifest {
        dataset: ds.name().to_string(),
        mutation: kind,
        evaluator: cfg.evaluator,
        master_seed: cfg.seed,
        population_size: params.pop_size,
        generations: params.generations,
        tournament_size: params.tournament_size,
        runs,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_datasets(cfg: &Config) -> Result<Vec<Dataset>> {
    cfg.datasets.iter().map(Dataset::load).collect()
}

/// Walks for every configured cell.
pub fn walk_all(cfg: &Config, out: &Path) -> Result<Vec<WalksManifest>> {
    let mut all = Vec::new();
    for ds in load_datasets(cfg)? {
        for &kind in &cfg.mutations {
            all.push(run_walks(cfg, &ds, kind, out)?);
        }
    }
    Ok(all)
}

/// Evolution runs for every configured cell.
pub fn evolve_all(cfg: &Config, out: &Path) -> Result<Vec<EvolutionManifest>> {
    let mut all = Vec::new();
    for ds in load_datasets(cfg)? {
        for &kind in &cfg.mutations {
            all.push(run_evolution(cfg, &ds, kind, out)?);
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DatasetConfig, WalkConfig};
    use crate::traces::{read_csv, read_walk, walk_files, GenerationRow};

    fn cfg(backend: Backend) -> Config {
        Config {
            seed: 11,
            evaluator: backend,
            datasets: vec![DatasetConfig {
                name: "blobs".into(),
                source: DataSource::Synthetic {
                    classes: 3,
                    per_class: 6,
                    height: 8,
                    width: 8,
                    channels: 1,
                },
                train_size: 2000,
                test_size: 1000,
            }],
            mutations: vec![MutationKind::Parameters],
            walk: WalkConfig {
                count: 2,
                length: 5,
                neighbors: 2,
            },
            ..Config::default()
        }
    }

    #[test]
    fn walk_cell_layout_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = cfg(Backend::Smooth);
        walk_all(&c, a.path()).unwrap();
        walk_all(&c, b.path()).unwrap();
        let dir = a.path().join("blobs/parameters/walks");
        let files = walk_files(&dir).unwrap();
        assert_eq!(files.len(), 2);
        for f in &files {
            let w = read_walk(f).unwrap();
            assert_eq!(w.rows.len(), 6);
            let other = b
                .path()
                .join("blobs/parameters/walks")
                .join(f.file_name().unwrap());
            assert_eq!(fs::read(f).unwrap(), fs::read(other).unwrap());
        }
        // walks get different seeds
        let w0 = read_walk(&files[0]).unwrap();
        let w1 = read_walk(&files[1]).unwrap();
        assert_ne!(w0.rows[0].genotype_id, w1.rows[0].genotype_id);
    }

    #[test]
    fn rerun_with_fewer_walks_drops_stale_files() {
        let out = tempfile::tempdir().unwrap();
        let mut c = cfg(Backend::Rugged);
        walk_all(&c, out.path()).unwrap();
        c.walk.count = 1;
        walk_all(&c, out.path()).unwrap();
        assert_eq!(
            walk_files(&out.path().join("blobs/parameters/walks"))
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn cnn_evolution_on_tiny_synthetic_data() {
        let out = tempfile::tempdir().unwrap();
        let mut c = cfg(Backend::Cnn);
        c.mutations = vec![MutationKind::Learning];
        c.evolution.runs = 1;
        c.evolution.population_size = 2;
        c.evolution.generations = 1;
        c.training.epochs = 1;
        let m = evolve_all(&c, out.path()).unwrap();
        assert_eq!(m[0].runs[0].evaluations, 4);
        let rows: Vec<GenerationRow> =
            read_csv(&out.path().join("blobs/learning/evolution/run_00.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.train_loss.is_finite()));
    }
}
