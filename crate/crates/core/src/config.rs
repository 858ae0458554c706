//! Experiment configuration: one JSON document whose defaults are the
//! published run parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluator::TrainSettings;
use crate::grammar::SectionLimits;
use crate::measures::{STEPS, THRESHOLD};
use crate::mutation::MutationKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Cnn,
    Smooth,
    Rugged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// IDX files. With `test_images`/`test_labels` the two pools are
    /// subsampled separately, otherwise train and test come from one pool.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_labels: Option<PathBuf>,
    },
    /// Generated blob images; `per_class` sets the training size.
    Synthetic {
        classes: usize,
        per_class: usize,
        height: usize,
        width: usize,
        #[serde(default = "one")]
        channels: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub source: DataSource,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

fn default_train_size() -> usize {
    2000
}

fn default_test_size() -> usize {
    1000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    pub count: usize,
    pub length: usize,
    pub neighbors: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            count: 10,
            length: 30,
            neighbors: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub runs: usize,
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            runs: 10,
            population_size: 10,
            generations: 20,
            tournament_size: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub steps: Vec<usize>,
    pub threshold: f64,
    /// Also compute entropy curves on the test series.
    pub entropy_on_test: bool,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            steps: STEPS.to_vec(),
            threshold: THRESHOLD,
            entropy_on_test: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub evaluator: Backend,
    pub datasets: Vec<DatasetConfig>,
    pub mutations: Vec<MutationKind>,
    pub walk: WalkConfig,
    pub evolution: EvolutionConfig,
    pub training: TrainSettings,
    pub limits: SectionLimits,
    pub measures: MeasureConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            evaluator: Backend::Cnn,
            datasets: Vec::new(),
            mutations: MutationKind::ALL.to_vec(),
            walk: WalkConfig::default(),
            evolution: EvolutionConfig::default(),
            training: TrainSettings::default(),
            limits: SectionLimits::default(),
            measures: MeasureConfig::default(),
        }
    }
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::config(format!("{field}: must be at least 1")))
    } else {
        Ok(())
    }
}

impl Config {
    /// Reads and validates a config file. Relative dataset paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Config = serde_json::from_str(&text).map_err(|e| {
            Error::config(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.check()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            if let DataSource::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } = &mut d.source
            {
                fix(images);
                fix(labels);
                test_images.iter_mut().for_each(fix);
                test_labels.iter_mut().for_each(fix);
            }
        }
    }

    /// Field-level validation; file existence is checked here too so a
    /// missing dataset is a configuration error.
    pub fn check(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::config("datasets: at least one dataset is required"));
        }
        if self.mutations.is_empty() {
            return Err(Error::config(
                "mutations: at least one mutation kind is required",
            ));
        }
        for (i, d) in self.datasets.iter().enumerate() {
            let field = format!("datasets[{i}]");
            if d.name.is_empty() || d.name.contains(['/', '\\']) || d.name.starts_with('.') {
                return Err(Error::config(format!(
                    "{field}.name: must be a non-empty plain directory name, got {:?}",
                    d.name
                )));
            }
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::config(format!(
                    "{field}.name: duplicate name {:?}",
                    d.name
                )));
            }
            match &d.source {
                DataSource::Idx {
                    images,
                    labels,
                    test_images,
                    test_labels,
                } => {
                    if test_images.is_some() != test_labels.is_some() {
                        return Err(Error::config(format!(
                            "{field}.source: test_images and test_labels must be given together"
                        )));
                    }
                    let files = [("images", Some(images)), ("labels", Some(labels))]
                        .into_iter()
                        .chain([
                            ("test_images", test_images.as_ref()),
                            ("test_labels", test_labels.as_ref()),
                        ]);
                    for (key, p) in files {
                        if let Some(p) = p {
                            if !p.is_file() {
                                return Err(Error::config(format!(
                                    "{field}.source.{key}: file not found: {}",
                                    p.display()
                                )));
                            }
                        }
                    }
                    positive(&format!("{field}.train_size"), d.train_size)?;
                    positive(&format!("{field}.test_size"), d.test_size)?;
                }
                DataSource::Synthetic {
                    classes,
                    per_class,
                    height,
                    width,
                    channels,
                } => {
                    if *classes < 2 {
                        return Err(Error::config(format!(
                            "{field}.source.classes: must be at least 2, got {classes}"
                        )));
                    }
                    positive(&format!("{field}.source.per_class"), *per_class)?;
                    positive(&format!("{field}.source.height"), *height)?;
                    positive(&format!("{field}.source.width"), *width)?;
                    positive(&format!("{field}.source.channels"), *channels)?;
                }
            }
        }
        positive("walk.count", self.walk.count)?;
        positive("walk.length", self.walk.length)?;
        positive("walk.neighbors", self.walk.neighbors)?;
        positive("evolution.runs", self.evolution.runs)?;
        if self.evolution.population_size < 2 {
            return Err(Error::config(format!(
                "evolution.population_size: must be at least 2 for tournament selection, got {}",
                self.evolution.population_size
            )));
        }
        positive("evolution.tournament_size", self.evolution.tournament_size)?;
        positive("training.epochs", self.training.epochs)?;
        positive("training.batch_size", self.training.batch_size)?;
        self.limits.check()?;
        if self.measures.steps.is_empty() || self.measures.steps.contains(&0) {
            return Err(Error::config(
                "measures.steps: must be a non-empty list of positive lags",
            ));
        }
        if !self.measures.threshold.is_finite() {
            return Err(Error::config("measures.threshold: must be finite"));
        }
        Ok(())
    }
}

/// Independent per-run seed from the master seed and a run label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}
