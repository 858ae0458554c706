//! Measure reports: reads walk traces back, computes autocorrelation and
//! entropy per cell and emits CSV and JSON files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::MeasureConfig;
use crate::error::{Error, Result};
use crate::measures::{
    autocorrelation_report, emr_report, AutocorrelationReport, Classification, EntropyReport,
    Split, SCHEDULE,
};
use crate::mutation::MutationKind;
use crate::traces::{
    create_dir, read_csv, read_json, read_walk_rows, walk_files, write_csv, write_json,
    CandidateRow, GenerationRow, WalkRow, WalksManifest, EVOLUTION_DIR, MANIFEST, MEASURES_DIR,
    WALKS_DIR,
};

pub const AUTOCORRELATION_CSV: &str = "autocorrelation.csv";
pub const BOXPLOT_CSV: &str = "autocorrelation_boxplot.csv";
pub const ENTROPY_CSV: &str = "entropy.csv";
pub const H_CURVE_CSV: &str = "h_curve.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const RF_TABLE_CSV: &str = "rf_table.csv";

/// Row order of the R_f table for the four benchmark datasets; other names follow alphabetically.
pub const TABLE_DATASETS: [&str; 4] = ["mnist", "fmnist", "cifar10", "svhn"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutocorrelationRow {
    pub config: String,
    pub split: Split,
    pub k: usize,
    pub walk_id: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxplotRow {
    pub config: String,
    pub split: Split,
    pub k: usize,
    /// Walks with a defined ρ̂(k).
    pub walks: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
    pub classification: Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyRow {
    pub config: String,
    pub split: Split,
    pub epsilon_index: usize,
    pub epsilon_fraction: f64,
    pub walk_id: usize,
    pub epsilon: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HCurveRow {
    pub config: String,
    pub split: Split,
    pub epsilon_index: usize,
    pub epsilon_fraction: f64,
    pub h_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfRow {
    pub dataset: String,
    pub learning: Option<f64>,
    pub parameters: Option<f64>,
    pub topology: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub k: usize,
    pub classification: Classification,
    pub median: Option<f64>,
    pub walks: usize,
    pub undefined: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySummary {
    pub r_f: f64,
    pub h_bar: [f64; 9],
    pub epsilon_star_median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub config: String,
    pub dataset: String,
    pub mutation: Option<MutationKind>,
    pub walks: usize,
    pub threshold: f64,
    pub train: Vec<StepSummary>,
    pub test: Vec<StepSummary>,
    pub entropy_train: EntropySummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_test: Option<EntropySummary>,
}

impl CellSummary {
    pub fn steps(&self, split: Split) -> &[StepSummary] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn r_f(&self) -> f64 {
        self.entropy_train.r_f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
    pub rf_table: Vec<RfRow>,
}

/// A directory holding a `walks/` subdirectory with at least one walk CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub dir: PathBuf,
    pub config: String,
    pub dataset: String,
    pub mutation: Option<MutationKind>,
    pub walk_csvs: Vec<PathBuf>,
}

fn visit(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.file_name().is_some_and(|n| n == WALKS_DIR) {
        out.push(dir.to_path_buf());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subdirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry
            .file_type()
            .map_err(|e| Error::io(entry.path(), e))?
            .is_dir()
        {
            subdirs.push(entry.path());
        }
    }
    subdirs.sort();
    for d in subdirs {
        visit(&d, out)?;
    }
    Ok(())
}

/// Finds every cell below `root` (or `root` itself). A missing or
/// trace-free directory is a configuration error.
pub fn discover_cells(root: &Path) -> Result<Vec<Cell>> {
    if !root.is_dir() {
        return Err(Error::config(format!(
            "trace directory {} does not exist",
            root.display()
        )));
    }
    let mut walk_dirs = Vec::new();
    visit(root, &mut walk_dirs)?;
    let mut cells = Vec::new();
    for wd in walk_dirs {
        let walk_csvs = walk_files(&wd)?;
        if walk_csvs.is_empty() {
            continue;
        }
        let dir = wd.parent().unwrap_or(Path::new(".")).to_path_buf();
        let manifest = wd.join(MANIFEST);
        let (dataset, mutation) = if manifest.is_file() {
            let m: WalksManifest = read_json(&manifest)?;
            (m.dataset, Some(m.mutation))
        } else {
            let name = |p: Option<&Path>| {
                p.and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            };
            (name(dir.parent()), name(Some(&dir)).parse().ok())
        };
        let config = match mutation {
            Some(k) => format!("{dataset}/{k}"),
            None => dataset.clone(),
        };
        cells.push(Cell {
            dir,
            config,
            dataset,
            mutation,
            walk_csvs,
        });
    }
    if cells.is_empty() {
        return Err(Error::config(format!(
            "no walk traces (walks/walk_XX.csv) found under {}",
            root.display()
        )));
    }
    Ok(cells)
}

fn step_summaries(r: &AutocorrelationReport) -> Vec<StepSummary> {
    r.steps
        .iter()
        .map(|s| StepSummary {
            k: s.k,
            classification: s.classification,
            median: s.boxplot.map(|b| b.median),
            walks: s.values.len(),
            undefined: s.undefined.clone(),
        })
        .collect()
}

fn entropy_summary(e: &EntropyReport) -> EntropySummary {
    EntropySummary {
        r_f: e.r_f,
        h_bar: e.h_bar,
        epsilon_star_median: crate::measures::Boxplot::of(&e.epsilon_star).map(|b| b.median),
    }
}

/// Computes and writes the reports of one cell into `<cell>/measures/`.
pub fn measure_cell(cell: &Cell, cfg: &MeasureConfig) -> Result<CellSummary> {
    let walks: Vec<Vec<WalkRow>> = cell
        .walk_csvs
        .iter()
        .map(|p| read_walk_rows(p))
        .collect::<Result<_>>()?;
    let series = |split: Split| -> Vec<Vec<f64>> {
        walks
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|r| match split {
                        Split::Train => r.train_loss,
                        Split::Test => r.test_loss,
                    })
                    .collect()
            })
            .collect()
    };
    let mut ac_rows = Vec::new();
    let mut box_rows = Vec::new();
    let mut entropy_rows = Vec::new();
    let mut curve_rows = Vec::new();
    let mut reports = Vec::new();
    let mut entropies = Vec::new();
    for split in Split::ALL {
        let s = series(split);
        let rep = autocorrelation_report(&s, &cfg.steps, cfg.threshold);
        for st in &rep.steps {
            for &(walk_id, value) in &st.values {
                ac_rows.push(AutocorrelationRow {
                    config: cell.config.clone(),
                    split,
                    k: st.k,
                    walk_id,
                    value,
                });
            }
            box_rows.push(BoxplotRow {
                config: cell.config.clone(),
                split,
                k: st.k,
                walks: st.values.len(),
                min: st.boxplot.map(|b| b.min),
                q1: st.boxplot.map(|b| b.q1),
                median: st.boxplot.map(|b| b.median),
                q3: st.boxplot.map(|b| b.q3),
                max: st.boxplot.map(|b| b.max),
                classification: st.classification,
            });
        }
        reports.push(rep);
        if split == Split::Train || cfg.entropy_on_test {
            let e = emr_report(&s);
            for (walk_id, curve) in e.h_curve.iter().enumerate() {
                for (i, &value) in curve.iter().enumerate() {
                    entropy_rows.push(EntropyRow {
                        config: cell.config.clone(),
                        split,
                        epsilon_index: i,
                        epsilon_fraction: SCHEDULE[i],
                        walk_id,
                        epsilon: SCHEDULE[i] * e.epsilon_star[walk_id],
                        value,
                    });
                }
            }
            for (i, &h_bar) in e.h_bar.iter().enumerate() {
                curve_rows.push(HCurveRow {
                    config: cell.config.clone(),
                    split,
                    epsilon_index: i,
                    epsilon_fraction: SCHEDULE[i],
                    h_bar,
                });
            }
            entropies.push(entropy_summary(&e));
        }
    }
    let dir = cell.dir.join(MEASURES_DIR);
    create_dir(&dir)?;
    write_csv(&dir.join(AUTOCORRELATION_CSV), &ac_rows)?;
    write_csv(&dir.join(BOXPLOT_CSV), &box_rows)?;
    write_csv(&dir.join(ENTROPY_CSV), &entropy_rows)?;
    write_csv(&dir.join(H_CURVE_CSV), &curve_rows)?;
    let mut entropies = entropies.into_iter();
    let summary = CellSummary {
        config: cell.config.clone(),
        dataset: cell.dataset.clone(),
        mutation: cell.mutation,
        walks: walks.len(),
        threshold: cfg.threshold,
        train: step_summaries(&reports[0]),
        test: step_summaries(&reports[1]),
        entropy_train: entropies.next().expect("train entropy"),
        entropy_test: entropies.next(),
    };
    write_json(&dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

fn table_rank(name: &str) -> (usize, String) {
    let lower = name.to_ascii_lowercase();
    let rank = TABLE_DATASETS
        .iter()
        .position(|d| *d == lower)
        .unwrap_or(TABLE_DATASETS.len());
    (rank, lower)
}

/// One row per dataset, one column per mutation kind; missing cells stay empty.
pub fn rf_table(cells: &[CellSummary]) -> Vec<RfRow> {
    let mut names: Vec<&str> = cells.iter().map(|c| c.dataset.as_str()).collect();
    names.sort_by_key(|n| table_rank(n));
    names.dedup();
    names
        .into_iter()
        .map(|d| {
            let get = |k: MutationKind| {
                cells
                    .iter()
                    .find(|c| c.dataset == d && c.mutation == Some(k))
                    .map(|c| c.r_f())
            };
            RfRow {
                dataset: d.to_string(),
                learning: get(MutationKind::Learning),
                parameters: get(MutationKind::Parameters),
                topology: get(MutationKind::Topology),
            }
        })
        .collect()
}

/// Measures every cell under `root` and writes `rf_table.csv` and a
/// consolidated `summary.json` at `root`.
pub fn measure_tree(root: &Path, cfg: &MeasureConfig) -> Result<Summary> {
    let cells = discover_cells(root)?;
    let summaries = cells
        .iter()
        .map(|c| measure_cell(c, cfg))
        .collect::<Result<Vec<_>>>()?;
    let table = rf_table(&summaries);
    write_csv(&root.join(RF_TABLE_CSV), &table)?;
    let summary = Summary {
        cells: summaries,
        rf_table: table,
    };
    write_json(&root.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

/// Parses every CSV and JSON file the tool writes below `root`. Returns the
/// number of files checked.
pub fn verify_outputs(root: &Path) -> Result<usize> {
    let mut checked = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let parent = dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let is_top = dir == root;
            match (parent, name) {
                (WALKS_DIR, n) if n.ends_with("_candidates.csv") => {
                    read_csv::<CandidateRow>(&path)?;
                }
                (WALKS_DIR, n) if n.ends_with(".csv") => {
                    read_walk_rows(&path)?;
                }
                (WALKS_DIR, n) if n.ends_with(".genotypes") => {
                    crate::traces::read_genotype_log(&path)?;
                }
                (WALKS_DIR, MANIFEST) => {
                    read_json::<WalksManifest>(&path)?;
                }
                (EVOLUTION_DIR, n) if n.ends_with(".csv") => {
                    read_csv::<GenerationRow>(&path)?;
                }
                (EVOLUTION_DIR, n) if n.ends_with(".genotypes") => {
                    crate::traces::read_genotype_log(&path)?;
                }
                (EVOLUTION_DIR, MANIFEST) => {
                    read_json::<crate::traces::EvolutionManifest>(&path)?;
                }
                (MEASURES_DIR, AUTOCORRELATION_CSV) => {
                    read_csv::<AutocorrelationRow>(&path)?;
                }
                (MEASURES_DIR, BOXPLOT_CSV) => {
                    read_csv::<BoxplotRow>(&path)?;
                }
                (MEASURES_DIR, ENTROPY_CSV) => {
                    read_csv::<EntropyRow>(&path)?;
                }
                (MEASURES_DIR, H_CURVE_CSV) => {
                    read_csv::<HCurveRow>(&path)?;
                }
                (MEASURES_DIR, SUMMARY_JSON) => {
                    read_json::<CellSummary>(&path)?;
                }
                (_, RF_TABLE_CSV) if is_top => {
                    read_csv::<RfRow>(&path)?;
                }
                (_, SUMMARY_JSON) if is_top => {
                    read_json::<Summary>(&path)?;
                }
                _ => continue,
            }
            checked += 1;
        }
    }
    Ok(checked)
}
