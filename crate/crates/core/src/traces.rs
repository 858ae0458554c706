//! Trace files on disk: per-walk and per-run CSVs, genotype logs and
//! manifests, plus readers and re-checks of the logged protocol.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Backend;
use crate::error::{Error, Result};
use crate::evaluator::FitnessPair;
use crate::grammar::{parse_genotype_log, Genotype, GenotypeId, Grammar};
use crate::mutation::{is_neighbor, MutationKind};
use crate::walks::{EvolutionTrace, Scored, WalkTrace};

pub const WALKS_DIR: &str = "walks";
pub const EVOLUTION_DIR: &str = "evolution";
pub const MEASURES_DIR: &str = "measures";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkRow {
    pub step: usize,
    pub genotype_id: GenotypeId,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub step: usize,
    pub candidate: usize,
    pub genotype_id: GenotypeId,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub chosen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub generation: usize,
    pub genotype_id: GenotypeId,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

impl WalkRow {
    pub fn fitness(&self) -> FitnessPair {
        FitnessPair {
            train_loss: self.train_loss,
            test_loss: self.test_loss,
            train_accuracy: self.train_acc,
            test_accuracy: self.test_acc,
        }
    }
}

impl CandidateRow {
    pub fn fitness(&self) -> FitnessPair {
        FitnessPair {
            train_loss: self.train_loss,
            test_loss: self.test_loss,
            train_accuracy: self.train_acc,
            test_accuracy: self.test_acc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkMeta {
    pub id: usize,
    pub seed: u64,
    pub steps: usize,
    /// Evaluations of sampled neighbors; the start solution is counted apart.
    pub neighbor_evaluations: usize,
    pub start_evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub id: usize,
    pub seed: u64,
    pub generations: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalksManifest {
    pub dataset: String,
    pub mutation: MutationKind,
    pub evaluator: Backend,
    pub master_seed: u64,
    pub length: usize,
    pub neighbors: usize,
    pub walks: Vec<WalkMeta>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionManifest {
    pub dataset: String,
    pub mutation: MutationKind,
    pub evaluator: Backend,
    pub master_seed: u64,
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub runs: Vec<RunMeta>,
}

pub fn walk_stem(id: usize) -> String {
    format!("walk_{id:02}")
}

pub fn run_stem(id: usize) -> String {
    format!("run_{id:02}")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => {
            let msg = match kind {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                other => format!("{other:?}"),
            };
            Error::parse_line(path, line.unwrap_or(0), msg)
        }
    }
}

/// Writes `rows` with a header line. Floats use shortest round-trip form.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a headed CSV. Errors name the file and the 1-based line.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse_line(path, e.line(), e.to_string()))
}

fn genotype_log(genotypes: impl IntoIterator<Item = Genotype>) -> String {
    genotypes.into_iter().map(|g| g.to_text()).collect()
}

pub fn read_genotype_log(path: &Path) -> Result<Vec<Genotype>> {
    let text = read_text(path)?;
    parse_genotype_log(&text).map_err(|e| Error::parse_line(path, e.line, e.message))
}

fn row_of(step: usize, s: &Scored) -> WalkRow {
    let f = &s.fitness;
    WalkRow {
        step,
        genotype_id: s.genotype.id,
        train_loss: f.train_loss,
        test_loss: f.test_loss,
        train_acc: f.train_accuracy,
        test_acc: f.test_accuracy,
    }
}

/// Writes `walk_XX.csv`, `walk_XX.genotypes` and the candidate pair of files.
pub fn write_walk(dir: &Path, id: usize, trace: &WalkTrace) -> Result<()> {
    let stem = walk_stem(id);
    let rows: Vec<WalkRow> = trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| row_of(t, &s.solution))
        .collect();
    write_csv(&dir.join(format!("{stem}.csv")), &rows)?;
    write_text(
        &dir.join(format!("{stem}.genotypes")),
        &genotype_log(trace.steps.iter().map(|s| s.solution.genotype.clone())),
    )?;
    let mut cands = Vec::new();
    let mut cand_genotypes = Vec::new();
    for (t, s) in trace.steps.iter().enumerate() {
        for (j, c) in s.candidates.iter().enumerate() {
            let r = row_of(t, c);
            cands.push(CandidateRow {
                step: r.step,
                candidate: j,
                genotype_id: r.genotype_id,
                train_loss: r.train_loss,
                test_loss: r.test_loss,
                train_acc: r.train_acc,
                test_acc: r.test_acc,
                chosen: s.chosen == Some(j),
            });
            cand_genotypes.push(c.genotype.clone());
        }
    }
    write_csv(&dir.join(format!("{stem}_candidates.csv")), &cands)?;
    write_text(
        &dir.join(format!("{stem}_candidates.genotypes")),
        &genotype_log(cand_genotypes),
    )
}

pub fn write_run(dir: &Path, id: usize, trace: &EvolutionTrace) -> Result<()> {
    let stem = run_stem(id);
    let rows: Vec<GenerationRow> = trace
        .records
        .iter()
        .map(|r| {
            let w = row_of(r.generation, &r.best);
            GenerationRow {
                generation: w.step,
                genotype_id: w.genotype_id,
                train_loss: w.train_loss,
                test_loss: w.test_loss,
                train_acc: w.train_acc,
                test_acc: w.test_acc,
            }
        })
        .collect();
    write_csv(&dir.join(format!("{stem}.csv")), &rows)?;
    write_text(
        &dir.join(format!("{stem}.genotypes")),
        &genotype_log(trace.records.iter().map(|r| r.best.genotype.clone())),
    )
}

/// Walk CSVs in `dir` (candidate files excluded), sorted by name.
pub fn walk_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("walk_") && name.ends_with(".csv") && !name.ends_with("_candidates.csv")
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// A walk as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoggedWalk {
    pub csv: PathBuf,
    pub rows: Vec<WalkRow>,
    pub genotypes: Vec<Genotype>,
    pub candidates: Vec<CandidateRow>,
    pub candidate_genotypes: Vec<Genotype>,
}

impl LoggedWalk {
    pub fn train_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }

    pub fn test_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.test_loss).collect()
    }
}

fn sibling(csv: &Path, suffix: &str) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    csv.with_file_name(format!("{stem}{suffix}"))
}

/// Reads only the walk CSV; enough for the measures.
pub fn read_walk_rows(csv: &Path) -> Result<Vec<WalkRow>> {
    let rows: Vec<WalkRow> = read_csv(csv)?;
    for (i, r) in rows.iter().enumerate() {
        if r.step != i {
            return Err(Error::parse_line(
                csv,
                i + 2,
                format!("expected step {i}, found {}", r.step),
            ));
        }
    }
    Ok(rows)
}

/// Reads a walk CSV and its three sidecar files.
pub fn read_walk(csv: &Path) -> Result<LoggedWalk> {
    let rows = read_walk_rows(csv)?;
    let genotypes = read_genotype_log(&sibling(csv, ".genotypes"))?;
    let candidates: Vec<CandidateRow> = read_csv(&sibling(csv, "_candidates.csv"))?;
    let candidate_genotypes = read_genotype_log(&sibling(csv, "_candidates.genotypes"))?;
    Ok(LoggedWalk {
        csv: csv.to_path_buf(),
        rows,
        genotypes,
        candidates,
        candidate_genotypes,
    })
}

/// Re-checks a logged walk: ids and counts agree across files, each step is a
/// legal neighbor of the previous one, the chosen candidate has the lowest
/// training loss of its sample, and exactly `m` candidates were evaluated per step.
pub fn check_walk(
    w: &LoggedWalk,
    kind: MutationKind,
    m: usize,
    grammar: &Grammar,
) -> std::result::Result<(), String> {
    let name = w.csv.display();
    if w.rows.len() != w.genotypes.len() {
        return Err(format!(
            "{name}: {} rows but {} genotypes",
            w.rows.len(),
            w.genotypes.len()
        ));
    }
    if w.candidates.len() != w.candidate_genotypes.len() {
        return Err(format!(
            "{name}: candidate rows and genotypes differ in count"
        ));
    }
    for (r, g) in w.rows.iter().zip(&w.genotypes) {
        if r.genotype_id != g.id {
            return Err(format!("{name}: step {} id mismatch", r.step));
        }
    }
    let n = w.rows.len().saturating_sub(1);
    if w.candidates.len() != n * m {
        return Err(format!(
            "{name}: {} candidate evaluations, expected {}",
            w.candidates.len(),
            n * m
        ));
    }
    for t in 1..=n {
        let prev = &w.genotypes[t - 1];
        let cur = &w.genotypes[t];
        if !is_neighbor(prev, cur, kind, grammar) {
            return Err(format!(
                "{name}: step {t} is not a {kind} neighbor of step {}",
                t - 1
            ));
        }
        let lo = (t - 1) * m;
        let sample = &w.candidates[lo..lo + m];
        if sample.iter().any(|c| c.step != t) {
            return Err(format!(
                "{name}: candidate block for step {t} is misaligned"
            ));
        }
        let chosen: Vec<&CandidateRow> = sample.iter().filter(|c| c.chosen).collect();
        let [c] = chosen[..] else {
            return Err(format!(
                "{name}: step {t} has {} chosen candidates",
                chosen.len()
            ));
        };
        if c.genotype_id != w.rows[t].genotype_id || c.train_loss != w.rows[t].train_loss {
            return Err(format!(
                "{name}: step {t} does not match its chosen candidate"
            ));
        }
        if sample
            .iter()
            .any(|o| o.fitness().cmp_fitness(&c.fitness()).is_lt())
        {
            return Err(format!(
                "{name}: step {t} chose a candidate that is not the best"
            ));
        }
        for (j, g) in w.candidate_genotypes[lo..lo + m].iter().enumerate() {
            if g.id != sample[j].genotype_id || g.parent != Some(prev.id) {
                return Err(format!(
                    "{name}: candidate {j} of step {t} has wrong lineage"
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::RuggedSurrogate;
    use crate::grammar::{random_genotype, SectionLimits};
    use crate::walks::selective_walk;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn walk(kind: MutationKind) -> WalkTrace {
        let gr = Grammar::default();
        let lim = SectionLimits::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let start = random_genotype(&gr, 10, &mut rng, &lim).unwrap();
        selective_walk(start, kind, 3, 6, &RuggedSurrogate, &gr, &lim, &mut rng).unwrap()
    }

    #[test]
    fn walk_files_round_trip_and_check() {
        let dir = tempfile::tempdir().unwrap();
        let t = walk(MutationKind::Topology);
        write_walk(dir.path(), 3, &t).unwrap();
        let files = walk_files(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let w = read_walk(&files[0]).unwrap();
        assert_eq!(w.train_series(), t.train_series());
        assert_eq!(w.test_series(), t.test_series());
        assert_eq!(w.candidates.len(), 18);
        assert!(w
            .genotypes
            .iter()
            .zip(&t.steps)
            .all(|(g, s)| *g == s.solution.genotype));
        check_walk(&w, MutationKind::Topology, 3, &Grammar::default()).unwrap();
        assert!(check_walk(&w, MutationKind::Learning, 3, &Grammar::default()).is_err());
    }

    #[test]
    fn check_catches_a_wrong_choice() {
        let dir = tempfile::tempdir().unwrap();
        write_walk(dir.path(), 0, &walk(MutationKind::Parameters)).unwrap();
        let mut w = read_walk(&dir.path().join("walk_00.csv")).unwrap();
        let c = w
            .candidates
            .iter_mut()
            .find(|c| c.step == 2 && c.chosen)
            .unwrap();
        c.train_loss = 2.0;
        w.rows[2].train_loss = 2.0;
        let e = check_walk(&w, MutationKind::Parameters, 3, &Grammar::default()).unwrap_err();
        assert!(e.contains("not the best"), "{e}");
    }

    #[test]
    fn corrupted_row_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("walk_00.csv");
        write_csv(
            &p,
            &[WalkRow {
                step: 0,
                genotype_id: GenotypeId(1),
                train_loss: 0.5,
                test_loss: 0.25,
                train_acc: 0.5,
                test_acc: 0.75,
            }],
        )
        .unwrap();
        let mut text = read_text(&p).unwrap();
        text.push_str("1,0000000000000002,zero,0.1,0.2,0.3\n");
        write_text(&p, &text).unwrap();
        let e = read_walk_rows(&p).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let msg = e.to_string();
        assert!(msg.contains("walk_00.csv:3"), "{msg}");
    }
}
