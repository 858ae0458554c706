use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use landscape_lab::report::verify_outputs;
use landscape_lab::traces::{read_walk, walk_files, GenerationRow};

const SMOOTH: &str = r#"{"seed": 5, "evaluator": "smooth",
  "datasets": [{"name": "blobs", "source": {"kind": "synthetic", "classes": 10, "per_class": 2, "height": 8, "width": 8}}]}"#;

fn cli(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_landscape-lab"));
    c.args(args).env_remove("LANDSCAPE_LAB_OUT");
    if let Some(p) = env_out {
        c.env("LANDSCAPE_LAB_OUT", p);
    }
    c.output().expect("spawn")
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn walk_writes_ten_walks_of_31_rows_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOOTH);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(cli(&["walk", "--config", s(&cfg), "--out", s(&a)], None)
        .status
        .success());
    assert!(cli(&["walk", "--config", s(&cfg), "--out", s(&b)], None)
        .status
        .success());
    for kind in ["learning", "parameters", "topology"] {
        let files = walk_files(&a.join("blobs").join(kind).join("walks")).unwrap();
        assert_eq!(files.len(), 10);
        for f in files {
            assert_eq!(read_walk(&f).unwrap().rows.len(), 31);
            let twin = b
                .join("blobs")
                .join(kind)
                .join("walks")
                .join(f.file_name().unwrap());
            assert_eq!(
                fs::read(&f).unwrap(),
                fs::read(&twin).unwrap(),
                "{}",
                f.display()
            );
        }
    }
}

#[test]
fn seed_flag_changes_the_walks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOOTH);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(cli(&["walk", "--config", s(&cfg), "--out", s(&a)], None)
        .status
        .success());
    assert!(cli(
        &["--seed", "99", "walk", "--config", s(&cfg), "--out", s(&b)],
        None
    )
    .status
    .success());
    let f = "blobs/topology/walks/walk_00.csv";
    assert_ne!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
}

#[test]
fn surrogate_evolution_is_fast_and_has_21_rows_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOOTH);
    let out = dir.path().join("o");
    let t = Instant::now();
    let o = cli(&["evolve", "--config", s(&cfg), "--out", s(&out)], None);
    let secs = t.elapsed().as_secs_f64();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(secs < 5.0, "{secs} s for 3 x 10 surrogate runs");
    for i in 0..10 {
        let p = out.join(format!("blobs/parameters/evolution/run_{i:02}.csv"));
        let rows: Vec<GenerationRow> = landscape_lab::traces::read_csv(&p).unwrap();
        assert_eq!(rows.len(), 21);
        assert_eq!(
            rows.iter().map(|r| r.generation).collect::<Vec<_>>(),
            (0..=20).collect::<Vec<_>>()
        );
    }
}

#[test]
fn configuration_errors_exit_2_with_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cases = [
        (
            r#"{"evolution": {"population_size": 1}, "datasets": [{"name": "b", "source": {"kind": "synthetic", "classes": 2, "per_class": 2, "height": 4, "width": 4}}]}"#,
            "evolution.population_size",
        ),
        (
            r#"{"datasets": [{"name": "m", "source": {"kind": "idx", "images": "missing-images.gz", "labels": "missing-labels.gz"}}]}"#,
            "datasets[0].source.images",
        ),
        (r#"{"walk": {"neighbours": 3}}"#, "neighbours"),
        (r#"{"datasets": []}"#, "datasets"),
    ];
    for (text, field) in cases {
        let cfg = config(dir.path(), text);
        let o = cli(&["evolve", "--config", s(&cfg), "--out", s(&out)], None);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains(field), "{}", stderr(&o));
    }
    let o = cli(
        &["walk", "--config", s(&dir.path().join("nope.json"))],
        None,
    );
    assert_eq!(o.status.code(), Some(3));
    let o = cli(&["walk"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn measure_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(cli(&["measure", s(&empty)], None).status.code(), Some(2));

    let cfg = config(dir.path(), SMOOTH);
    let out = dir.path().join("o");
    assert!(cli(&["walk", "--config", s(&cfg), "--out", s(&out)], None)
        .status
        .success());
    let victim = out.join("blobs/learning/walks/walk_04.csv");
    let text = fs::read_to_string(&victim).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[7] = "6,0000000000000001,1.5,oops,0.1,0.1";
    fs::write(&victim, lines.join("\n") + "\n").unwrap();
    let o = cli(&["measure", s(&out)], None);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr(&o);
    assert!(e.contains("walk_04.csv:8"), "{e}");
}

#[test]
fn env_var_overrides_out_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOOTH);
    let flag = dir.path().join("flag");
    let env = dir.path().join("env");
    assert!(cli(
        &["walk", "--config", s(&cfg), "--out", s(&flag)],
        Some(&env)
    )
    .status
    .success());
    assert!(env.join("blobs/learning/walks/walk_00.csv").is_file());
    assert!(!flag.exists());
}

#[test]
fn reproduce_outputs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMOOTH);
    let out = dir.path().join("o");
    let o = cli(
        &[
            "--jobs",
            "2",
            "reproduce",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
        ],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for kind in ["learning", "parameters", "topology"] {
        for f in [
            "autocorrelation.csv",
            "autocorrelation_boxplot.csv",
            "entropy.csv",
            "h_curve.csv",
            "summary.json",
        ] {
            assert!(
                out.join("blobs")
                    .join(kind)
                    .join("measures")
                    .join(f)
                    .is_file(),
                "{kind}/{f}"
            );
        }
    }
    assert!(out.join("rf_table.csv").is_file() && out.join("summary.json").is_file());
    // 3 cells × (10 walks × 4 files + manifest, 10 runs × 2 files + manifest, 5 reports) + 2 top-level files
    assert_eq!(verify_outputs(&out).unwrap(), 3 * (41 + 21 + 5) + 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains("R_f=")).count(), 3);
}
