use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn landmarks(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_landmarks"))
        .args(args)
        .env("LANDMARKS_LOG", "off")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) {
    let o = landmarks(args);
    assert!(o.status.success(), "landmarks {args:?}: {}", stderr(&o));
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    archive: PathBuf,
    train: PathBuf,
}

fn trained() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let archive = root.join("arch");
    let train = root.join("train");
    let grid = root.join("grid.txt");
    std::fs::write(&grid, "# small grid\nc = 1, 10\ngamma = 1\n").unwrap();
    ok(&["synth", "--out", s(&archive), "--days", "3", "--cadence", "30", "--rows", "8", "--cols", "8", "--seed", "5"]);
    ok(&[
        "train", "--archive", s(&archive), "--out", s(&train), "--grid", s(&grid), "--train-size", "200", "--test-size",
        "400", "--folds", "3", "--seed", "5",
    ]);
    Fixture { _dir: dir, root, archive, train }
}

#[test]
fn train_writes_one_bundle_per_landmark_and_a_summary_row_each() {
    let f = trained();
    for lm in ["lm001", "lm002"] {
        let b = f.train.join("bundles").join(lm);
        assert!(b.join("manifest.txt").is_file());
        for r in ["high", "medium", "low", "night"] {
            assert!(b.join(format!("model_{r}.svm")).is_file());
            assert!(f.train.join("testsets").join(lm).join(format!("{r}.ftab")).is_file());
            assert!(f.train.join("cv").join(format!("{lm}_{r}.csv")).is_file());
        }
    }
    let summary = std::fs::read_to_string(f.train.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3, "{summary}");
    assert!(lines[0].starts_with("landmark,n,oa,kappa"));
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("2,"));
    let hist = std::fs::read_to_string(f.train.join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 21);
    let registry = std::fs::read_to_string(f.train.join("registry.tsv")).unwrap();
    assert!(registry.contains("masks/lm001/landcover.lmgrid"));
}

#[test]
fn predict_refuses_a_bundle_of_another_landmark() {
    let f = trained();
    let out = f.root.join("pred");
    let bundle = f.train.join("bundles").join("lm001");
    let o = landmarks(&["predict", "--archive", s(&f.archive), "--models", s(&bundle), "--out", s(&out), "--landmarks", "2"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("landmarks: error: data: WrongLandmark:"), "{err}");
}

#[test]
fn predict_then_evaluate_is_repeatable() {
    let f = trained();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let pred = f.root.join(format!("pred_{run}"));
        let eval = f.root.join(format!("eval_{run}"));
        ok(&["predict", "--archive", s(&f.archive), "--models", s(&f.train), "--out", s(&pred)]);
        ok(&["evaluate", "--predictions", s(&pred), "--archive", s(&f.archive), "--out", s(&eval)]);
        let table = std::fs::read_to_string(pred.join("predictions.tsv")).unwrap();
        assert_eq!(table.lines().count(), 1 + 2 * 3 * 48);
        reports.push((
            std::fs::read(eval.join("lm001").join("report.json")).unwrap(),
            std::fs::read(eval.join("summary.csv")).unwrap(),
            std::fs::read(pred.join("predictions.tsv")).unwrap(),
        ));
    }
    assert!(reports[0] == reports[1]);
}

#[test]
fn report_aggregates_existing_reports() {
    let f = trained();
    let out = f.root.join("agg");
    ok(&["report", "--reports", s(&f.train.join("reports")), "--out", s(&out)]);
    assert_eq!(
        std::fs::read(out.join("summary.csv")).unwrap(),
        std::fs::read(f.train.join("summary.csv")).unwrap()
    );
}

#[test]
fn usage_errors_exit_2_with_one_line() {
    for args in [
        vec!["train", "--bogus"],
        vec!["frobnicate"],
        vec!["train", "--archive", "x", "--out", "y", "--folds", "many"],
        vec!["--workers", "0", "scan", "--archive", "x", "--out", "y"],
    ] {
        let o = landmarks(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("landmarks: error: usage: Usage:"), "{err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let o = landmarks(&["train", "--archive", s(dir.path()), "--out", s(&dir.path().join("o")), "--folds", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let o = landmarks(&["scan", "--archive", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("MissingArchive"));

    std::fs::create_dir(&missing).unwrap();
    let o = landmarks(&["scan", "--archive", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("EmptyArchive"), "{}", stderr(&o));
}

#[test]
fn help_documents_every_flag() {
    let expect: [(&str, &[&str]); 6] = [
        ("synth", &["--out", "--seed", "--n-landmarks", "--days", "--cadence", "--coverage", "--contrast", "--noise", "--blob", "--cal"]),
        ("scan", &["--archive", "--out", "--landmarks", "--exclude-defaults", "--nodata-threshold"]),
        (
            "train",
            &[
                "--archive", "--cal", "--out", "--seed", "--workers", "--landmarks", "--train-size", "--test-size", "--folds",
                "--grid", "--exclude-defaults", "--tol", "--cache-mb",
            ],
        ),
        ("predict", &["--archive", "--models", "--out", "--cal", "--landmarks"]),
        ("evaluate", &["--models", "--predictions", "--archive", "--out"]),
        ("report", &["--reports", "--out"]),
    ];
    for (cmd, flags) in expect {
        let o = landmarks(&[cmd, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8_lossy(&o.stdout);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn scan_honours_the_default_exclusion_toggle() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("arch");
    ok(&["synth", "--out", s(&archive), "--days", "1", "--cadence", "360", "--rows", "4", "--cols", "4"]);
    let out = dir.path().join("scan");
    ok(&["scan", "--archive", s(&archive), "--out", s(&out), "--exclude-defaults", "false"]);
    let reg = std::fs::read_to_string(out.join("registry.tsv")).unwrap();
    assert_eq!(reg.lines().count(), 3);
    let o = landmarks(&["scan", "--archive", s(&archive), "--out", s(&out), "--landmarks", "9"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("UnknownLandmark"));
}
