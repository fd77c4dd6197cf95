//! Runs the `panomerge` binary end to end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panomerge::io::{self as formats, Tensor, TensorData};
use panomerge::mask::{ClassTable, PanopticMap};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_panomerge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn panomerge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pq_of(json: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    v["pq"].as_f64().unwrap()
}

struct Synth {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Synth {
    fn new(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let out = root.join("scene");
        let mut args = vec!["synth", "--out", s(&out)];
        args.extend_from_slice(extra);
        ok(&args);
        Self { _dir: dir, root }
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join("scene").join(name)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn clean_pipeline_closes() {
    let sc = Synth::new(&["--clean", "--seed", "4"]);
    let (masks, classes, gt, splats) = (
        sc.file("masks.pmt"),
        sc.file("classes.pmt"),
        sc.file("gt.pmt"),
        sc.file("splats.psw"),
    );
    let merged = sc.out("merged.pmt");
    let line = ok(&["merge", s(&masks), s(&classes), "--out", s(&merged)]);
    assert!(line.starts_with("objective=") && line.contains(" selected="), "{line}");
    assert_eq!(pq_of(&ok(&["eval-pq", s(&merged), s(&gt)])), 100.0);

    let field = sc.out("field.pmt");
    let rendered = sc.out("rendered.pmt");
    ok(&["uplift", s(&merged), s(&splats), "--out", s(&field)]);
    ok(&["render-labels", s(&field), s(&splats), "--out", s(&rendered)]);
    assert_eq!(pq_of(&ok(&["eval-pq", s(&rendered), s(&gt)])), 100.0);

    let base = sc.out("baseline.pmt");
    ok(&["merge-baseline", s(&masks), s(&classes), "--out", s(&base)]);
    assert_eq!(pq_of(&ok(&["eval-pq", s(&base), s(&gt)])), 100.0);
}

#[test]
fn noisy_pipeline_is_deterministic() {
    let sc = Synth::new(&["--seed", "9"]);
    let (masks, classes) = (sc.file("masks.pmt"), sc.file("classes.pmt"));
    let (a, b) = (sc.out("a.pmt"), sc.out("b.pmt"));
    let la = ok(&["merge", s(&masks), s(&classes), "--out", s(&a), "--seed", "3"]);
    let out = bin()
        .args(["merge", s(&masks), s(&classes), "--out", s(&b), "--seed", "3"])
        .env("PANOMERGE_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(la, stdout(&out));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(a.with_extension("json")).unwrap(),
        std::fs::read(b.with_extension("json")).unwrap()
    );

    let gt = sc.file("gt.pmt");
    let per_class = ok(&["eval-pq", s(&a), s(&gt), "--per-class"]);
    let v: serde_json::Value = serde_json::from_str(&per_class).unwrap();
    assert!(v["per_class"].as_array().is_some_and(|rows| !rows.is_empty()));
    let report = sc.out("report.json");
    ok(&["eval-pq", s(&a), s(&gt), "--out", s(&report), "--no-void-exemption"]);
    assert!(pq_of(&std::fs::read_to_string(report).unwrap()) <= 100.0);
}

#[test]
fn validation_errors_exit_2() {
    let sc = Synth::new(&["--seed", "1"]);
    let (masks, classes) = (sc.file("masks.pmt"), sc.file("classes.pmt"));
    let out = sc.out("x.pmt");
    assert_eq!(
        code(&["merge", s(&masks), s(&classes), "--out", s(&out), "--lambda-p", "1.0"]),
        2
    );
    assert_eq!(
        code(&[
            "merge",
            s(&masks),
            s(&classes),
            "--out",
            s(&out),
            "--void-threshold",
            "1.5"
        ]),
        2
    );
    assert_eq!(
        code(&["merge", s(&masks), s(&classes), "--out", s(&out), "--cooling", "1.0"]),
        2
    );
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["merge", s(&masks)]), 2);

    // Class scores for a different number of queries.
    let other = Synth::new(&["--seed", "2", "--things", "2", "--duplicate-rate", "0"]);
    let o = run(&["merge", s(&masks), s(&other.file("classes.pmt")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("query dimension"));
}

#[test]
fn exact_solver_guards_large_problems() {
    let sc = Synth::new(&[
        "--things",
        "20",
        "--duplicate-rate",
        "1",
        "--world-size",
        "96",
        "--height",
        "64",
        "--width",
        "64",
    ]);
    let o = run(&[
        "merge",
        s(&sc.file("masks.pmt")),
        s(&sc.file("classes.pmt")),
        "--out",
        s(&sc.out("x.pmt")),
        "--solver",
        "exact",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at most 24"));
}

#[test]
fn parse_errors_exit_3() {
    let sc = Synth::new(&[]);
    let masks = sc.file("masks.pmt");
    let bytes = std::fs::read(&masks).unwrap();
    let bad = sc.out("bad.pmt");
    std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(
        code(&[
            "merge",
            s(&bad),
            s(&sc.file("classes.pmt")),
            "--out",
            s(&sc.out("x.pmt"))
        ]),
        3
    );
    assert_eq!(
        code(&[
            "merge",
            s(&sc.out("missing.pmt")),
            s(&sc.file("classes.pmt")),
            "--out",
            s(&sc.out("x.pmt"))
        ]),
        3
    );

    let splats = std::fs::read(sc.file("splats.psw")).unwrap();
    let cut = sc.out("cut.psw");
    std::fs::write(&cut, &splats[..splats.len() - 5]).unwrap();
    assert_eq!(
        code(&["uplift", s(&sc.file("gt.pmt")), s(&cut), "--out", s(&sc.out("f.pmt"))]),
        3
    );
}

fn write_map(path: &Path, ids: Vec<u16>, n: usize, h: usize, w: usize, classes: &[(u16, u16)]) {
    let table = ClassTable::new(vec!["thing".into(), "stuff".into()], vec![true, false]).unwrap();
    let map = PanopticMap::new(n, h, w, ids, classes.iter().copied().collect::<BTreeMap<_, _>>()).unwrap();
    formats::write_panoptic(path, &map, &table).unwrap();
}

#[test]
fn eval_pq_matches_hand_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred.pmt"), dir.path().join("gt.pmt"));
    write_map(&gt, vec![1, 1, 1, 1], 1, 1, 4, &[(1, 0)]);
    write_map(&pred, vec![1, 1, 1, 2], 1, 1, 4, &[(1, 0), (2, 0)]);
    assert!((pq_of(&ok(&["eval-pq", s(&pred), s(&gt)])) - 50.0).abs() < 1e-9);
    assert_eq!(pq_of(&ok(&["eval-pq", s(&gt), s(&gt)])), 100.0);
}

#[test]
fn eval_pq_upsamples_integer_factors_only() {
    let dir = tempfile::tempdir().unwrap();
    let (half, full, odd) = (
        dir.path().join("half.pmt"),
        dir.path().join("full.pmt"),
        dir.path().join("odd.pmt"),
    );
    write_map(&half, vec![1, 2, 2, 2], 1, 2, 2, &[(1, 0), (2, 1)]);
    #[rustfmt::skip]
    let ids = vec![
        1, 1, 2, 2,
        1, 1, 2, 2,
        2, 2, 2, 2,
        2, 2, 2, 2,
    ];
    write_map(&full, ids, 1, 4, 4, &[(1, 0), (2, 1)]);
    write_map(&odd, vec![1, 2, 2], 1, 1, 3, &[(1, 0), (2, 1)]);
    assert_eq!(pq_of(&ok(&["eval-pq", s(&half), s(&full)])), 100.0);
    assert_eq!(code(&["eval-pq", s(&odd), s(&full)]), 2);
}

#[test]
fn eval_pq_dataset_mode_averages_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    write_map(&gt.join("a.pmt"), vec![1, 1, 1, 1], 1, 1, 4, &[(1, 0)]);
    write_map(&pred.join("a.pmt"), vec![1, 1, 1, 2], 1, 1, 4, &[(1, 0), (2, 0)]);
    write_map(&gt.join("b.pmt"), vec![1, 1, 1, 1], 1, 1, 4, &[(1, 0)]);
    write_map(&pred.join("b.pmt"), vec![1, 1, 1, 1], 1, 1, 4, &[(1, 0)]);
    let v: serde_json::Value = serde_json::from_str(&ok(&["eval-pq", s(&pred), s(&gt)])).unwrap();
    assert!((v["summary"]["pq"].as_f64().unwrap() - 75.0).abs() < 1e-9);
    assert_eq!(v["scenes"][0]["scene"], "a.pmt");
    assert_eq!(v["summary"]["num_scenes"], 2);

    write_map(&gt.join("c.pmt"), vec![1, 1, 1, 1], 1, 1, 4, &[(1, 0)]);
    assert_eq!(code(&["eval-pq", s(&pred), s(&gt)]), 2);
}

#[test]
fn solve_qubo_prefers_lower_index_among_identical_areas() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    std::fs::write(
        &path,
        r#"{"penalty": 2.0, "linear": [9.0, 9.0], "quadratic": [[0.0, 9.0], [9.0, 0.0]]}"#,
    )
    .unwrap();
    let out = ok(&["solve-qubo", "--exact", s(&path)]);
    assert!(out.contains("u=[1,0]") && out.contains("objective=9"), "{out}");
    let out = ok(&["solve-qubo", "--solver", "anneal", "--seed", "5", s(&path)]);
    assert!(out.contains("objective=9"), "{out}");
    assert_eq!(code(&["solve-qubo", s(&path), "--lambda-p", "0.5"]), 2);
    std::fs::write(&path, "{").unwrap();
    assert_eq!(code(&["solve-qubo", s(&path)]), 3);
}

#[test]
fn fps_selects_fifty_keyframes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desc.pmt");
    let values: Vec<f32> = (0..100 * 3).map(|i| ((i * 7919) % 101) as f32 / 101.0).collect();
    Tensor::new(vec![100, 3], TensorData::F32(values))
        .unwrap()
        .save(&path)
        .unwrap();
    let picked: Vec<usize> = serde_json::from_str(&ok(&["fps", s(&path), "--k", "50", "--seed-index", "7"])).unwrap();
    assert_eq!(picked.len(), 50);
    assert_eq!(picked[0], 7);
    let mut unique = picked.clone();
    unique.sort_unstable();
    unique.dedup();
    assert_eq!(unique.len(), 50);
    let again: Vec<usize> = serde_json::from_str(&ok(&["fps", s(&path), "--seed-index", "7"])).unwrap();
    assert_eq!(again, picked);
    assert_eq!(code(&["fps", s(&path), "--k", "101"]), 2);
    assert!(ok(&["fps", s(&path), "--metric", "cosine", "--k", "5"]).starts_with("[0,"));
}

#[test]
fn in_process_entry_point() {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = panomerge::cli::run(["panomerge", "--version"], &mut out, &mut err);
    assert_eq!(code, 0);
    assert!(String::from_utf8(out).unwrap().contains(env!("CARGO_PKG_VERSION")));
}
