use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_visitpat"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn visitpat")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// synth -> tree -> discover into `dir`, returning the patterns path.
fn staged(dir: &Path, extra: &[&str]) -> PathBuf {
    let (bis, labels, tree, pats) = (p(dir, "bis.csv"), p(dir, "labels.csv"), p(dir, "tree"), p(dir, "patterns.json"));
    let with = |base: &[&str]| -> Vec<String> {
        base.iter().chain(extra).map(|s| s.to_string()).collect()
    };
    let args = with(&["synth", "-o", &bis, "--labels", &labels, "--set", "synth.n=300"]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let args = with(&["tree", &bis, "-o", &tree]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let args = with(&["discover", "--tree", &tree, "--bis", &bis, "-o", &pats, "--clusters-csv", &p(dir, "clusters.csv")]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    PathBuf::from(pats)
}

#[test]
fn planted_round_trip_recovers_mode_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pats = staged(d, &["--omega", "2700", "--seed", "4"]);
    let file = json(&pats);
    let window = &file["windows"][0];
    assert_eq!(window["preference_mode"], "minimizing");
    assert_eq!(window["patterns"].as_array().unwrap().len(), 4);

    let report = p(d, "report.json");
    ok(&[
        "eval", "--patterns", pats.to_str().unwrap(), "--bis", &p(d, "bis.csv"),
        "--labels", &p(d, "labels.csv"), "-o", &report, "--omega", "2700",
    ]);
    let r = json(&report);
    for key in ["purity", "rand_index", "f_measure"] {
        let v = r[key].as_f64().unwrap();
        assert!((0.9..=1.0).contains(&v), "{key} = {v}");
    }

    let csv = fs::read_to_string(d.join("clusters.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "cluster_id,exemplar_index,member_indices");
    let members: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().split(';').count()).sum();
    assert_eq!(members, 300);

    for sidecar in ["bis.csv.run.json", "tree/run.json", "patterns.json.run.json", "report.json.run.json"] {
        let log = json(d.join(sidecar));
        assert_eq!(log["config"]["omega_s"], 2700, "{sidecar}");
        assert!(log["inputs"].is_object() && log["outputs"].is_object());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    staged(a.path(), &["--seed", "9"]);
    staged(b.path(), &["--seed", "9"]);
    for name in ["bis.csv", "labels.csv", "patterns.json", "clusters.csv", "tree/index.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let digests = |d: &Path| -> Vec<Value> {
        json(d.join("patterns.json.run.json"))["outputs"].as_object().unwrap().values().cloned().collect()
    };
    assert_eq!(digests(a.path()), digests(b.path()));
}

#[test]
fn raw_synth_ingests_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-o", &p(d, "raw.csv"), "--labels", &p(d, "l.csv"), "--emit-raw", "--set", "synth.n=40", "--set", "synth.p=0"]);
    ok(&["synth", "-o", &p(d, "bis.csv"), "--labels", &p(d, "l2.csv"), "--set", "synth.n=40", "--set", "synth.p=0"]);
    ok(&["ingest", &p(d, "raw.csv"), "-o", &p(d, "ps.csv")]);
    ok(&["preprocess", &p(d, "ps.csv"), "-o", &p(d, "back.csv"), "--delta", "900"]);
    let mut direct: Vec<String> = fs::read_to_string(d.join("bis.csv")).unwrap().lines().map(String::from).collect();
    let mut back: Vec<String> = fs::read_to_string(d.join("back.csv")).unwrap().lines().map(String::from).collect();
    direct.sort();
    back.sort();
    assert_eq!(direct, back);
}

#[test]
fn empty_point_sequences_give_empty_bis() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("ps.csv"), "").unwrap();
    ok(&["preprocess", &p(d, "ps.csv"), "-o", &p(d, "bis.csv")]);
    assert_eq!(fs::read_to_string(d.join("bis.csv")).unwrap(), "");
    assert!(d.join("bis.csv.run.json").exists());
}

#[test]
fn input_errors_exit_two_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--error-json", "tree", &p(dir.path(), "missing.csv"), "-o", &p(dir.path(), "t")]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "input");
    assert_eq!(err["error"]["exit_code"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.csv"));

    fs::write(dir.path().join("bad.csv"), "s,2020-01-01,450,01x1\n").unwrap();
    let out = run(&["tree", &p(dir.path(), "bad.csv"), "-o", &p(dir.path(), "t")]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["--set", "alpha=0", "synth", "-o", &p(dir.path(), "b"), "--labels", &p(dir.path(), "l")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_convergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-o", &p(d, "bis.csv"), "--labels", &p(d, "l.csv"), "--set", "synth.n=120"]);
    ok(&["tree", &p(d, "bis.csv"), "-o", &p(d, "tree")]);
    let args = ["discover", "--tree", &p(d, "tree"), "--bis", &p(d, "bis.csv"), "-o", &p(d, "pat.json"), "--max-iter", "3", "--mode", "median"];
    ok(&args);
    let mut strict = vec!["--strict-convergence"];
    strict.extend(args);
    assert_eq!(run(&strict).status.code(), Some(3));
}

#[test]
fn sweep_cluster_counts_do_not_grow_with_omega() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-o", &p(d, "bis.csv"), "--labels", &p(d, "l.csv"), "--set", "synth.n=300"]);
    ok(&["sweep", "--bis", &p(d, "bis.csv"), "--labels", &p(d, "l.csv"), "-o", &p(d, "sweep.csv")]);
    let text = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    let counts = |mode: &str| -> Vec<usize> {
        rows.iter()
            .filter(|r| r[col("mode")] == mode)
            .map(|r| r[col("clusters")].parse().unwrap())
            .collect()
    };
    let (low, med) = (counts("minimizing"), counts("median"));
    assert!(low.windows(2).all(|w| w[1] <= w[0]), "{low:?}");
    assert!(med.windows(2).all(|w| w[1] <= w[0]), "{med:?}");
    assert!(low.iter().zip(&med).all(|(a, b)| a <= b));
}

#[test]
fn flags_beat_set_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.txt"), "# run settings\nomega_s = 900\nalpha = 5\nsynth.n = 20\n").unwrap();
    let cfg = p(d, "cfg.txt");
    let resolved = |extra: &[&str]| -> Value {
        let mut args = vec!["--config", &cfg, "synth"];
        let (out, labels) = (p(d, "b.csv"), p(d, "l.csv"));
        args.extend(["-o", &out, "--labels", &labels]);
        args.extend(extra);
        ok(&args);
        json(d.join("b.csv.run.json"))["config"].clone()
    };
    let c = resolved(&[]);
    assert_eq!((c["omega_s"].as_u64(), c["alpha"].as_u64(), c["damping"].as_f64()), (Some(900), Some(5), Some(0.9)));
    let c = resolved(&["--set", "omega_s=2700"]);
    assert_eq!(c["omega_s"], 2700);
    let c = resolved(&["--set", "omega_s=2700", "--omega", "3600"]);
    assert_eq!(c["omega_s"], 3600);
    assert_eq!(c["alpha"], 5);
}
