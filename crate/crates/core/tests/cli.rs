use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn regd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regd")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TREE: &str = "r\ta\nr\tb\na\tc\na\td\nb\te\nb\tf\n";

/// Every ordered pair of the toy tree, labeled by ancestry.
fn all_pairs() -> String {
    let nodes = ["r", "a", "b", "c", "d", "e", "f"];
    let truth = [
        ("r", "a"),
        ("r", "b"),
        ("r", "c"),
        ("r", "d"),
        ("r", "e"),
        ("r", "f"),
        ("a", "c"),
        ("a", "d"),
        ("b", "e"),
        ("b", "f"),
    ];
    let mut out = String::new();
    for u in nodes {
        for v in nodes {
            if u != v {
                out += &format!("{u}\t{v}\t{}\n", u8::from(truth.contains(&(u, v))));
            }
        }
    }
    out
}

struct ToyRun {
    dir: TempDir,
    out: PathBuf,
    pairs: PathBuf,
}

fn toy_train(lambda: &str, out_name: &str, dir: Option<TempDir>) -> ToyRun {
    let dir = dir.unwrap_or_else(|| TempDir::new().unwrap());
    let tree = dir.path().join("tree.tsv");
    let pairs = dir.path().join("pairs.tsv");
    fs::write(&tree, TREE).unwrap();
    fs::write(&pairs, all_pairs()).unwrap();
    let config = dir.path().join("toy.conf");
    fs::write(
        &config,
        format!("# toy tree\ntask = dag\ndim = 2\nlambda = {lambda}\nbatch_size = 6\nlr = 0.005\nepochs = 200\nseed = 1\n"),
    )
    .unwrap();
    let out = dir.path().join(out_name);
    let o = regd(&["train", "--config", p(&config), "--train", p(&tree), "--valid", p(&pairs), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    ToyRun { dir, out, pairs }
}

#[test]
fn closure_of_a_chain() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("chain.tsv");
    fs::write(&input, "a\tb\nb\tc\n").unwrap();
    let out = dir.path().join("split");
    let o = regd(&["closure", p(&input), "--out", p(&out), "--valid", "1", "--test", "0", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("basic.tsv")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(out.join("closure.tsv")).unwrap().lines().count(), 3);
    assert!(fs::read_to_string(out.join("valid.tsv")).unwrap().starts_with("a\tc\t1\n"));
    let m = json_file(&out.join("manifest.json"));
    assert_eq!(m["seed"], 3);
    assert_eq!(m["fractions"]["valid"], 1.0);
    assert_eq!(m["fractions"]["test"], 0.0);
}

#[test]
fn closure_reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("tree.tsv");
    let mut edges = String::new();
    for i in 1..40 {
        edges += &format!("n{}\tn{i}\n", (i - 1) / 3);
    }
    fs::write(&input, edges).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = regd(&["closure", p(&input), "--out", p(&out), "--valid", "0.2", "--test", "0.2", "--seed", "9"]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["basic.tsv", "closure.tsv", "train.tsv", "valid.tsv", "test.tsv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let valid = fs::read_to_string(a.join("valid.tsv")).unwrap();
    assert!(valid.lines().filter(|l| l.ends_with("\t0")).count() > 0);
}

#[test]
fn cyclic_input_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("cycle.tsv");
    fs::write(&input, "a\tb\nb\tc\nc\ta\n").unwrap();
    let o = regd(&["closure", p(&input), "--out", p(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("cycle") && err.contains("->"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(regd(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(regd(&["train", "--set", "lamda=1"]).status.code(), Some(1));
    assert_eq!(regd(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(regd(&["--help"]).status.code(), Some(0));
}

#[test]
fn ontology_file_in_dag_task_is_rejected_before_training() {
    let dir = TempDir::new().unwrap();
    let axioms = dir.path().join("onto.txt");
    fs::write(&axioms, "nf1 A B\nnf1 B C\n").unwrap();
    let out = dir.path().join("out");
    let o = regd(&["train", "--train", p(&axioms), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("axiom file"));
    assert!(!out.exists());
}

#[test]
fn toy_tree_trains_to_perfect_validation_f1() {
    let run = toy_train("0", "out", None);
    let m = json_file(&run.out.join("manifest.json"));
    assert_eq!(m["valid_f1"], 1.0);
    assert_eq!(m["depth_evals"], 0);
    assert_eq!(m["config"]["dim"], 2);

    let log = fs::read_to_string(run.out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 200);
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(last["epoch"], 200);
    assert_eq!(last["valid_f1"], m["valid_f1"]);
}

#[test]
fn depth_is_evaluated_only_when_weighted() {
    let run = toy_train("0.5", "out", None);
    let m = json_file(&run.out.join("manifest.json"));
    assert!(m["depth_evals"].as_u64().unwrap() > 0);
}

#[test]
fn training_is_deterministic() {
    let first = toy_train("0.5", "one", None);
    let second = toy_train("0.5", "two", Some(first.dir));
    for f in ["embeddings.regd", "train_log.jsonl", "valid.labeled"] {
        assert_eq!(
            fs::read(first.out.join(f)).unwrap(),
            fs::read(second.out.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn eval_reports_threshold_metrics_and_reproduces_training() {
    let run = toy_train("0.5", "out", None);
    let m = json_file(&run.out.join("manifest.json"));
    let dump = run.dir.path().join("scores.tsv");
    let o = regd(&[
        "eval",
        "--embeddings",
        p(&run.out.join("embeddings.regd")),
        "--manifest",
        p(&run.out.join("manifest.json")),
        "--test",
        p(&run.pairs),
        "--dump",
        p(&dump),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["t", "precision", "recall", "f1"] {
        assert!(metrics[key].is_number(), "{key} missing: {metrics}");
    }
    assert_eq!(metrics["valid_f1"], m["valid_f1"]);
    assert_eq!(metrics["t"], m["threshold"]);
    assert_eq!(fs::read_to_string(&dump).unwrap().lines().count(), 1 + 2 * 42);
}

#[test]
fn eval_lists_unknown_ids() {
    let run = toy_train("0", "out", None);
    let test = run.dir.path().join("bad.tsv");
    fs::write(&test, "r\ta\t1\nzebra\ta\t0\nr\tyak\t0\n").unwrap();
    let o = regd(&[
        "eval",
        "--embeddings",
        p(&run.out.join("embeddings.regd")),
        "--manifest",
        p(&run.out.join("manifest.json")),
        "--test",
        p(&test),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("yak") && err.contains("zebra"), "{err}");
}

#[test]
fn ontology_prediction_reports_ranking_metrics() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("onto.txt");
    fs::write(&train, "nf1 A B\nnf1 B C\nnf3 A r D\nnf4 r D E\nnf1 F C\n").unwrap();
    let test = dir.path().join("queries.txt");
    fs::write(&test, "nf4 r D E\nnf1 A C\n").unwrap();
    let out = dir.path().join("out");
    let o = regd(&[
        "train",
        "--task",
        "ontology-prediction",
        "--train",
        p(&train),
        "--out",
        p(&out),
        "--epochs",
        "300",
        "--set",
        "batch_size=5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = dir.path().join("ranked.tsv");
    let o = regd(&[
        "eval",
        "--embeddings",
        p(&out.join("embeddings.regd")),
        "--manifest",
        p(&out.join("manifest.json")),
        "--test",
        p(&test),
        "--dump",
        p(&dump),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics: Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["h1", "h10", "h100", "median", "mrr", "mr", "auc"] {
        assert!(metrics.get(key).is_some(), "{key} missing: {metrics}");
    }
    assert_eq!(metrics["h10"], 1.0);
    let ranked = fs::read_to_string(&dump).unwrap();
    assert!(ranked.contains("nf4 r D ?"), "{ranked}");
}

#[test]
fn verify_passes() {
    let o = regd(&["verify"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("PASS isometry"));
    assert!(!text.contains("FAIL"));
}
