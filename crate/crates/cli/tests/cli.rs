use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn dtsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtsl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Run {
    dir: TempDir,
    corpus: PathBuf,
    embeddings: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new() -> Self {
        Run {
            dir: tempfile::tempdir().unwrap(),
            corpus: fixture("corpus.jsonl"),
            embeddings: fixture("embeddings.txt"),
            config: fixture("small.toml"),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn base<'a>(&'a self, cmd: &'a str) -> Vec<&'a str> {
        vec![
            cmd,
            "--config",
            p(&self.config),
            "--corpus",
            p(&self.corpus),
            "--embeddings",
            p(&self.embeddings),
        ]
    }

    fn train(&self, checkpoint: &Path, extra: &[&str]) -> Output {
        let mut args = self.base("train");
        args.extend(["--checkpoint", p(checkpoint)]);
        args.extend(extra);
        dtsl(&args)
    }
}

#[test]
fn train_writes_checkpoint_and_epoch_log() {
    let run = Run::new();
    let ck = run.path("model.ckpt");
    let out = run.train(&ck, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(ck.exists());
    let log = fs::read_to_string(run.path("model.log.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i as u64 + 1);
        for key in ["supervised", "unsupervised", "weight", "total", "wall_ms"] {
            assert!(l.get(key).is_some(), "{key} missing");
        }
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let run = Run::new();
    let (a, b) = (run.path("a.ckpt"), run.path("b.ckpt"));
    assert_eq!(code(&run.train(&a, &["--seed", "7"])), 0);
    assert_eq!(code(&run.train(&b, &["--seed", "7"])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = run.path("c.ckpt");
    assert_eq!(code(&run.train(&c, &["--seed", "8"])), 0);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn resume_continues_bitwise() {
    let run = Run::new();
    let full = run.path("full.ckpt");
    assert_eq!(code(&run.train(&full, &[])), 0);
    let part = run.path("part.ckpt");
    assert_eq!(code(&run.train(&part, &["--epochs", "2"])), 0);
    let out = run.train(&part, &["--resume"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(&full).unwrap(), fs::read(&part).unwrap());
    let log = fs::read_to_string(run.path("part.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let run = Run::new();
    let out = dtsl(&["train", "--embeddings", p(&run.embeddings), "--checkpoint", p(&run.path("x"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("corpus"), "{}", stderr(&out));
    let out = dtsl(&[
        "train",
        "--corpus",
        p(&run.path("nope.jsonl")),
        "--embeddings",
        p(&run.embeddings),
        "--checkpoint",
        p(&run.path("x")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("does not exist"));
}

#[test]
fn invalid_values_name_the_field() {
    let run = Run::new();
    let ck = run.path("x.ckpt");
    for (flag, value, field) in [
        ("--epochs", "0", "epochs"),
        ("--labeled-ratio", "0", "labeled_ratio"),
        ("--lr", "-0.1", "lr"),
        ("--t-ramp", "0", "t_ramp"),
        ("--embed-dim", "50", "embed_dim"),
    ] {
        let out = run.train(&ck, &[flag, value]);
        assert_eq!(code(&out), 1, "{flag}");
        assert!(stderr(&out).contains(field), "{flag}: {}", stderr(&out));
    }
    let bad = run.path("bad.toml");
    fs::write(&bad, "epochz = 3\n").unwrap();
    let out = dtsl(&["gradcheck", "--config", p(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("epochz"));
    assert_eq!(code(&dtsl(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&dtsl(&["--help"])), 0);
}

#[test]
fn predict_is_deterministic_and_checks_architecture() {
    let run = Run::new();
    let ck = run.path("model.ckpt");
    assert_eq!(code(&run.train(&ck, &[])), 0);
    let mut outputs = Vec::new();
    for name in ["p1.txt", "p2.txt"] {
        let out_path = run.path(name);
        let mut args = run.base("predict");
        args.extend(["--checkpoint", p(&ck), "--out", p(&out_path)]);
        let out = dtsl(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(fs::read_to_string(&out_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let lines: Vec<&str> = outputs[0].lines().collect();
    assert_eq!(lines.len(), 200);
    assert!(lines
        .iter()
        .all(|l| l.ends_with("\tfake") || l.ends_with("\ttrue")));
    assert!(lines[0].starts_with("crash-00000\t"));

    let narrow = run.path("narrow.txt");
    let text: String = fs::read_to_string(&run.embeddings)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(' ').take(5).collect::<Vec<_>>().join(" ") + "\n")
        .collect();
    fs::write(&narrow, text).unwrap();
    let out = dtsl(&[
        "predict",
        "--corpus",
        p(&run.corpus),
        "--embeddings",
        p(&narrow),
        "--checkpoint",
        p(&ck),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("mismatch"), "{}", stderr(&out));
}

#[test]
fn predict_reproduces_memorized_labels() {
    let run = Run::new();
    let four: String = fs::read_to_string(&run.corpus).unwrap().lines().take(4).map(|l| format!("{l}\n")).collect();
    let corpus = run.path("four.jsonl");
    fs::write(&corpus, &four).unwrap();
    let ck = run.path("four.ckpt");
    let out = dtsl(&[
        "train",
        "--config",
        p(&run.config),
        "--corpus",
        p(&corpus),
        "--embeddings",
        p(&run.embeddings),
        "--checkpoint",
        p(&ck),
        "--labeled-ratio",
        "1",
        "--epochs",
        "60",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = dtsl(&[
        "predict",
        "--corpus",
        p(&corpus),
        "--embeddings",
        p(&run.embeddings),
        "--checkpoint",
        p(&ck),
    ]);
    assert_eq!(code(&out), 0);
    let expected: Vec<String> = four
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            format!("{}\t{}", v["id"].as_str().unwrap(), v["label"].as_str().unwrap())
        })
        .collect();
    assert_eq!(stdout(&out).lines().collect::<Vec<_>>(), expected);
}

#[test]
fn evaluate_writes_report() {
    let run = Run::new();
    let ck = run.path("model.ckpt");
    assert_eq!(code(&run.train(&ck, &[])), 0);
    let report = run.path("eval.json");
    let mut args = run.base("evaluate");
    args.extend(["--checkpoint", p(&ck), "--out", p(&report)]);
    let out = dtsl(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("MF"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["scored"], 200);
    let f = v["metrics"]["macro_f"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
}

#[test]
fn loeo_reports_every_event() {
    let run = Run::new();
    let three: String = fs::read_to_string(&run.corpus)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"event\":\"protest\""))
        .map(|l| format!("{l}\n"))
        .collect();
    let corpus = run.path("three.jsonl");
    fs::write(&corpus, three).unwrap();
    let report = run.path("loeo.json");
    let out = dtsl(&[
        "loeo",
        "--config",
        p(&run.config),
        "--corpus",
        p(&corpus),
        "--embeddings",
        p(&run.embeddings),
        "--epochs",
        "2",
        "--labeled-ratio",
        "0.1",
        "--out",
        p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let events: Vec<&str> = v["per_event"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["event"].as_str().unwrap())
        .collect();
    assert_eq!(events, ["crash", "shooting", "siege"]);
    assert_eq!(v["labeled_ratio"], 0.1);
    assert!(v["config_fingerprint"].as_str().unwrap().len() >= 16);
    let table = fs::read_to_string(run.path("loeo.txt")).unwrap();
    assert!(table.contains("DTSL (10%)"), "{table}");
    assert_eq!(table, stdout(&out));

    let single: String = fs::read_to_string(&run.corpus)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"event\":\"crash\""))
        .map(|l| format!("{l}\n"))
        .collect();
    let corpus = run.path("one.jsonl");
    fs::write(&corpus, single).unwrap();
    let out = dtsl(&[
        "loeo",
        "--config",
        p(&run.config),
        "--corpus",
        p(&corpus),
        "--embeddings",
        p(&run.embeddings),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("at least 2 events"));
}

#[test]
fn gradcheck_passes() {
    let out = dtsl(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    for name in ["conv2d", "maxpool2", "relu", "dense", "softmax", "objective"] {
        assert!(text.contains(name), "{name} missing:\n{text}");
    }
    assert!(text.contains("from the kink"));
    assert!(text.contains("PASS"));
}
