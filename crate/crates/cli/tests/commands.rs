use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cqa_core::dataset::{load_corpus, triple_to_json, write_corpus, Triple};
use cqa_core::synthetic::{generate, SyntheticConfig};

fn cqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run cqa")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_triples(path: &Path, triples: &[Triple]) {
    let mut buf = Vec::new();
    write_corpus(&mut buf, triples).unwrap();
    std::fs::write(path, buf).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    train: PathBuf,
    dev: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.jsonl");
    let dev = dir.path().join("dev.jsonl");
    let cfg = SyntheticConfig {
        queries: 4,
        related_per_query: 3,
        comments_per_related: 2,
        seed: 21,
        ..Default::default()
    };
    write_triples(&train, &generate(&cfg));
    write_triples(&dev, &generate(&SyntheticConfig { seed: 22, ..cfg }));
    Fixture { dir, train, dev }
}

fn train_args<'a>(f: &'a Fixture, out: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut args = vec![
        "train".to_string(),
        "--set".into(),
        format!("train={}", s(&f.train)),
        "--set".into(),
        format!("dev={}", s(&f.dev)),
        "--set".into(),
        format!("out_dir={out}"),
        "--set".into(),
        "feature_maps=6".into(),
        "--set".into(),
        "word_dim=6".into(),
        "--set".into(),
        "max_epochs=4".into(),
        "--set".into(),
        "batch_size=8".into(),
    ];
    for e in extra {
        args.push("--set".into());
        args.push(e.to_string());
    }
    args
}

fn run_train(f: &Fixture, out: &Path, extra: &[&str]) -> Output {
    let args = train_args(f, s(out), extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    cqa(&refs)
}

fn ckpt_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".ckpt"))
        .collect();
    v.sort();
    v
}

#[test]
fn extend_reports_counts_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    let output = dir.path().join("out.jsonl");
    let triples = generate(&SyntheticConfig {
        queries: 1,
        related_per_query: 2,
        comments_per_related: 3,
        seed: 5,
        ..Default::default()
    });
    write_triples(&input, &triples);
    let o = cqa(&["extend", "--input", s(&input), "--output", s(&output)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("+6 extended") || text.contains("extended: +6"), "{text}");
    assert!(text.contains("total: 12"), "{text}");
    let back = load_corpus(&output).unwrap();
    assert_eq!(back.len(), 12);
    assert_eq!(&back[..6], &triples[..]);
    assert!(back[6..].iter().all(|t| t.id.starts_with("ed:")));
}

#[test]
fn extend_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, "{\"id\": 1}\n").unwrap();
    let o = cqa(&["extend", "-i", s(&input), "-o", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
    assert!(!dir.path().join("o.jsonl").exists());
    let o = cqa(&["extend", "-i", "/nonexistent.jsonl", "-o", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_modes_write_expected_checkpoints() {
    let f = fixture();
    let per_task = f.dir.path().join("per_task");
    let o = run_train(&f, &per_task, &["stopping_mode=per_task"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ckpt_files(&per_task), ["model_A.ckpt", "model_B.ckpt", "model_C.ckpt"]);
    let csv = std::fs::read_to_string(per_task.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,loss_train,loss_dev,lossA_dev,lossB_dev,lossC_dev,mapA_dev,mapB_dev,mapC_dev")
    );
    assert_eq!(lines.count(), 4);

    let global = f.dir.path().join("global");
    let o = run_train(&f, &global, &["stopping_mode=global"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ckpt_files(&global), ["model.ckpt"]);

    let pair = f.dir.path().join("pair");
    let o = run_train(&f, &pair, &["model=pair", "tasks=B"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ckpt_files(&pair), ["model.ckpt"]);
}

#[test]
fn training_is_deterministic() {
    let f = fixture();
    let a = f.dir.path().join("a");
    let b = f.dir.path().join("b");
    assert!(run_train(&f, &a, &["seed=3"]).status.success());
    assert!(run_train(&f, &b, &["seed=3"]).status.success());
    assert_eq!(std::fs::read(a.join("report.csv")).unwrap(), std::fs::read(b.join("report.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn train_config_errors_exit_one() {
    let f = fixture();
    let out = f.dir.path().join("x");
    assert_eq!(run_train(&f, &out, &["colour=red"]).status.code(), Some(1));
    assert_eq!(run_train(&f, &out, &["patience=0"]).status.code(), Some(1));
    assert_eq!(run_train(&f, &out, &["model=pair"]).status.code(), Some(1));
    let o = cqa(&["train", "--set", "train=/nope.jsonl"]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = f.dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "train = {}\ndev = {}\nout_dir = {}\nfeature_maps = 4\nword_dim = 4\nmax_epochs = 2\n",
            s(&f.train),
            s(&f.dev),
            s(&out)
        ),
    )
    .unwrap();
    let o = cqa(&["train", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(ckpt_files(&out), ["model.ckpt"]);
}

fn metric(line: &str, key: &str) -> f64 {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
        .parse()
        .unwrap()
}

#[test]
fn evaluate_memorized_corpus_and_google_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("tiny.jsonl");
    write_triples(
        &data,
        &generate(&SyntheticConfig {
            queries: 3,
            related_per_query: 3,
            comments_per_related: 2,
            seed: 31,
            ..Default::default()
        }),
    );
    let f = Fixture {
        train: data.clone(),
        dev: data.clone(),
        dir,
    };
    let out = f.dir.path().join("run");
    let o = run_train(
        &f,
        &out,
        &["max_epochs=150", "patience=150", "feature_maps=20", "word_dim=10", "dropout_input=0", "dropout_hidden=0"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("model.ckpt");
    let pred = f.dir.path().join("pred.tsv");

    for task in ["A", "B", "C"] {
        let o = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&data), "--task", task, "-o", s(&pred)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let line = stdout(&o);
        assert!(line.starts_with("MAP="), "{line}");
        assert_eq!(metric(&line, "MAP"), 100.0, "task {task}: {line}");
        assert_eq!(metric(&line, "MRR"), 100.0, "task {task}: {line}");
    }

    // alpha = 0 ranks by the search engine
    let o = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&data), "--task", "C", "--alpha", "0", "-o", s(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read_to_string(&pred).unwrap();
    let triples = load_corpus(&data).unwrap();
    let rank_of = |id: &str| triples.iter().find(|t| t.id == id).unwrap().google_rank;
    let mut prev: Option<(String, u32, usize)> = None;
    for line in first.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 5, "{line}");
        let (group, pos) = (cols[0].to_string(), cols[2].parse::<usize>().unwrap());
        let rank = rank_of(cols[1]);
        if let Some((g, r, p)) = &prev {
            if *g == group {
                assert!(rank >= *r && pos == p + 1, "{line}");
            }
        }
        prev = Some((group, rank, pos));
    }
    let again = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&data), "--task", "C", "--alpha", "0", "-o", s(&pred)]);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(&pred).unwrap(), first);

    let o = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&data), "--task", "B", "--tune-on", s(&data), "-o", s(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("alpha="), "{}", stdout(&o));

    // MTL checkpoints need an explicit task; alpha must lie in [0, 1]
    let o = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&data), "-o", s(&pred)]);
    assert_eq!(o.status.code(), Some(1));
    let o = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&data), "--task", "A", "--alpha", "1.5", "-o", s(&pred)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn predict_needs_no_labels() {
    let f = fixture();
    let out = f.dir.path().join("run");
    assert!(run_train(&f, &out, &["model=pair", "tasks=A"]).status.success());
    let unlabeled = f.dir.path().join("unlabeled.jsonl");
    let lines: Vec<String> = load_corpus(&f.dev)
        .unwrap()
        .iter()
        .map(|t| {
            let mut v = triple_to_json(t);
            let obj = v.as_object_mut().unwrap();
            for k in ["label_A", "label_B", "label_C"] {
                obj.remove(k);
            }
            v.to_string()
        })
        .collect();
    std::fs::write(&unlabeled, lines.join("\n") + "\n").unwrap();
    let pred = f.dir.path().join("pred.tsv");
    let ckpt = out.join("model.ckpt");
    let o = cqa(&["predict", "--checkpoint", s(&ckpt), "--corpus", s(&unlabeled), "-o", s(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(text.lines().count(), lines.len());
    assert!(text.lines().all(|l| l.split('\t').count() == 4));

    // evaluate insists on labels
    let o = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&unlabeled), "-o", s(&pred)]);
    assert_eq!(o.status.code(), Some(2));
    // a pair checkpoint cannot answer another task
    let o = cqa(&["predict", "--checkpoint", s(&ckpt), "--corpus", s(&unlabeled), "--task", "B", "-o", s(&pred)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let f = fixture();
    let out = f.dir.path().join("run");
    assert!(run_train(&f, &out, &[]).status.success());
    let ckpt = out.join("model.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&ckpt, bytes).unwrap();
    let o = cqa(&["evaluate", "--checkpoint", s(&ckpt), "--corpus", s(&f.dev), "--task", "A", "-o", s(&f.dir.path().join("p.tsv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let o = cqa(&["gradcheck", "--probes", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let err = metric(stdout(&o).lines().next().unwrap(), "max_relative_error");
    assert!(err < 1e-4);

    let o = cqa(&["gradcheck", "--probes", "50", "--inject-fault", "conv"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));

    let o = cqa(&["gradcheck", "--probes", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("probes must be >= 1"), "{}", stderr(&o));
}

#[test]
fn usage_and_help() {
    assert_eq!(cqa(&["--help"]).status.code(), Some(0));
    assert_eq!(cqa(&["evaluate", "--help"]).status.code(), Some(0));
    assert_eq!(cqa(&[]).status.code(), Some(1));
    assert_eq!(cqa(&["evaluate", "--checkpoint", "x"]).status.code(), Some(1));
    let help = stdout(&cqa(&["gradcheck", "--help"]));
    assert!(!help.contains("inject"), "{help}");
}
