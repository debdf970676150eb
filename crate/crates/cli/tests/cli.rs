use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use atkd_core::harness::read_jsonl;
use atkd_core::io::{read_report, write_logit_file, LogitFile};
use atkd_core::LogitBatch;

fn atkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atkd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample.txt")
}

fn tiny_spec(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"corpus_path = "{corpus}"
steps = 20
seeds = [3]
batch_size = 4
eval_interval = 10
eval_tokens = 512
{extra}

[teacher]
d_model = 16
n_layers = 1
n_heads = 2
context_len = 16

[student]
d_model = 8
n_layers = 1
n_heads = 1
context_len = 16

[optimizer]
lr = 3e-3
warmup = 5
"#,
        corpus = corpus().display()
    );
    let path = dir.join("spec.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn check_grads_passes() {
    let out = atkd(&["check-grads"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.ends_with(" ok")).count(), 21);
}

#[test]
fn decompose_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let batch = LogitBatch::new(
        3,
        3,
        vec![2.0, 0.0, -1.0, 0.5, 0.5, 0.5, -3.0, 4.0, 0.0],
        vec![1.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
        vec![0, 1, 1],
        vec![true, false, true],
    )
    .unwrap();
    let input = dir.path().join("x.lgt");
    write_logit_file(&input, &LogitFile::from_batch(&batch, true)).unwrap();
    let report = dir.path().join("r.csv");
    let kde = dir.path().join("k.csv");
    let out = atkd(&[
        "decompose",
        input.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--kde",
        kde.to_str().unwrap(),
        "--grid-points",
        "32",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_report(&report).unwrap();
    assert_eq!(rows.iter().map(|r| r.token_index).collect::<Vec<_>>(), vec![0, 2]);
    assert!(kde.exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let missing = atkd(&["distill", "--config", "/nonexistent/spec.toml"]);
    assert_eq!(code(&missing), 4);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "corpus_path = \"x\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&atkd(&["distill", "--config", bad.to_str().unwrap()])), 2);

    let garbage = dir.path().join("garbage.lgt");
    std::fs::write(&garbage, b"not a logit file").unwrap();
    assert_eq!(code(&atkd(&["decompose", garbage.to_str().unwrap()])), 4);

    let spec = tiny_spec(dir.path(), "");
    let wrong_kind = atkd(&["sweep", "--config", spec.to_str().unwrap()]);
    assert_eq!(code(&wrong_kind), 2);

    let hot = tiny_spec(dir.path(), "");
    let text = std::fs::read_to_string(&hot).unwrap().replace("lr = 3e-3", "lr = 1e4");
    std::fs::write(&hot, text).unwrap();
    let out_dir = dir.path().join("hot");
    let diverged = atkd(&[
        "train-teacher",
        "--config",
        hot.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&diverged), 3, "{}", String::from_utf8_lossy(&diverged.stderr));
}

#[test]
fn teacher_then_distill() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(dir.path(), "");
    let t_dir = dir.path().join("teacher");
    let out = atkd(&[
        "train-teacher",
        "--config",
        spec.to_str().unwrap(),
        "--out-dir",
        t_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let teacher = t_dir.join("teacher_seed3.ckpt");
    assert!(teacher.exists());

    let d_dir = dir.path().join("distill");
    let out = atkd(&[
        "distill",
        "--config",
        spec.to_str().unwrap(),
        "--teacher",
        teacher.to_str().unwrap(),
        "--seed",
        "5",
        "--steps",
        "10",
        "--out-dir",
        d_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records = read_jsonl(d_dir.join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].seed, 5);
    assert_eq!(records[0].series.last().unwrap().step, 10);

    let l_dir = dir.path().join("landscape");
    let student = std::fs::read_dir(&d_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .expect("student checkpoint");
    let out = atkd(&[
        "landscape",
        "--config",
        spec.to_str().unwrap(),
        "--theta0",
        student.to_str().unwrap(),
        "--theta1",
        student.to_str().unwrap(),
        "--out-dir",
        l_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = atkd_core::harness::read_landscape(l_dir.join("landscape.csv")).unwrap();
    assert_eq!(rows.len(), 21);
    assert!(rows.windows(2).all(|w| w[0].perplexity == w[1].perplexity));
}
