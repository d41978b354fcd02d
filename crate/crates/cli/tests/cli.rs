use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vcpcfg::training::Checkpoint;
use vcpcfg::tree::Tree;

fn vcpcfg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcpcfg")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &[&str] = &[
    "--set", "nonterminals=3", "--set", "preterminals=4", "--set", "symbol_dim=8", "--set", "z_dim=2",
    "--set", "word_dim=8", "--set", "hidden_dim=6", "--set", "span_word_dim=8", "--set", "span_hidden_dim=6",
    "--set", "joint_dim=6", "--set", "batch_size=4",
];

fn synth(dir: &Path) {
    let out = vcpcfg(
        &["synth", "--out-dir", "syn", "--sentences", "60", "--valid", "10", "--test", "10", "--feature-dim", "6", "--max-len", "8"],
        dir,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", "syn/train.conf", "--set", "max_epochs=2", "--set", "patience=5"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    vcpcfg(&args, dir)
}

#[test]
fn grounded_training_without_features_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let path = dir.path().join("syn/train.conf");
    let conf = fs::read_to_string(&path).unwrap();
    let stripped: String = conf.lines().filter(|l| !l.starts_with("train_features")).map(|l| format!("{}\n", l)).collect();
    fs::write(&path, stripped).unwrap();
    let out = train(dir.path(), &["--set", "mode=grounded"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train_features"), "{}", stderr(&out));
    // text-only training does not need them
    assert_eq!(code(&train(dir.path(), &["--set", "max_epochs=1"])), 0);
}

#[test]
fn unknown_keys_and_missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = train(dir.path(), &["--set", "learning_rte=0.1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("learning_rte"));
    let out = train(dir.path(), &["--set", "train_captions=nowhere.txt"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("train_captions"));
}

#[test]
fn truncated_features_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let path = dir.path().join("syn/train.feat");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let out = train(dir.path(), &["--set", "mode=grounded"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn training_is_reproducible_and_checkpoints_reload() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let first = train(dir.path(), &["--set", "mode=grounded"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let run = dir.path().join("syn/run");
    let log = fs::read(run.join("epochs.jsonl")).unwrap();
    let ckpt = fs::read(run.join("model.ckpt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&log).lines().count(), 3);
    let loaded = Checkpoint::from_bytes(&ckpt).unwrap();
    assert_eq!(loaded.to_bytes(), ckpt);
    assert!(run.join("valid_summary.csv").exists());
    assert!(run.join("timing.jsonl").exists());

    let second = train(dir.path(), &["--set", "mode=grounded"]);
    assert_eq!(code(&second), 0);
    assert_eq!(fs::read(run.join("epochs.jsonl")).unwrap(), log);
    assert_eq!(fs::read(run.join("model.ckpt")).unwrap(), ckpt);
}

#[test]
fn parse_writes_one_tree_per_line() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    assert_eq!(code(&train(dir.path(), &[])), 0);
    fs::write(dir.path().join("in.txt"), "john sleeps\nthe dog sees mary .\nsam\n\nthe old cat runs quickly\n").unwrap();
    let args = ["parse", "--checkpoint", "syn/run/model.ckpt", "--captions", "in.txt", "--output", "out.txt"];
    let out = vcpcfg(&args, dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let first = fs::read_to_string(dir.path().join("out.txt")).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 5);
    let two = Tree::parse(lines[0]).unwrap();
    assert_eq!(two.words(), vec!["john", "sleeps"]);
    assert!(two.constituents().iter().all(|c| (c.start, c.end) == (0, 2)));
    assert_eq!(Tree::parse(lines[1]).unwrap().len(), 4);
    assert_eq!(lines[2], "(X sam)");
    assert_eq!(lines[3], "(X)");
    assert_eq!(code(&vcpcfg(&args, dir.path())), 0);
    assert_eq!(fs::read_to_string(dir.path().join("out.txt")).unwrap(), first);
}

#[test]
fn evaluate_reports_and_self_f1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out = vcpcfg(&["evaluate", "--gold", "syn/test.trees", "--pred", "syn/test.trees", "--out-dir", "eval"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("C-F1  1.000"));
    assert!(stdout(&out).contains("S-F1  1.000"));
    assert!(dir.path().join("eval/summary.csv").exists());

    let mut args = vec!["evaluate", "--gold", "syn/test.trees"];
    for _ in 0..4 {
        args.extend_from_slice(&["--pred", "syn/test.trees"]);
    }
    args.extend_from_slice(&["--baseline", "right"]);
    let out = vcpcfg(&args, dir.path());
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("self-F1 1.000 over 6 pairs"));
    assert!(stdout(&out).contains("== baseline right"));

    let out = vcpcfg(&["evaluate", "--gold", "syn/test.trees", "--pred", "syn/train.trees"], dir.path());
    assert_eq!(code(&out), 3);
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_adjoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = vcpcfg(&["gradcheck", "--scope", "elbo"], dir.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let text = stdout(&out);
    for group in ["encoder", "grammar", "image", "span-encoder"] {
        assert_eq!(text.lines().filter(|l| l.split_whitespace().next() == Some(group)).count(), 1, "{}", text);
    }
    let out = vcpcfg(&["gradcheck", "--scope", "elbo", "--corrupt-adjoint"], dir.path());
    assert_ne!(code(&out), 0);
    let out = vcpcfg(&["gradcheck", "--scope", "bogus"], dir.path());
    assert_eq!(code(&out), 2);
}
