use std::path::Path;
use std::process::{Command, Output};

fn dodem(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dodem"))
        .args(args)
        .env("DODEM_OUTPUT_ROOT", root)
        .output()
        .expect("spawn dodem")
}

fn run_dirs(root: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(root)
        .map(|it| it.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn missing_manifest_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dodem(tmp.path(), &["-m", "/definitely/not/here.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dodem(tmp.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn unknown_override_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.toml");
    let m = m.to_str().unwrap();
    assert!(dodem(tmp.path(), &["init", "--out", m]).status.success());
    let out = dodem(tmp.path(), &["-m", m, "--set", "data.no_such_key=3", "ingest"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_cmapss_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("cmapss");
    std::fs::create_dir(&data).unwrap();
    for f in ["train_FD001.txt", "test_FD001.txt", "train_FD002.txt", "test_FD002.txt", "train_FD003.txt", "test_FD003.txt"] {
        std::fs::write(data.join(f), "1 1 0.1 0.2\n").unwrap();
    }
    for f in ["RUL_FD001.txt", "RUL_FD002.txt", "RUL_FD003.txt"] {
        std::fs::write(data.join(f), "10\n").unwrap();
    }
    let m = tmp.path().join("m.toml");
    let m = m.to_str().unwrap();
    assert!(dodem(tmp.path(), &["init", "--out", m, "--cmapss", data.to_str().unwrap()]).status.success());
    let out = dodem(&tmp.path().join("out"), &["-m", m, "ingest"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ingest_is_content_addressed() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("out");
    let m = tmp.path().join("m.toml");
    let m = m.to_str().unwrap();
    assert!(dodem(tmp.path(), &["init", "--out", m]).status.success());

    let first = dodem(&root, &["-m", m, "ingest"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let dirs = run_dirs(&root);
    assert_eq!(dirs.len(), 1);

    let again = dodem(&root, &["-m", m, "ingest"]);
    assert_eq!(again.stdout, first.stdout);
    assert_eq!(run_dirs(&root), dirs);

    let changed = dodem(&root, &["-m", m, "--set", "data.train_stride=7", "ingest"]);
    assert!(changed.status.success());
    assert_eq!(run_dirs(&root).len(), 2);
}
