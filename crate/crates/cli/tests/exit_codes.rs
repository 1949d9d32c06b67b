use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nhuman"))
}

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn synth_gen_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let status = code(
        bin()
            .args(["synth-gen", "--config"])
            .arg(smoke())
            .arg("--out")
            .arg(dir.path()),
    );
    assert_eq!(status, 0);
    assert!(dir.path().join("plays.json").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = code(
        bin()
            .args(["train", "--config", "/nonexistent/config.toml", "--out"])
            .arg(dir.path()),
    );
    assert_eq!(missing, 2);

    let negative = code(
        bin()
            .args(["train", "--radius", "-1", "--config"])
            .arg(smoke())
            .arg("--out")
            .arg(dir.path()),
    );
    assert_eq!(negative, 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"one\"\n").unwrap();
    let malformed = code(
        bin()
            .args(["eval", "--config"])
            .arg(&bad)
            .arg("--out")
            .arg(dir.path()),
    );
    assert_eq!(malformed, 2);

    assert_eq!(code(bin().args(["no-such-command"])), 2);
}

#[test]
fn runtime_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let status = code(
        bin()
            .args(["eval", "--config"])
            .arg(smoke())
            .arg("--checkpoint")
            .arg(dir.path().join("absent.json"))
            .arg("--out")
            .arg(dir.path()),
    );
    assert_eq!(status, 3);
}

#[test]
fn help_exits_0() {
    assert_eq!(code(bin().arg("--help")), 0);
}
