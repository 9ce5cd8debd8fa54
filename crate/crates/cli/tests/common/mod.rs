#![allow(dead_code)]

use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn codelens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_codelens")).args(args).output().expect("spawn codelens")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Executable shell script in `dir`.
pub fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    path
}

/// Generator stub that records its arguments, one per line, and touches `--out`.
pub fn recording_generator(dir: &Path) -> (PathBuf, PathBuf) {
    let record = dir.join("generator_args.txt");
    let body = format!(
        r#"printf '%s\n' "$@" > '{}'
while [ $# -gt 0 ]; do
  if [ "$1" = "--out" ]; then : > "$2"; fi
  shift
done"#,
        record.display()
    );
    (script(dir, "generator.sh", &body), record)
}
