#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn msecnn(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_msecnn"))
        .args(args)
        .output()
        .expect("spawn msecnn");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs and requires exit 0.
pub fn ok(args: &[&str]) -> String {
    let o = msecnn(args);
    assert_eq!(o.code, 0, "msecnn {args:?} failed:\n{}\n{}", o.stdout, o.stderr);
    o.stdout
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Relative path -> contents for every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Value following `key` on the last line that starts with `prefix`.
pub fn field(text: &str, prefix: &str, key: &str) -> Option<f64> {
    let line = text.lines().rev().find(|l| l.starts_with(prefix))?;
    let mut it = line.split_whitespace();
    while let Some(tok) = it.next() {
        if tok == key {
            return it.next()?.parse().ok();
        }
    }
    None
}

/// Macro ROC-AUC and PR-AUC from an eval report.
pub fn macro_row(report: &str) -> (f64, f64) {
    let row = report.lines().find(|l| l.starts_with("MACRO\t")).expect("MACRO row");
    let cols: Vec<&str> = row.split('\t').collect();
    (cols[2].parse().unwrap(), cols[3].parse().unwrap())
}

/// Synthesizes and extracts a desk-scale corpus; returns the cache dir.
pub fn synth_cache(root: &Path, n: usize, tags: usize, seed: u64, extra: &[&str]) -> PathBuf {
    let audio = root.join("audio");
    let cache = root.join("cache");
    let (n, tags, seed) = (n.to_string(), tags.to_string(), seed.to_string());
    let mut args = vec!["synth", "--n", &n, "--tags", &tags, "--seed", &seed, "--out", s(&audio)];
    args.extend_from_slice(extra);
    ok(&args);
    ok(&[
        "extract",
        "--annotations",
        s(&audio.join("annotations.tsv")),
        "--audio-root",
        s(&audio),
        "--cache-out",
        s(&cache),
        "--preset",
        "desk",
    ]);
    cache
}
