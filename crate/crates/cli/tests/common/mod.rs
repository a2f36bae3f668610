#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use randers_cli::{Overrides, RunManifest};

pub const EXPERIMENTS: [&str; 6] = ["flow", "lipschitz", "concentration", "sphere", "wep", "gravity"];

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn workspace_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn run_config(config: &Path, out: &Path) -> RunManifest {
    let cfg = randers_cli::load(config).unwrap_or_else(|e| panic!("{}: {e}", config.display()));
    randers_cli::run(&cfg, &Overrides { seed: None, out: Some(out.to_path_buf()) })
        .unwrap_or_else(|e| panic!("{}: {e}", config.display()))
}

pub fn run_golden(experiment: &str, out: &Path) -> RunManifest {
    run_config(&golden_dir().join("configs").join(format!("{experiment}.toml")), out)
}

/// Every `.csv` in `dir`, by file name.
pub fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).expect("readable dir") {
        let path = entry.expect("dir entry").path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, std::fs::read(&path).expect("readable csv"));
        }
    }
    out
}

/// Names of files that differ, are missing, or are extra.
pub fn diff_files(expected: &BTreeMap<String, Vec<u8>>, got: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut bad: Vec<String> = expected
        .iter()
        .filter(|(k, v)| got.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    bad.extend(got.keys().filter(|k| !expected.contains_key(*k)).cloned());
    bad
}

/// Compares `dir` to the stored golden files of `experiment`, or replaces them when
/// `UPDATE_GOLDEN` is set.
pub fn check_golden(experiment: &str, dir: &Path) -> Vec<String> {
    let stored = golden_dir().join(experiment);
    let got = csv_files(dir);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let _ = std::fs::remove_dir_all(&stored);
        std::fs::create_dir_all(&stored).unwrap();
        for (name, bytes) in &got {
            std::fs::write(stored.join(name), bytes).unwrap();
        }
        return Vec::new();
    }
    if !stored.is_dir() {
        return vec![format!("no golden files in {}; rerun with UPDATE_GOLDEN=1", stored.display())];
    }
    diff_files(&csv_files(&stored), &got)
}
