//! Byte-level determinism: every experiment against its stored CSV output.
//! Regenerate with `UPDATE_GOLDEN=1 cargo test -p randers-cli --test golden`.

mod common;

use common::{check_golden, csv_files, run_golden};

fn golden(experiment: &str) {
    let dir = tempfile::tempdir().unwrap();
    run_golden(experiment, dir.path());
    let bad = check_golden(experiment, dir.path());
    assert!(bad.is_empty(), "{experiment}: differing files {bad:?}");
}

#[test]
fn flow_golden() {
    golden("flow");
}

#[test]
fn lipschitz_golden() {
    golden("lipschitz");
}

#[test]
fn concentration_golden() {
    golden("concentration");
}

#[test]
fn sphere_golden() {
    golden("sphere");
}

#[test]
fn wep_golden() {
    golden("wep");
}

#[test]
fn gravity_golden() {
    golden("gravity");
}

#[test]
fn single_thread_matches_default_pool() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_golden("sphere", a.path());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| run_golden("sphere", b.path()));
    assert_eq!(csv_files(a.path()), csv_files(b.path()));
}

#[test]
fn manifest_hashes_match_files() {
    use sha2::{Digest, Sha256};
    let dir = tempfile::tempdir().unwrap();
    let m = run_golden("gravity", dir.path());
    assert_eq!(m.files.len(), 2);
    for f in &m.files {
        let bytes = std::fs::read(dir.path().join(&f.name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256);
        assert_eq!(bytes.len(), f.bytes);
    }
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["root_seed"], 16);
    assert_eq!(v["experiment"], "gravity");
}
