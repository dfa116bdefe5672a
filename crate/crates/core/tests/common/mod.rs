#![allow(dead_code)]

use std::path::{Path, PathBuf};

use factorvid::{LatentVideo, Shape};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn updating() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1")
}

/// Compares `v` with `tests/golden/<name>.json` element-wise within `tol`
/// (relative to max(1, |golden|)). Set UPDATE_GOLDEN=1 to rewrite the file.
pub fn check_golden(name: &str, v: &LatentVideo, tol: f64) {
    let path = golden_dir().join(format!("{name}.json"));
    let shape = v.shape().as_array();
    if updating() {
        let doc = serde_json::json!({ "shape": shape, "data": v.data() });
        std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap() + "\n").unwrap();
        return;
    }
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let want_shape: Vec<usize> = serde_json::from_value(doc["shape"].clone()).unwrap();
    let want: Vec<f64> = serde_json::from_value(doc["data"].clone()).unwrap();
    assert_eq!(want_shape, shape.to_vec(), "{name}: shape");
    assert_eq!(want.len(), v.data().len(), "{name}: length");
    for (i, (a, b)) in v.data().iter().zip(&want).enumerate() {
        assert!((a - b).abs() <= tol * b.abs().max(1.0), "{name}[{i}]: got {a}, golden {b}");
    }
}

/// Byte-for-byte comparison against `tests/golden/<name>`.
pub fn check_golden_bytes(name: &str, bytes: &[u8]) {
    let path = golden_dir().join(name);
    if updating() {
        std::fs::write(&path, bytes).unwrap();
        return;
    }
    let want = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(want == bytes, "{name}: bytes differ from golden");
}

pub fn random_latent(shape: Shape, seed: u64) -> LatentVideo {
    let mut r = factorvid::rng::seeded(seed);
    LatentVideo::from_vec(shape, factorvid::rng::normal_vec(&mut r, shape.len())).unwrap()
}
