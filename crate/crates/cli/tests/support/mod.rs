//! Helpers for driving the `ots` binary from tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ots_core::extract::ImageSource;
use ots_core::io::encode_pgm;
use ots_core::{FeatureMatrix, FeatureVector, PixelGrid};

pub fn ots(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ots"))
        .args(args)
        .output()
        .expect("run ots")
}

/// Runs `ots` and panics with its stderr unless it exits 0.
pub fn ots_ok(args: &[&str]) -> Output {
    let out = ots(args);
    assert!(
        out.status.success(),
        "ots {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub fn matrix(ids: Vec<String>, rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::new(ids, rows.iter().map(|r| FeatureVector::new(r.clone()).unwrap()).collect()).unwrap()
}

pub fn write_labels(path: &Path, pairs: &[(String, String)]) {
    let mut s = String::new();
    for (id, label) in pairs {
        writeln!(s, "{id}\t{label}").unwrap();
    }
    fs::write(path, s).unwrap();
}

/// Writes each image as a PGM next to an `id<TAB>file` list and returns the list path.
pub fn write_image_list(dir: &Path, name: &str, images: &[(String, PixelGrid)]) -> PathBuf {
    let mut list = String::new();
    for (id, grid) in images {
        let file = format!("{name}-{id}.pgm");
        fs::write(dir.join(&file), encode_pgm(grid)).unwrap();
        writeln!(list, "{id}\t{file}").unwrap();
    }
    let path = dir.join(format!("{name}.list"));
    fs::write(&path, list).unwrap();
    path
}

/// The image as the toy extractor will see it after an 8-bit PGM round trip.
pub fn as_stored(id: &str, grid: &PixelGrid) -> ImageSource {
    let back = ots_core::io::decode_pgm(&encode_pgm(grid)).unwrap();
    ImageSource::from_pixels(id, back)
}

pub fn read_tsv_value(path: &Path, key: &str) -> Option<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .find_map(|l| l.split_once('\t').filter(|(k, _)| *k == key).and_then(|(_, v)| v.parse().ok()))
}
