//! Hand-assembled IDX files: two 2x3 images with two channels, labels 3 and 0.

use std::path::PathBuf;

use sknn::data::{load_idx, write_idx_images, write_idx_labels};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn rank4_fixture_loads_in_row_major_channel_last_order() {
    let data = load_idx(fixture("tiny-images.idx"), fixture("tiny-labels.idx")).unwrap();
    assert_eq!(data.len(), 2);
    assert_eq!(data.labels(), [3, 0]);
    assert_eq!(data.classes(), 4);
    assert_eq!(data.image_shape(), Some([2, 3, 2]));
    // payload byte i is (23 i) mod 256, laid out as n, row, col, channel
    for (s, img) in data.images().iter().enumerate() {
        for r in 0..2 {
            for c in 0..3 {
                for ch in 0..2 {
                    let i = ((s * 2 + r) * 3 + c) * 2 + ch;
                    let expect = ((i * 23) % 256) as f64 / 255.0;
                    assert_eq!(img.get(&[r, c, ch]), expect, "sample {s} ({r},{c},{ch})");
                }
            }
        }
    }
}

#[test]
fn writer_reproduces_the_fixture_bytes() {
    let data = load_idx(fixture("tiny-images.idx"), fixture("tiny-labels.idx")).unwrap();
    let mut images = Vec::new();
    write_idx_images(data.images(), &mut images).unwrap();
    assert_eq!(images, std::fs::read(fixture("tiny-images.idx")).unwrap());
    let mut labels = Vec::new();
    write_idx_labels(data.labels(), &mut labels).unwrap();
    assert_eq!(labels, std::fs::read(fixture("tiny-labels.idx")).unwrap());
}

#[test]
fn mismatched_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.idx");
    let mut bytes = Vec::new();
    write_idx_labels(&[1, 2, 0], &mut bytes).unwrap();
    std::fs::write(&labels, bytes).unwrap();
    assert!(load_idx(fixture("tiny-images.idx"), &labels).is_err());
}
