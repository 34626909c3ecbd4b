//! IDX reader against a generated four-image fixture.

use std::path::PathBuf;

use dpadapter::data::{load_idx_dataset, parse_idx_images, parse_idx_labels};
use dpadapter::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn fixture_images_and_labels_parse() {
    let images = parse_idx_images(&std::fs::read(fixture("four-images-idx3-ubyte")).unwrap()).unwrap();
    assert_eq!(images.shape(), &[4, 784]);
    for i in 0..4 {
        for r in 0..28 {
            for c in 0..28 {
                let want = ((37 * i + 3 * r + 5 * c) % 256) as f64 / 255.0;
                assert_eq!(images.get(i, r * 28 + c), want, "image {i} pixel ({r}, {c})");
            }
        }
    }
    let labels = parse_idx_labels(&std::fs::read(fixture("four-labels-idx1-ubyte")).unwrap()).unwrap();
    assert_eq!(labels, vec![3, 1, 4, 1]);
}

#[test]
fn dataset_loader_standardises_features() {
    let ds = load_idx_dataset(&fixture("four-images-idx3-ubyte"), &fixture("four-labels-idx1-ubyte")).unwrap();
    assert_eq!((ds.len(), ds.input_dim(), ds.num_classes), (4, 784, 5));
    for j in [0, 100, 783] {
        let col: Vec<f64> = (0..4).map(|i| ds.features.get(i, j)).collect();
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
    }
}

#[test]
fn empty_file_is_a_format_error() {
    assert!(matches!(parse_idx_images(&[]), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(parse_idx_labels(&[]), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn wrong_magic_names_the_expected_value() {
    let labels = std::fs::read(fixture("four-labels-idx1-ubyte")).unwrap();
    let err = parse_idx_images(&labels).unwrap_err();
    assert!(err.to_string().contains("0x00000803"), "{err}");
}

#[test]
fn truncated_pixels_are_reported() {
    let mut bytes = std::fs::read(fixture("four-images-idx3-ubyte")).unwrap();
    bytes.truncate(16 + 3 * 784);
    assert!(matches!(parse_idx_images(&bytes), Err(Error::Format { .. })));
}
