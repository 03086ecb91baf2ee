use std::path::PathBuf;

use ahgnn::{load_dataset, save_dataset, DatasetError, Split};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

#[test]
fn fixture_loads() {
    let g = load_dataset(fixture()).unwrap();
    assert_eq!(g.node_types(), ["A", "B"]);
    assert_eq!(g.target_type(), "A");
    assert_eq!(g.labels(), [0, 1, 1]);
    assert_eq!(g.splits(), [Split::Train, Split::Val, Split::Test]);
    let ab = g.relation("A", "B").unwrap();
    assert_eq!(ab.get(0, 1), 2.0);
    assert_eq!(ab.nnz(), 3);
    assert_eq!(g.relation("B", "A").unwrap().get(1, 0), 2.0);
    assert_eq!(g.features("B").unwrap().row(1), [-1.0, 0.0, 4.0]);
}

#[test]
fn save_then_load_is_identical() {
    let g = load_dataset(fixture()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&g, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, g);
    for f in [
        "manifest.json",
        "edges_A_B.tsv",
        "features_A.tsv",
        "labels_A.tsv",
        "splits.tsv",
    ] {
        let a = std::fs::read(fixture().join(f)).unwrap();
        let b = std::fs::read(dir.path().join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn missing_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(dir.path().join("absent")).unwrap_err();
    assert!(matches!(err, DatasetError::MissingManifest(_)), "{err:?}");
}
