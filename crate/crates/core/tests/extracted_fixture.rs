use std::path::PathBuf;

use gpnorm::datasets::{load_dataset_dir, prepare_splits, save_mappings, Provenance};

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/extracted")
}

#[test]
fn loads_with_extracted_provenance_and_no_rejected_rows() {
    let (manifest, data) = load_dataset_dir(fixture_dir()).unwrap();
    assert_eq!(manifest.provenance, Provenance::Extracted);
    assert_eq!(data.len(), 3);
    for (entry, ds) in manifest.layers.iter().zip(&data) {
        assert_eq!(ds.provenance, Provenance::Extracted);
        assert_eq!(ds.len(), entry.count);
        assert_eq!(ds.len(), 256);
        // Normalized values of a d = 48 token are bounded by sqrt(d - 1).
        assert!(ds.targets().iter().all(|y| y.abs() <= 47f64.sqrt()));
    }
}

#[test]
fn rust_writer_reproduces_python_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, data) = load_dataset_dir(fixture_dir()).unwrap();
    for (entry, ds) in manifest.layers.iter().zip(&data) {
        let out = dir.path().join(&entry.file);
        save_mappings(ds, &out).unwrap();
        if entry.file.ends_with(".csv") {
            // Python spells exponents `e-05`, Rust `e-5`; compare values.
            assert_eq!(&gpnorm::datasets::load_mappings(&out).unwrap(), ds);
            continue;
        }
        assert_eq!(
            std::fs::read(&out).unwrap(),
            std::fs::read(fixture_dir().join(&entry.file)).unwrap(),
            "{}",
            entry.file
        );
    }
}

#[test]
fn extracted_layers_feed_the_search() {
    let (_, data) = load_dataset_dir(fixture_dir()).unwrap();
    let splits = prepare_splits(&data, 200, 0.9, 1).unwrap();
    let config = gpnorm::evolve::GpConfig {
        population_size: 20,
        generations: 2,
        ..Default::default()
    };
    let out = gpnorm::evolve::run_search(&splits, &config, &[0]).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.results.len(), 3);
}
