//! Directory manifests: one JSON file listing every layer's mapping file
//! with its checksum and summary statistics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_mappings, sample_and_split, save_mappings, DatasetError, LayerSplit, MappingDataset, Provenance};
use crate::rng::stream;

pub const MANIFEST_FILE: &str = "manifest.json";
const SPLIT_STREAM: u64 = 0x5350_4c54;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub layer_id: String,
    /// Relative to the manifest's directory.
    pub file: String,
    pub count: usize,
    pub max_abs_x: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    /// CRC32 of the file's bytes.
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    /// Free-form origin, e.g. a generator or model name.
    pub source: String,
    /// Generator or extraction settings.
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    /// Network order.
    pub layers: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        text.push('\n');
        std::fs::write(dir.as_ref().join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Manifest, DatasetError> {
        let text = std::fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))
    }
}

/// `<layer_id>.snmap`, or `.csv` for the text format.
pub fn dataset_file_name(layer_id: &str, csv: bool) -> String {
    let safe: String = layer_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.{}", if csv { "csv" } else { "snmap" })
}

/// Saves `ds` into `dir` and returns its manifest entry.
pub fn write_layer(dir: impl AsRef<Path>, ds: &MappingDataset, csv: bool) -> Result<ManifestEntry, DatasetError> {
    let file = dataset_file_name(&ds.layer_id, csv);
    let path = dir.as_ref().join(&file);
    save_mappings(ds, &path)?;
    let stats = ds.stats();
    Ok(ManifestEntry {
        layer_id: ds.layer_id.clone(),
        file,
        count: stats.count,
        max_abs_x: stats.max_abs_x,
        mean_x: stats.mean_x,
        mean_y: stats.mean_y,
        crc32: crc32fast::hash(&std::fs::read(&path)?),
    })
}

/// Loads every layer of a manifest directory, checking checksums, layer
/// ids, provenance and the recorded statistics.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<MappingDataset>), DatasetError> {
    let dir = dir.as_ref();
    let manifest = Manifest::load(dir)?;
    if manifest.layers.is_empty() {
        return Err(DatasetError::Manifest("no layers listed".into()));
    }
    let mut out = Vec::with_capacity(manifest.layers.len());
    for e in &manifest.layers {
        let path = dir.join(&e.file);
        let computed = crc32fast::hash(&std::fs::read(&path)?);
        if computed != e.crc32 {
            return Err(DatasetError::Checksum {
                stored: e.crc32,
                computed,
            });
        }
        let ds = load_mappings(&path)?;
        let bad = |what: &str| {
            Err(DatasetError::Manifest(format!(
                "{}: {what} differs from the manifest",
                e.file
            )))
        };
        if ds.layer_id != e.layer_id {
            return bad("layer id");
        }
        if ds.provenance != manifest.provenance {
            return bad("provenance");
        }
        let s = ds.stats();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()));
        if s.count != e.count
            || !close(s.max_abs_x, e.max_abs_x)
            || !close(s.mean_x, e.mean_x)
            || !close(s.mean_y, e.mean_y)
        {
            return bad("statistics");
        }
        out.push(ds);
    }
    Ok((manifest, out))
}

/// Samples `n` points per layer and splits them. Layer `i` draws from its
/// own stream of `seed`, so the split does not depend on the other layers.
pub fn prepare_splits(
    pools: &[MappingDataset],
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<LayerSplit>, DatasetError> {
    pools
        .iter()
        .enumerate()
        .map(|(i, pool)| sample_and_split(pool, n, train_fraction, &mut stream(seed, &[SPLIT_STREAM, i as u64])))
        .collect()
}
