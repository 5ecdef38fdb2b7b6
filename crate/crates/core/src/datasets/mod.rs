//! Mapping datasets: paired `(x, y_pre)` samples for one normalization layer.
//!
//! `x` is the pre-normalization activation and `y_pre` the normalized value
//! with the per-channel affine transform removed.

mod io;
mod layernorm;
mod manifest;
mod synth;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_mappings, save_mappings, MAGIC};
pub use layernorm::{layernorm_forward, normalize_token, pre_affine_invert, AffineParams};
pub use manifest::{
    dataset_file_name, load_dataset_dir, prepare_splits, write_layer, Manifest, ManifestEntry, MANIFEST_FILE,
};
pub use synth::{layer_name, random_affine, synth_mappings, synth_suite, SuiteLayer, SynthProfile};

/// Points sampled from a layer's mapping pool per the extraction protocol.
pub const DEFAULT_SAMPLES: usize = 50_000;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("token has {0} features; LayerNorm needs at least 2")]
    TokenTooShort(usize),
    #[error("affine parameter length {params} does not match token length {token}")]
    ShapeMismatch { token: usize, params: usize },
    #[error("vanishing denominator w + eps = {0}")]
    VanishingDenominator(f64),
    #[error("need {needed} points, pool has {available}")]
    InsufficientPoints { needed: usize, available: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid synthetic profile: {0}")]
    InvalidProfile(String),
    /// `row` is 1-based.
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("x and y_pre columns differ in length ({x} vs {y})")]
    ColumnMismatch { x: usize, y: usize },
    #[error("malformed mapping file: {0}")]
    Malformed(String),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    /// An unsplit pool, as produced by synthesis or extraction.
    All,
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Extracted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub max_abs_x: f64,
    pub mean_x: f64,
    pub mean_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingDataset {
    pub layer_id: String,
    pub split: SplitTag,
    pub provenance: Provenance,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl MappingDataset {
    /// Validates that both columns are equally long, nonempty and finite.
    pub fn new(
        layer_id: impl Into<String>,
        xs: Vec<f64>,
        ys: Vec<f64>,
        split: SplitTag,
        provenance: Provenance,
    ) -> Result<Self, DatasetError> {
        if xs.len() != ys.len() {
            return Err(DatasetError::ColumnMismatch {
                x: xs.len(),
                y: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(DatasetError::Empty);
        }
        if let Some(row) = xs.iter().zip(&ys).position(|(x, y)| !(x.is_finite() && y.is_finite())) {
            return Err(DatasetError::NonFinite { row: row + 1 });
        }
        Ok(MappingDataset {
            layer_id: layer_id.into(),
            split,
            provenance,
            xs,
            ys,
        })
    }

    pub fn inputs(&self) -> &[f64] {
        &self.xs
    }

    pub fn targets(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn stats(&self) -> DatasetStats {
        let n = self.xs.len() as f64;
        DatasetStats {
            count: self.xs.len(),
            max_abs_x: self.xs.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            mean_x: self.xs.iter().sum::<f64>() / n,
            mean_y: self.ys.iter().sum::<f64>() / n,
        }
    }

    fn subset(&self, rows: &[usize], split: SplitTag) -> MappingDataset {
        MappingDataset {
            layer_id: self.layer_id.clone(),
            split,
            provenance: self.provenance,
            xs: rows.iter().map(|&i| self.xs[i]).collect(),
            ys: rows.iter().map(|&i| self.ys[i]).collect(),
        }
    }
}

/// Train and validation splits of one layer.
#[derive(Debug, Clone)]
pub struct LayerSplit {
    pub train: MappingDataset,
    pub val: MappingDataset,
}

impl LayerSplit {
    pub fn layer_id(&self) -> &str {
        &self.train.layer_id
    }
}

/// Draws `n` rows uniformly without replacement and splits them
/// `floor(train_fraction * n)` / rest, preserving draw order.
pub fn sample_and_split(
    pool: &MappingDataset,
    n: usize,
    train_fraction: f64,
    rng: &mut impl Rng,
) -> Result<LayerSplit, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidSplit(format!("train fraction {train_fraction}")));
    }
    if n > pool.len() {
        return Err(DatasetError::InsufficientPoints {
            needed: n,
            available: pool.len(),
        });
    }
    // Small slack so e.g. 0.29 * 100 does not floor to 28.
    let n_train = ((train_fraction * n as f64) + 1e-9).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(DatasetError::InvalidSplit(format!(
            "{n} points at fraction {train_fraction} leave an empty split"
        )));
    }
    let rows = rand::seq::index::sample(rng, pool.len(), n).into_vec();
    Ok(LayerSplit {
        train: pool.subset(&rows[..n_train], SplitTag::Train),
        val: pool.subset(&rows[n_train..], SplitTag::Val),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn pool(n: usize) -> MappingDataset {
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ys = xs.iter().map(|x| -x).collect();
        MappingDataset::new("layer", xs, ys, SplitTag::All, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn split_sizes() {
        let p = pool(60_000);
        let s = sample_and_split(&p, 50_000, 0.9, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (45_000, 5_000));
        let s = sample_and_split(&pool(10), 10, 0.9, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (9, 1));
        assert_eq!(s.train.split, SplitTag::Train);
        assert_eq!(s.val.split, SplitTag::Val);
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let p = pool(1000);
        for seed in 0..20 {
            let a = sample_and_split(&p, 500, 0.9, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = sample_and_split(&p, 500, 0.9, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a.train, b.train);
            assert_eq!(a.val, b.val);
            // x values are unique row ids in this pool
            let train: HashSet<u64> = a.train.inputs().iter().map(|x| x.to_bits()).collect();
            assert!(a.val.inputs().iter().all(|x| !train.contains(&x.to_bits())));
            assert_eq!(train.len(), 450);
        }
    }

    #[test]
    fn insufficient_points() {
        let err = sample_and_split(&pool(5), 10, 0.9, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::InsufficientPoints {
                needed: 10,
                available: 5
            }
        ));
    }

    #[test]
    fn rejects_non_finite_rows() {
        let err = MappingDataset::new(
            "l",
            vec![1.0, f64::NAN],
            vec![0.0, 0.0],
            SplitTag::All,
            Provenance::Synthetic,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::NonFinite { row: 2 }));
    }

    #[test]
    fn stats_are_recomputed_from_points() {
        let d = MappingDataset::new(
            "l",
            vec![-3.0, 1.0, 2.0],
            vec![0.0; 3],
            SplitTag::Train,
            Provenance::Synthetic,
        )
        .unwrap();
        assert_eq!(
            d.stats(),
            DatasetStats {
                count: 3,
                max_abs_x: 3.0,
                mean_x: 0.0,
                mean_y: 0.0
            }
        );
    }
}
