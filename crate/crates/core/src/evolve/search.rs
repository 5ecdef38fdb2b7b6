//! Layers x seeds search protocol and front persistence.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evolve_layer, select_best, EvolveError, FrontMember, GpConfig, LayerRun};
use crate::datasets::LayerSplit;

/// Column order of front and selection CSV files.
pub const FRONT_COLUMNS: [&str; 8] = [
    "layer_id",
    "seed",
    "expression",
    "fitness_train",
    "fitness_val",
    "mse_val",
    "r2_val",
    "node_count",
];

/// One row of a front or selection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRecord {
    pub layer_id: String,
    pub seed: u64,
    pub expression: String,
    pub fitness_train: f64,
    pub fitness_val: f64,
    pub mse_val: f64,
    pub r2_val: f64,
    pub node_count: usize,
}

impl FrontRecord {
    pub fn from_member(layer_id: &str, seed: u64, m: &FrontMember) -> Self {
        FrontRecord {
            layer_id: layer_id.to_string(),
            seed,
            expression: m.expression(),
            fitness_train: m.individual.fitness,
            fitness_val: m.fitness_val,
            mse_val: m.mse_val,
            r2_val: m.r2_val,
            node_count: m.individual.complexity,
        }
    }
}

pub fn write_front_csv(path: impl AsRef<Path>, records: &[FrontRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    if records.is_empty() {
        w.write_record(FRONT_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_front_csv(path: impl AsRef<Path>) -> Result<Vec<FrontRecord>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub layer_id: String,
    pub seed: u64,
    pub run: LayerRun,
    pub selected: FrontMember,
}

impl SearchResult {
    pub fn selected_record(&self) -> FrontRecord {
        FrontRecord::from_member(&self.layer_id, self.seed, &self.selected)
    }

    pub fn front_records(&self) -> Vec<FrontRecord> {
        self.run
            .front
            .members
            .iter()
            .map(|m| FrontRecord::from_member(&self.layer_id, self.seed, m))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchFailure {
    pub layer_id: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SearchOutcome {
    /// Layer-major, then in the order of the given seeds.
    pub results: Vec<SearchResult>,
    pub failures: Vec<SearchFailure>,
}

/// One independent search per `(layer, seed)`. A failed search is recorded
/// and the others continue.
pub fn run_search(layers: &[LayerSplit], config: &GpConfig, seeds: &[u64]) -> Result<SearchOutcome, EvolveError> {
    if layers.is_empty() {
        return Err(EvolveError::InvalidConfig("no layers to search".into()));
    }
    if seeds.is_empty() {
        return Err(EvolveError::InvalidConfig("no seeds given".into()));
    }
    config.validate()?;
    let jobs: Vec<(&LayerSplit, u64)> = layers.iter().flat_map(|l| seeds.iter().map(move |&s| (l, s))).collect();
    let done: Vec<Result<SearchResult, SearchFailure>> = jobs
        .into_par_iter()
        .map(|(layer, seed)| {
            let cfg = GpConfig { seed, ..*config };
            let attempt = evolve_layer(&layer.train, &layer.val, &cfg).and_then(|run| {
                let selected = select_best(&run.front)?.clone();
                Ok(SearchResult {
                    layer_id: layer.layer_id().to_string(),
                    seed,
                    run,
                    selected,
                })
            });
            attempt.map_err(|e| SearchFailure {
                layer_id: layer.layer_id().to_string(),
                seed,
                error: e.to_string(),
            })
        })
        .collect();
    let mut outcome = SearchOutcome::default();
    for d in done {
        match d {
            Ok(r) => outcome.results.push(r),
            Err(f) => outcome.failures.push(f),
        }
    }
    Ok(outcome)
}
