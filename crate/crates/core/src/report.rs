//! Run summaries: per-seed alignment statistics, per-layer expression
//! costs and the method-level cost/alignment trade-off.
//!
//! Standard deviations across seeds use the sample (n - 1) denominator; a
//! single seed reports a standard deviation of zero.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{
    aggregate_budget, expr_flops, Candidate, CostConvention, CostError, MbConvention, Method, ModelShape,
};
use crate::evolve::FrontRecord;
use crate::expr::{parse, Expr, ParseError};

/// Column order of the alignment CSV.
pub const ALIGNMENT_COLUMNS: [&str; 8] = crate::evolve::FRONT_COLUMNS;
/// Column order of the trade-off CSV.
pub const TRADEOFF_COLUMNS: [&str; 4] = ["method", "mflops", "read_mb", "mean_r2"];
pub const STD_CONVENTION: &str = "sample standard deviation (n - 1 denominator); 0 for a single seed";
pub const ACCURACY_AXIS: &str = "alignment R^2 against the LayerNorm mapping (stands in for task accuracy)";

const VERIFY_TOL: f64 = 1e-12;

/// JSON schema of [`RunSummary`].
pub const RUN_SUMMARY_SCHEMA: &str = include_str!("../schema/run_summary.schema.json");
/// JSON schema of [`TradeoffTable`].
pub const TRADEOFF_SCHEMA: &str = include_str!("../schema/tradeoff.schema.json");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no records to summarize")]
    Empty,
    #[error("duplicate record for layer {layer_id} seed {seed}")]
    Duplicate { layer_id: String, seed: u64 },
    #[error("seed {seed} covers a different layer set than seed {reference}")]
    RaggedSeeds { seed: u64, reference: u64 },
    #[error("missing input for method {0}")]
    MissingMethod(Method),
    #[error("bad expression {expression:?}: {source}")]
    Expression {
        expression: String,
        #[source]
        source: ParseError,
    },
    #[error("summary does not verify: {0}")]
    Verification(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One selected expression of one `(layer, seed)` search, with its
/// per-token FLOP coefficient on `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub layer_id: String,
    pub seed: u64,
    pub expression: String,
    pub fitness_train: f64,
    pub fitness_val: f64,
    pub mse_val: f64,
    pub r2_val: f64,
    pub node_count: usize,
    pub flops_coeff: u64,
}

impl SummaryRecord {
    pub fn from_front(r: &FrontRecord) -> Result<Self, ReportError> {
        let expr = parse_expr(&r.expression)?;
        Ok(SummaryRecord {
            layer_id: r.layer_id.clone(),
            seed: r.seed,
            expression: r.expression.clone(),
            fitness_train: r.fitness_train,
            fitness_val: r.fitness_val,
            mse_val: r.mse_val,
            r2_val: r.r2_val,
            node_count: r.node_count,
            flops_coeff: expr_flops(&expr, &CostConvention::default())?.coeff_d,
        })
    }

    pub fn to_front(&self) -> FrontRecord {
        FrontRecord {
            layer_id: self.layer_id.clone(),
            seed: self.seed,
            expression: self.expression.clone(),
            fitness_train: self.fitness_train,
            fitness_val: self.fitness_val,
            mse_val: self.mse_val,
            r2_val: self.r2_val,
            node_count: self.node_count,
        }
    }
}

fn parse_expr(s: &str) -> Result<Expr, ReportError> {
    parse(s).map_err(|source| ReportError::Expression {
        expression: s.to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMeans {
    pub seed: u64,
    pub mean_mse: f64,
    pub mean_r2: f64,
}

/// Layer-averaged alignment of a method without per-seed variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodAlignment {
    pub mean_mse: f64,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub method: Method,
    /// Mean over seeds for GP.
    pub flops: f64,
    pub mflops: f64,
    pub read_bytes: f64,
    pub read_mb: f64,
    pub ratio_vs_ln: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostContext {
    pub shape: ModelShape,
    pub mb_convention: MbConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub layers: Vec<String>,
    pub seeds: Vec<u64>,
    pub records: Vec<SummaryRecord>,
    pub seed_means: Vec<SeedMeans>,
    pub mse: MeanStd,
    pub r2: MeanStd,
    pub std_convention: String,
    pub dyt: Option<MethodAlignment>,
    pub cost_context: Option<CostContext>,
    pub costs: Vec<CostEntry>,
}

fn seed_means(records: &[SummaryRecord], seeds: &[u64]) -> Vec<SeedMeans> {
    seeds
        .iter()
        .map(|&seed| {
            let rows: Vec<&SummaryRecord> = records.iter().filter(|r| r.seed == seed).collect();
            let n = rows.len() as f64;
            SeedMeans {
                seed,
                mean_mse: rows.iter().map(|r| r.mse_val).sum::<f64>() / n,
                mean_r2: rows.iter().map(|r| r.r2_val).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Averages over layers within each seed, then takes mean and sample std
/// across seeds. Every seed must cover the same layers exactly once.
pub fn summarize_alignment(records: &[SummaryRecord]) -> Result<RunSummary, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut by_seed: BTreeMap<u64, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        if !by_seed.entry(r.seed).or_default().insert(&r.layer_id) {
            return Err(ReportError::Duplicate {
                layer_id: r.layer_id.clone(),
                seed: r.seed,
            });
        }
    }
    let (&reference, reference_layers) = by_seed.iter().next().expect("nonempty");
    if let Some((&seed, _)) = by_seed.iter().find(|(_, l)| *l != reference_layers) {
        return Err(ReportError::RaggedSeeds { seed, reference });
    }
    let mut layers: Vec<String> = Vec::new();
    for r in records {
        if !layers.contains(&r.layer_id) {
            layers.push(r.layer_id.clone());
        }
    }
    let seeds: Vec<u64> = by_seed.keys().copied().collect();
    let means = seed_means(records, &seeds);
    let mse = MeanStd::of(&means.iter().map(|m| m.mean_mse).collect::<Vec<_>>());
    let r2 = MeanStd::of(&means.iter().map(|m| m.mean_r2).collect::<Vec<_>>());
    Ok(RunSummary {
        layers,
        seeds,
        records: records.to_vec(),
        seed_means: means,
        mse,
        r2,
        std_convention: STD_CONVENTION.to_string(),
        dyt: None,
        cost_context: None,
        costs: Vec::new(),
    })
}

/// LN, DyT and GP budgets for `summary`'s layers. The GP entry averages
/// the totals of each seed's expression set.
pub fn compute_costs(
    summary: &RunSummary,
    shape: &ModelShape,
    mb: MbConvention,
) -> Result<Vec<CostEntry>, ReportError> {
    let conv = CostConvention::default();
    let ln = aggregate_budget(Candidate::Ln, shape, &conv, mb)?;
    let dyt = aggregate_budget(Candidate::Dyt, shape, &conv, mb)?;
    let entry = |method, t: &crate::cost::CostTotals| CostEntry {
        method,
        flops: t.flops as f64,
        mflops: t.mflops,
        read_bytes: t.read_bytes as f64,
        read_mb: t.read_mb,
        ratio_vs_ln: t.ratio_vs_ln,
    };
    let mut gp_totals = Vec::with_capacity(summary.seeds.len());
    for &seed in &summary.seeds {
        let mut exprs = Vec::with_capacity(summary.layers.len());
        for layer in &summary.layers {
            let r = summary
                .records
                .iter()
                .find(|r| r.seed == seed && &r.layer_id == layer)
                .expect("summaries cover every layer for every seed");
            exprs.push((layer.clone(), parse_expr(&r.expression)?));
        }
        gp_totals.push(aggregate_budget(Candidate::Gp(&exprs), shape, &conv, mb)?.totals);
    }
    let n = gp_totals.len() as f64;
    let mean = |f: fn(&crate::cost::CostTotals) -> f64| gp_totals.iter().map(f).sum::<f64>() / n;
    let gp = CostEntry {
        method: Method::Gp,
        flops: mean(|t| t.flops as f64),
        mflops: mean(|t| t.mflops),
        read_bytes: mean(|t| t.read_bytes as f64),
        read_mb: mean(|t| t.read_mb),
        ratio_vs_ln: mean(|t| t.ratio_vs_ln),
    };
    Ok(vec![entry(Method::Ln, &ln.totals), entry(Method::Dyt, &dyt.totals), gp])
}

impl RunSummary {
    pub fn attach_costs(&mut self, shape: &ModelShape, mb: MbConvention) -> Result<(), ReportError> {
        self.costs = compute_costs(self, shape, mb)?;
        self.cost_context = Some(CostContext {
            shape: *shape,
            mb_convention: mb,
        });
        Ok(())
    }

    pub fn attach_dyt(&mut self, alignment: MethodAlignment) {
        self.dyt = Some(alignment);
    }

    pub fn cost(&self, method: Method) -> Option<&CostEntry> {
        self.costs.iter().find(|c| c.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub method: Method,
    pub mflops: f64,
    pub read_mb: f64,
    pub mean_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffTable {
    pub accuracy_axis: String,
    pub shape: ModelShape,
    pub mb_convention: MbConvention,
    pub rows: Vec<TradeoffRow>,
}

/// One row per method. LayerNorm is the alignment reference, so its R^2
/// is 1 by construction.
pub fn emit_tradeoff(summary: &RunSummary) -> Result<TradeoffTable, ReportError> {
    let ctx = summary
        .cost_context
        .as_ref()
        .ok_or(ReportError::MissingMethod(Method::Ln))?;
    let mut rows = Vec::with_capacity(3);
    for method in Method::ALL {
        let cost = summary.cost(method).ok_or(ReportError::MissingMethod(method))?;
        let mean_r2 = match method {
            Method::Ln => 1.0,
            Method::Dyt => summary.dyt.ok_or(ReportError::MissingMethod(Method::Dyt))?.mean_r2,
            Method::Gp => summary.r2.mean,
        };
        rows.push(TradeoffRow {
            method,
            mflops: cost.mflops,
            read_mb: cost.read_mb,
            mean_r2,
        });
    }
    Ok(TradeoffTable {
        accuracy_axis: ACCURACY_AXIS.to_string(),
        shape: ctx.shape,
        mb_convention: ctx.mb_convention,
        rows,
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VERIFY_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Recomputes every derived statistic of `summary` from its records.
pub fn verify_summary(summary: &RunSummary) -> Result<(), ReportError> {
    let fresh = summarize_alignment(&summary.records)?;
    let bad = |what: &str| Err(ReportError::Verification(what.to_string()));
    if fresh.layers != summary.layers || fresh.seeds != summary.seeds {
        return bad("layer or seed list");
    }
    if fresh.seed_means.len() != summary.seed_means.len() {
        return bad("seed means count");
    }
    for (a, b) in fresh.seed_means.iter().zip(&summary.seed_means) {
        if a.seed != b.seed || !close(a.mean_mse, b.mean_mse) || !close(a.mean_r2, b.mean_r2) {
            return bad(&format!("seed {} means", b.seed));
        }
    }
    for (name, a, b) in [("mse", fresh.mse, summary.mse), ("r2", fresh.r2, summary.r2)] {
        if !(b.std >= 0.0) || !close(a.mean, b.mean) || !close(a.std, b.std) {
            return bad(name);
        }
    }
    let conv = CostConvention::default();
    for r in &summary.records {
        if expr_flops(&parse_expr(&r.expression)?, &conv)?.coeff_d != r.flops_coeff {
            return bad(&format!("flops of {} seed {}", r.layer_id, r.seed));
        }
    }
    if let Some(ctx) = &summary.cost_context {
        let costs = compute_costs(summary, &ctx.shape, ctx.mb_convention)?;
        if costs.len() != summary.costs.len() {
            return bad("cost entries");
        }
        for (a, b) in costs.iter().zip(&summary.costs) {
            let same = a.method == b.method
                && close(a.flops, b.flops)
                && close(a.mflops, b.mflops)
                && close(a.read_bytes, b.read_bytes)
                && close(a.read_mb, b.read_mb)
                && close(a.ratio_vs_ln, b.ratio_vs_ln);
            if !same {
                return bad(&format!("{} cost", b.method));
            }
        }
    }
    Ok(())
}

pub fn write_alignment_csv(path: impl AsRef<Path>, summary: &RunSummary) -> Result<(), ReportError> {
    let rows: Vec<FrontRecord> = summary.records.iter().map(SummaryRecord::to_front).collect();
    crate::evolve::write_front_csv(path, &rows)?;
    Ok(())
}

pub fn read_alignment_csv(path: impl AsRef<Path>) -> Result<Vec<FrontRecord>, ReportError> {
    Ok(crate::evolve::read_front_csv(path)?)
}

pub fn write_tradeoff_csv(path: impl AsRef<Path>, table: &TradeoffTable) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRADEOFF_COLUMNS)?;
    for r in &table.rows {
        w.write_record([
            r.method.label().to_string(),
            format!("{:?}", r.mflops),
            format!("{:?}", r.read_mb),
            format!("{:?}", r.mean_r2),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tradeoff_csv(path: impl AsRef<Path>) -> Result<Vec<TradeoffRow>, ReportError> {
    let mut rows = Vec::new();
    for rec in csv::Reader::from_path(path)?.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_summary_json(path: impl AsRef<Path>) -> Result<RunSummary, ReportError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
