//! The homogeneous `tanh(alpha * x)` baseline with a least-squares `alpha`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::MappingDataset;
use crate::expr::{evaluate, Expr};
use crate::fitness::{mse, r_squared, FitnessError};

pub const DEFAULT_ALPHA_INTERVAL: (f64, f64) = (0.0, 32.0);
pub const DEFAULT_ALPHA_TOL: f64 = 1e-6;
const SCAN_POINTS: usize = 64;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("dataset is empty")]
    Empty,
    #[error("degenerate search interval [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("layer sets differ: {0}")]
    LayerMismatch(String),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DytFit {
    pub layer_id: String,
    pub alpha: f64,
    pub mse: f64,
    /// `None` when the targets are constant.
    pub r2: Option<f64>,
}

pub fn dyt_eval(alpha: f64, inputs: &[f64]) -> Vec<f64> {
    inputs.iter().map(|x| (alpha * x).tanh()).collect()
}

/// `sum (tanh(alpha x) - y)^2`.
pub fn dyt_objective(alpha: f64, inputs: &[f64], targets: &[f64]) -> f64 {
    inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| {
            let r = (alpha * x).tanh() - y;
            r * r
        })
        .sum()
}

fn r2_or_none(pred: &[f64], targets: &[f64]) -> Result<Option<f64>, FitnessError> {
    match r_squared(pred, targets) {
        Ok(v) => Ok(Some(v)),
        Err(FitnessError::ConstantTarget) | Err(FitnessError::TooFewSamples { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Minimizes the squared error over `alpha` in `[lo, hi]`: a 64-point scan
/// brackets the best grid cell, then golden-section search narrows it to
/// `tol`. The scan guards against non-unimodal objectives.
pub fn fit_dyt_alpha(data: &MappingDataset, interval: (f64, f64), tol: f64) -> Result<DytFit, BaselineError> {
    let (lo, hi) = interval;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(BaselineError::DegenerateInterval { lo, hi });
    }
    if !(tol > 0.0) {
        return Err(BaselineError::InvalidTolerance(tol));
    }
    let (xs, ys) = (data.inputs(), data.targets());
    if xs.is_empty() {
        return Err(BaselineError::Empty);
    }
    let g = |a: f64| dyt_objective(a, xs, ys);

    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|i| lo + step * i as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&a| g(a)).collect();
    let best = (0..SCAN_POINTS)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("nonempty grid");

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(SCAN_POINTS - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > tol {
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = g(d);
        }
    }
    let mid = 0.5 * (a + b);
    // Never worse than the best grid point or the bracket ends.
    let alpha = [mid, grid[best], a, b]
        .into_iter()
        .min_by(|p, q| g(*p).total_cmp(&g(*q)))
        .expect("nonempty");

    let pred = dyt_eval(alpha, xs);
    Ok(DytFit {
        layer_id: data.layer_id.clone(),
        alpha,
        mse: mse(&pred, ys)?,
        r2: r2_or_none(&pred, ys)?,
    })
}

/// Fits every layer in parallel with the default interval and tolerance.
pub fn fit_dyt_all(datasets: &[MappingDataset]) -> Result<Vec<DytFit>, BaselineError> {
    datasets
        .par_iter()
        .map(|d| fit_dyt_alpha(d, DEFAULT_ALPHA_INTERVAL, DEFAULT_ALPHA_TOL))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub layer_id: String,
    pub gp_expression: String,
    pub gp_mse: f64,
    pub gp_r2: f64,
    pub dyt_alpha: f64,
    pub dyt_mse: f64,
    pub dyt_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentComparison {
    pub rows: Vec<ComparisonRow>,
    pub gp_mean_mse: f64,
    pub gp_mean_r2: f64,
    pub dyt_mean_mse: f64,
    pub dyt_mean_r2: f64,
}

/// Scores one expression per layer and one DyT fit per layer on `datasets`.
/// All three inputs must name the same layers; rows follow `datasets`.
pub fn compare_alignment(
    gp_selected: &[(String, Expr)],
    dyt_fits: &[DytFit],
    datasets: &[MappingDataset],
) -> Result<AlignmentComparison, BaselineError> {
    if gp_selected.len() != datasets.len() || dyt_fits.len() != datasets.len() {
        return Err(BaselineError::LayerMismatch(format!(
            "{} GP expressions, {} DyT fits, {} datasets",
            gp_selected.len(),
            dyt_fits.len(),
            datasets.len()
        )));
    }
    let mut rows = Vec::with_capacity(datasets.len());
    for data in datasets {
        let id = &data.layer_id;
        let (_, expr) = gp_selected
            .iter()
            .find(|(l, _)| l == id)
            .ok_or_else(|| BaselineError::LayerMismatch(format!("no GP expression for {id}")))?;
        let fit = dyt_fits
            .iter()
            .find(|f| &f.layer_id == id)
            .ok_or_else(|| BaselineError::LayerMismatch(format!("no DyT fit for {id}")))?;
        let gp_pred = evaluate(expr, data.inputs()).map_err(FitnessError::from)?;
        let dyt_pred = dyt_eval(fit.alpha, data.inputs());
        rows.push(ComparisonRow {
            layer_id: id.clone(),
            gp_expression: expr.to_string(),
            gp_mse: mse(&gp_pred, data.targets())?,
            gp_r2: r_squared(&gp_pred, data.targets())?,
            dyt_alpha: fit.alpha,
            dyt_mse: mse(&dyt_pred, data.targets())?,
            dyt_r2: r_squared(&dyt_pred, data.targets())?,
        });
    }
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(AlignmentComparison {
        gp_mean_mse: mean(|r| r.gp_mse),
        gp_mean_r2: mean(|r| r.gp_r2),
        dyt_mean_mse: mean(|r| r.dyt_mse),
        dyt_mean_r2: mean(|r| r.dyt_r2),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Provenance, SplitTag};
    use crate::expr::parse;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(xs: Vec<f64>, f: impl Fn(f64) -> f64) -> MappingDataset {
        let ys = xs.iter().map(|&x| f(x)).collect();
        MappingDataset::new("l", xs, ys, SplitTag::Train, Provenance::Synthetic).unwrap()
    }

    fn uniform(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
    }

    #[test]
    fn recovers_alpha_two() {
        let d = dataset(uniform(2000, 1), |x| (2.0 * x).tanh());
        let fit = fit_dyt_alpha(&d, DEFAULT_ALPHA_INTERVAL, DEFAULT_ALPHA_TOL).unwrap();
        assert!((fit.alpha - 2.0).abs() < 0.01, "{}", fit.alpha);
        assert!(fit.mse < 1e-12);
    }

    #[test]
    fn zero_targets_give_zero_alpha() {
        let d = dataset(uniform(100, 2), |_| 0.0);
        let fit = fit_dyt_alpha(&d, DEFAULT_ALPHA_INTERVAL, DEFAULT_ALPHA_TOL).unwrap();
        assert!(fit.alpha.abs() <= DEFAULT_ALPHA_TOL);
        assert_eq!(fit.r2, None);
    }

    #[test]
    fn beats_random_probes() {
        let d = dataset(uniform(500, 3), |x| 1.7 * (0.8 * x).tanh() + 0.1 * x);
        let fit = fit_dyt_alpha(&d, DEFAULT_ALPHA_INTERVAL, DEFAULT_ALPHA_TOL).unwrap();
        let g_fit = dyt_objective(fit.alpha, d.inputs(), d.targets());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let a = rng.random_range(0.0..32.0);
            assert!(g_fit <= dyt_objective(a, d.inputs(), d.targets()));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = dataset(uniform(10, 5), |x| x);
        assert!(fit_dyt_alpha(&d, (1.0, 1.0), 1e-6).is_err());
        assert!(fit_dyt_alpha(&d, (-1.0, 1.0), 1e-6).is_err());
        assert!(fit_dyt_alpha(&d, (0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn eval_matches_expression_and_is_bounded() {
        let xs = uniform(1000, 6);
        assert_eq!(dyt_eval(1.0, &xs), evaluate(&parse("tanh(x)").unwrap(), &xs).unwrap());
        assert!(dyt_eval(0.0, &xs).iter().all(|&v| v == 0.0));
        assert!(dyt_eval(3.0, &xs).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn comparison_rows_and_perfect_gp() {
        let d = dataset(uniform(300, 7), |x| 0.5 * x + 0.2);
        let fit = fit_dyt_alpha(&d, DEFAULT_ALPHA_INTERVAL, DEFAULT_ALPHA_TOL).unwrap();
        let gp = vec![("l".to_string(), parse("0.5*x + 0.2").unwrap())];
        let cmp = compare_alignment(&gp, std::slice::from_ref(&fit), std::slice::from_ref(&d)).unwrap();
        assert_eq!(cmp.rows.len(), 1);
        assert!(cmp.rows[0].gp_mse < 1e-20);
        assert!((cmp.gp_mean_r2 - 1.0).abs() < 1e-12);
        assert!(cmp.dyt_mean_r2 < 1.0);
        let other = vec![("m".to_string(), parse("x").unwrap())];
        assert!(compare_alignment(&other, &[fit], &[d]).is_err());
    }
}
