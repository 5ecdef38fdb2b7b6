use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gpnorm::baselines::{dyt_eval, fit_dyt_all};
use gpnorm::cost::{aggregate_budget, layernorm_itemization, Candidate, CostConvention, CostReport, LnStep, Method};
use gpnorm::datasets::{
    layer_name, load_dataset_dir, prepare_splits, synth_suite, write_layer, LayerSplit, Manifest, MappingDataset,
    Provenance, SuiteLayer, SynthProfile,
};
use gpnorm::evolve::{run_search, write_front_csv, FrontRecord, GpConfig};
use gpnorm::fitness::{mse, r_squared};
use gpnorm::report::{
    emit_tradeoff, summarize_alignment, verify_summary, write_alignment_csv, write_json, write_tradeoff_csv,
    MethodAlignment, SummaryRecord,
};
use serde::{Deserialize, Serialize};

use crate::{BaselineMethod, CostArgs, EvolveArgs, FitDytArgs, ProfileArg, ReportArgs, SamplingArgs, SynthArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    ensure!(a.layers >= 1, "--layers must be at least 1");
    let suite: Vec<SuiteLayer> = match a.profile {
        ProfileArg::Suite => synth_suite(a.layers, a.amplitude),
        p => {
            let profile = match p {
                ProfileArg::Linear => SynthProfile::Linear { scale: 1.0 },
                ProfileArg::SShaped => SynthProfile::SShaped { amplitude: a.amplitude },
                _ => SynthProfile::Mixed {
                    amplitude: a.amplitude,
                    outlier_fraction: 0.5,
                },
            };
            (0..a.layers)
                .map(|i| SuiteLayer {
                    layer_id: layer_name(i, a.layers),
                    profile,
                })
                .collect()
        }
    };
    create_dir(&a.out)?;
    let mut entries = Vec::with_capacity(suite.len());
    for (i, layer) in suite.iter().enumerate() {
        let ds = layer
            .generate(i, a.d, a.n_tokens, a.seed)
            .with_context(|| format!("generating {}", layer.layer_id))?;
        entries.push(write_layer(&a.out, &ds, a.csv)?);
    }
    let mut params = BTreeMap::new();
    params.insert(
        "profile".into(),
        serde_json::to_value(format!("{:?}", a.profile).to_lowercase())?,
    );
    params.insert("layers".into(), serde_json::to_value(&suite)?);
    params.insert("d".into(), a.d.into());
    params.insert("n_tokens".into(), a.n_tokens.into());
    params.insert("seed".into(), a.seed.into());
    Manifest {
        provenance: Provenance::Synthetic,
        source: "gpnorm synth".into(),
        params,
        layers: entries,
    }
    .save(&a.out)?;
    eprintln!("wrote {} layers to {}", suite.len(), a.out.display());
    Ok(())
}

fn load_splits(data: &Path, s: &SamplingArgs) -> Result<(Manifest, Vec<LayerSplit>)> {
    let (manifest, pools) = load_dataset_dir(data).with_context(|| format!("loading {}", data.display()))?;
    let splits = prepare_splits(&pools, s.samples, s.train_fraction, s.seed)?;
    Ok((manifest, splits))
}

/// Everything needed to reproduce an `evolve` run.
#[derive(Debug, Serialize, Deserialize)]
struct RunConfig {
    data: PathBuf,
    samples: usize,
    train_fraction: f64,
    split_seed: u64,
    seeds: Vec<u64>,
    gp: GpConfig,
}

pub fn evolve(a: &EvolveArgs) -> Result<()> {
    let seeds = a.seeds();
    ensure!(!seeds.is_empty(), "no search seeds");
    let config = a.gp.config();
    config.validate()?;
    let (manifest, splits) = load_splits(&a.data, &a.sampling)?;

    create_dir(&a.out.join("fronts"))?;
    write_json(
        a.out.join("config.json"),
        &RunConfig {
            data: a.data.clone(),
            samples: a.sampling.samples,
            train_fraction: a.sampling.train_fraction,
            split_seed: a.sampling.seed,
            seeds: seeds.clone(),
            gp: config,
        },
    )?;
    write_json(a.out.join("data_manifest.json"), &manifest)?;

    eprintln!("searching {} layers x {} seeds", splits.len(), seeds.len());
    let outcome = run_search(&splits, &config, &seeds)?;
    for r in &outcome.results {
        let name = format!("{}__seed{}.csv", r.layer_id.replace(['/', '\\'], "_"), r.seed);
        write_front_csv(a.out.join("fronts").join(name), &r.front_records())?;
    }
    if !outcome.failures.is_empty() {
        write_json(a.out.join("failures.json"), &outcome.failures)?;
        bail!(
            "{} of {} searches failed; see {}",
            outcome.failures.len(),
            splits.len() * seeds.len(),
            a.out.join("failures.json").display()
        );
    }
    let selected: Vec<FrontRecord> = outcome.results.iter().map(|r| r.selected_record()).collect();
    ensure!(
        selected.iter().all(|r| r.node_count <= config.max_nodes),
        "selected expression exceeds the node limit"
    );
    write_front_csv(a.out.join("selected.csv"), &selected)?;
    let records = selected
        .iter()
        .map(SummaryRecord::from_front)
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize_alignment(&records)?;
    verify_summary(&summary)?;
    write_json(a.out.join("summary.json"), &summary)?;
    eprintln!(
        "mean val MSE {:.6} +- {:.6}, mean val R2 {:.4} +- {:.4}",
        summary.mse.mean, summary.mse.std, summary.r2.mean, summary.r2.std
    );
    Ok(())
}

/// One row of the `fit-dyt` output. `mse`/`r2` are on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DytRecord {
    layer_id: String,
    alpha: f64,
    mse: f64,
    r2: Option<f64>,
    mse_val: f64,
    r2_val: Option<f64>,
}

pub fn fit_dyt(a: &FitDytArgs) -> Result<()> {
    let (_, splits) = load_splits(&a.data, &a.sampling)?;
    let train: Vec<MappingDataset> = splits.iter().map(|s| s.train.clone()).collect();
    let fits = fit_dyt_all(&train)?;
    let mut w = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    for (fit, split) in fits.iter().zip(&splits) {
        let pred = dyt_eval(fit.alpha, split.val.inputs());
        w.serialize(DytRecord {
            layer_id: fit.layer_id.clone(),
            alpha: fit.alpha,
            mse: fit.mse,
            r2: fit.r2,
            mse_val: mse(&pred, split.val.targets())?,
            r2_val: r_squared(&pred, split.val.targets()).ok(),
        })?;
    }
    w.flush()?;
    eprintln!("fitted {} layers", fits.len());
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ExpressionRow {
    layer_id: String,
    expression: String,
}

#[derive(Debug, Serialize)]
struct CostOutput {
    #[serde(flatten)]
    report: CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    itemization: Option<Vec<LnStep>>,
}

pub fn cost(a: &CostArgs) -> Result<()> {
    let conv = CostConvention::default();
    let mb = a.shape.mb();
    let out = match (&a.expressions, a.method) {
        (Some(path), _) => {
            let mut exprs = Vec::new();
            let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
            for row in rdr.deserialize() {
                let row: ExpressionRow = row?;
                ensure!(
                    exprs.iter().all(|(l, _)| l != &row.layer_id),
                    "layer {} appears more than once in {}",
                    row.layer_id,
                    path.display()
                );
                let e = gpnorm::parse(&row.expression)
                    .with_context(|| format!("layer {}: {:?}", row.layer_id, row.expression))?;
                exprs.push((row.layer_id, e));
            }
            ensure!(!exprs.is_empty(), "{} has no expressions", path.display());
            let shape = a.shape.shape(exprs.len());
            CostOutput {
                report: aggregate_budget(Candidate::Gp(&exprs), &shape, &conv, mb)?,
                itemization: None,
            }
        }
        (None, Some(BaselineMethod::Ln)) => CostOutput {
            report: aggregate_budget(Candidate::Ln, &a.shape.shape(a.n_layers), &conv, mb)?,
            itemization: Some(layernorm_itemization(&conv)),
        },
        (None, Some(BaselineMethod::Dyt)) => CostOutput {
            report: aggregate_budget(Candidate::Dyt, &a.shape.shape(a.n_layers), &conv, mb)?,
            itemization: None,
        },
        (None, None) => bail!("give --expressions or --method"),
    };
    let mut text = serde_json::to_string_pretty(&out)?;
    text.push('\n');
    match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn require(path: &Path, method: Method, producer: &str) -> Result<()> {
    if !path.is_file() {
        bail!(
            "missing input for method {method}: {} not found (produce it with `gpnorm {producer}`)",
            path.display()
        );
    }
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let selected_path = a.run.join("selected.csv");
    let dyt_path = a.dyt.clone().unwrap_or_else(|| a.run.join("dyt.csv"));
    require(&selected_path, Method::Gp, "evolve")?;
    require(&dyt_path, Method::Dyt, "fit-dyt")?;

    let selected = gpnorm::evolve::read_front_csv(&selected_path)?;
    let records = selected
        .iter()
        .map(SummaryRecord::from_front)
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = summarize_alignment(&records)?;

    let mut dyt: Vec<DytRecord> = Vec::new();
    for row in csv::Reader::from_path(&dyt_path)?.deserialize() {
        dyt.push(row?);
    }
    let mut r2 = Vec::with_capacity(summary.layers.len());
    let mut mses = Vec::with_capacity(summary.layers.len());
    for layer in &summary.layers {
        let rec = dyt.iter().find(|d| &d.layer_id == layer).with_context(|| {
            format!(
                "missing input for method DyT: no fit for layer {layer} in {}",
                dyt_path.display()
            )
        })?;
        r2.push(
            rec.r2_val
                .with_context(|| format!("DyT R2 undefined for layer {layer}"))?,
        );
        mses.push(rec.mse_val);
    }
    let n = r2.len() as f64;
    summary.attach_dyt(MethodAlignment {
        mean_mse: mses.iter().sum::<f64>() / n,
        mean_r2: r2.iter().sum::<f64>() / n,
    });
    summary.attach_costs(&a.shape.shape(summary.layers.len()), a.shape.mb())?;
    let tradeoff = emit_tradeoff(&summary)?;
    verify_summary(&summary)?;

    create_dir(&a.out)?;
    write_alignment_csv(a.out.join("alignment.csv"), &summary)?;
    write_tradeoff_csv(a.out.join("tradeoff.csv"), &tradeoff)?;
    write_json(a.out.join("summary.json"), &summary)?;
    write_json(a.out.join("tradeoff.json"), &tradeoff)?;
    for row in &tradeoff.rows {
        eprintln!(
            "{:>3}: {:10.2} MFLOPs {:8.2} MB  R2 {:.4}",
            row.method.label(),
            row.mflops,
            row.read_mb,
            row.mean_r2
        );
    }
    Ok(())
}
