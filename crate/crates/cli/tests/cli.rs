use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpnorm::baselines::dyt_objective;
use gpnorm::datasets::{load_dataset_dir, load_mappings, prepare_splits, Manifest};

fn gpnorm(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gpnorm"))
        .args(args)
        .env_remove("GPNORM_WORKERS")
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs");
    out
}

fn ok(args: &[&str]) -> Output {
    let out = gpnorm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, layers: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--layers",
        &layers.to_string(),
        "--d",
        "64",
        "--n-tokens",
        "8",
        "--seed",
        "3",
    ]);
    data
}

const SMALL: [&str; 8] = [
    "--samples",
    "300",
    "--population-size",
    "50",
    "--generations",
    "5",
    "--max-nodes",
    "20",
];

fn evolve(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["evolve", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_writes_files_and_a_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--out",
            s(out),
            "--layers",
            "25",
            "--profile",
            "mixed",
            "--d",
            "32",
            "--n-tokens",
            "4",
        ]);
    }
    let manifest = Manifest::load(&a).unwrap();
    assert_eq!(manifest.layers.len(), 25);
    assert_eq!(fs::read_dir(&a).unwrap().count(), 26);
    for e in &manifest.layers {
        assert_eq!(fs::read(a.join(&e.file)).unwrap(), fs::read(b.join(&e.file)).unwrap());
        // Independent re-scan of the raw columns.
        let ds = load_mappings(a.join(&e.file)).unwrap();
        let n = ds.len() as f64;
        assert_eq!(ds.len(), e.count);
        assert_eq!(ds.len(), 32 * 4);
        let mean_y: f64 = ds.targets().iter().sum::<f64>() / n;
        let max_abs = ds.inputs().iter().map(|x| x.abs()).fold(0.0, f64::max);
        assert!((mean_y - e.mean_y).abs() < 1e-12);
        assert_eq!(max_abs, e.max_abs_x);
    }
    assert_eq!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn evolve_writes_fronts_selections_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 1);
    let run = dir.path().join("run");
    evolve(&data, &run, &["--seeds", "4,9"]);
    let fronts: Vec<_> = fs::read_dir(run.join("fronts")).unwrap().collect();
    assert_eq!(fronts.len(), 2);
    let selected = gpnorm::evolve::read_front_csv(run.join("selected.csv")).unwrap();
    assert_eq!(selected.len(), 2);
    assert_eq!(selected.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![4, 9]);
    assert!(selected.iter().all(|r| r.node_count <= 20));
    for name in ["config.json", "data_manifest.json", "summary.json"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    let summary = gpnorm::report::read_summary_json(run.join("summary.json")).unwrap();
    gpnorm::report::verify_summary(&summary).unwrap();
    assert!(summary.r2.std >= 0.0 && summary.mse.std >= 0.0);

    let again = dir.path().join("again");
    evolve(&data, &again, &["--seeds", "4,9"]);
    assert_eq!(
        fs::read(run.join("selected.csv")).unwrap(),
        fs::read(again.join("selected.csv")).unwrap()
    );
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3);
    let one = dir.path().join("w1");
    let four = dir.path().join("w4");
    evolve(&data, &one, &["--n-seeds", "2", "--workers", "1"]);
    evolve(&data, &four, &["--n-seeds", "2", "--workers", "4"]);
    for f in ["selected.csv", "summary.json"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(four.join(f)).unwrap(), "{f}");
    }
    for e in fs::read_dir(one.join("fronts")).unwrap() {
        let name = e.unwrap().file_name();
        assert_eq!(
            fs::read(one.join("fronts").join(&name)).unwrap(),
            fs::read(four.join("fronts").join(&name)).unwrap()
        );
    }
}

#[test]
fn fit_dyt_rows_are_deterministic_and_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 25);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        ok(&["fit-dyt", "--data", s(&data), "--out", s(out), "--samples", "400"]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let mut rdr = csv::Reader::from_path(&a).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        vec!["layer_id", "alpha", "mse", "r2", "mse_val", "r2_val"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 25);

    // Grid oracle on the same training splits.
    let (_, pools) = load_dataset_dir(&data).unwrap();
    let splits = prepare_splits(&pools, 400, 0.9, 0).unwrap();
    for (row, split) in rows.iter().zip(&splits).step_by(6) {
        let alpha: f64 = row[1].parse().unwrap();
        let (xs, ys) = (split.train.inputs(), split.train.targets());
        let g = dyt_objective(alpha, xs, ys);
        let grid_best = (0..=32_000)
            .map(|i| i as f64 * 1e-3)
            .map(|a| dyt_objective(a, xs, ys))
            .fold(f64::INFINITY, f64::min);
        assert!(g <= grid_best + 1e-9, "{}: {g} vs {grid_best}", &row[0]);
    }
}

#[test]
fn cost_reproduces_reference_coefficients() {
    let fixture = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/fixtures/reference_expressions.csv"
    );
    let out = ok(&["cost", "--expressions", fixture]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let coeffs: Vec<u64> = v["per_layer"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["flops_per_token_coeff_d"].as_u64().unwrap())
        .collect();
    assert_eq!(
        coeffs,
        vec![3, 2, 2, 2, 76, 25, 27, 28, 29, 25, 4, 4, 25, 4, 25, 6, 48, 4, 3, 3, 3, 3, 4, 71, 48]
    );
    assert_eq!(v["totals"]["per_token"]["coeff_d"], 474);
    assert!((v["totals"]["ratio_vs_ln"].as_f64().unwrap() - 3.79).abs() <= 0.01);
    assert_eq!(ok(&["cost", "--expressions", fixture]).stdout, out.stdout);
}

#[test]
fn cost_of_baselines() {
    let out = ok(&["cost", "--method", "ln"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["per_layer"][0]["flops_per_token_coeff_d"], 5);
    assert_eq!(v["per_layer"][0]["flops_per_token_const"], 2);
    assert_eq!(v["totals"]["per_token"]["coeff_d"], 5 * 25);
    let items = v["itemization"].as_array().unwrap();
    assert_eq!(items.len(), 10);
    assert!((v["totals"]["read_mb"].as_f64().unwrap() - 28.86).abs() < 0.01);

    let dec: serde_json::Value =
        serde_json::from_slice(&ok(&["cost", "--method", "ln", "--decimal-mb"]).stdout).unwrap();
    assert!((dec["totals"]["read_mb"].as_f64().unwrap() - 30.26).abs() < 0.01);

    let dyt: serde_json::Value = serde_json::from_slice(&ok(&["cost", "--method", "dyt"]).stdout).unwrap();
    assert_eq!(dyt["per_layer"][24]["flops_per_token_coeff_d"], 24);
    assert!(dyt.get("itemization").is_none());

    assert!(!gpnorm(&["cost"]).status.success());
}

#[test]
fn report_assembles_outputs_and_names_missing_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2);
    let run = dir.path().join("run");
    let rep = dir.path().join("rep");

    let missing = gpnorm(&["report", "--run", s(&run), "--out", s(&rep)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("method GP"));

    evolve(&data, &run, &["--n-seeds", "2"]);
    let missing = gpnorm(&["report", "--run", s(&run), "--out", s(&rep)]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("method DyT"));

    ok(&[
        "fit-dyt",
        "--data",
        s(&data),
        "--out",
        s(&run.join("dyt.csv")),
        "--samples",
        "300",
    ]);
    ok(&["report", "--run", s(&run), "--out", s(&rep)]);
    for f in ["alignment.csv", "tradeoff.csv", "summary.json", "tradeoff.json"] {
        assert!(rep.join(f).is_file(), "{f}");
    }
    let summary = gpnorm::report::read_summary_json(rep.join("summary.json")).unwrap();
    gpnorm::report::verify_summary(&summary).unwrap();
    let rows = gpnorm::report::read_tradeoff_csv(rep.join("tradeoff.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].mean_r2, summary.r2.mean);
    assert_eq!(rows[0].read_mb, 2.0 * rows[2].read_mb);
    let alignment = gpnorm::evolve::read_front_csv(rep.join("alignment.csv")).unwrap();
    assert_eq!(
        alignment,
        gpnorm::evolve::read_front_csv(run.join("selected.csv")).unwrap()
    );
}
