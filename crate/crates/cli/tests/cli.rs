//! Black-box checks of the `cfx` binary: exit codes, output file formats,
//! skip handling, and cross-command consistency.

mod common;

use common::*;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

/// One tiny trained pipeline shared read-only by the tests below.
struct Fixture {
    data: PathBuf,
    model: PathBuf,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let dir = fresh_dir("cli-fixture");
        let data = dir.join("data");
        run_ok(cfx().args([
            "generate-cbf",
            "--length",
            "16",
            "--per-class",
            "12",
            "--seed",
            "3",
            "--out",
            data.to_str().unwrap(),
        ]));
        let model = dir.join("model.cfxm");
        run_ok(cfx().args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--seed",
            "3",
            "--epochs",
            "10",
        ]));
        Fixture { data, model }
    })
}

fn explain_into(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let report = dir.join("report.json");
    let results = dir.join("results");
    let mut cmd = cfx();
    cmd.args([
        "explain",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--series-out",
        results.to_str().unwrap(),
        "--limit",
        "4",
        "--k",
        "3",
        "--iters",
        "30",
    ]);
    cmd.args(extra);
    run_ok(&mut cmd);
    (report, results)
}

#[test]
fn missing_required_flag_exits_2_with_usage() {
    let (code, stderr) = run_expecting_failure(cfx().args(["train", "--out", "x.cfxm"]));
    assert_eq!(code, 2);
    assert!(stderr.contains("--data"), "stderr was: {stderr}");
    assert!(
        stderr.to_lowercase().contains("usage"),
        "stderr was: {stderr}"
    );
}

#[test]
fn unreadable_dataset_files_exit_3() {
    let (code, stderr) = run_expecting_failure(cfx().args([
        "train",
        "--data",
        "/no/such/train.tsv",
        "/no/such/test.tsv",
        "--out",
        "/tmp/cfx-nope.cfxm",
    ]));
    assert_eq!(code, 3);
    assert!(stderr.contains("train.tsv"), "stderr was: {stderr}");
}

#[test]
fn malformed_dataset_content_exits_4() {
    let dir = fresh_dir("cli-malformed");
    let train = dir.join("bad_TRAIN.tsv");
    let test = dir.join("bad_TEST.tsv");
    std::fs::write(&train, "1\t0.5\tnotanumber\n2\t1.0\t2.0\n").unwrap();
    std::fs::write(&test, "1\t0.5\t0.5\n2\t1.0\t2.0\n").unwrap();
    let (code, stderr) = run_expecting_failure(cfx().args([
        "train",
        "--data",
        dir.to_str().unwrap(),
        "--out",
        dir.join("m.cfxm").to_str().unwrap(),
    ]));
    assert_eq!(code, 4);
    assert!(
        stderr.contains("notanumber") && stderr.contains("line 1"),
        "stderr was: {stderr}"
    );
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = fresh_dir("cli-badconfig");
    let config = dir.join("run.ini");
    std::fs::write(&config, "[train]\nepoochs = 5\n").unwrap();
    let (code, stderr) = run_expecting_failure(cfx().args([
        "train",
        "--data",
        fixture().data.to_str().unwrap(),
        "--out",
        dir.join("m.cfxm").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]));
    assert_eq!(code, 2);
    assert!(stderr.contains("epoochs"), "stderr was: {stderr}");
}

#[test]
fn pipeline_outputs_have_the_documented_formats() {
    let dir = fresh_dir("cli-pipeline");
    let (report_path, results) = explain_into(&dir, &[]);

    // model file magic
    assert_eq!(&read_bytes(&fixture().model)[..4], b"CFXM");

    // train report fields and config echo
    let train_report = read_json(&fixture().model.with_file_name("train_report.json"));
    assert!(train_report["test_accuracy"].as_f64().is_some());
    assert_eq!(train_report["config"]["train"]["epochs"], 10);
    assert_eq!(train_report["config"]["train"]["seed"], 3);

    // explain report
    let report = read_json(&report_path);
    assert_eq!(report["n_considered"], 4);
    assert_eq!(
        report["n_explained"].as_u64().unwrap() + report["n_skipped"].as_u64().unwrap(),
        4
    );
    assert!(report["validity"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["config"]["explain"]["k"], 3);
    let first = &report["instances"][0];
    assert_eq!(first["stem"], "instance_0000");

    // per-instance files and headers
    let cf = std::fs::read_to_string(results.join("instance_0000_counterfactual.csv")).unwrap();
    assert!(
        cf.starts_with("t,ch0\n"),
        "counterfactual header: {}",
        &cf[..20]
    );
    assert_eq!(cf.lines().count(), 17); // header + T=16 rows
    let loss = std::fs::read_to_string(results.join("instance_0000_loss.csv")).unwrap();
    assert!(
        loss.starts_with("iteration,prox,sparse,valid,dtw,total\n"),
        "loss header: {}",
        loss.lines().next().unwrap()
    );
    assert_eq!(loss.lines().count(), 32); // header + iterations+1 entries
    let first_row = loss.lines().nth(1).unwrap();
    assert!(
        first_row.starts_with("0,0,0,"),
        "iteration 0 starts at the original: {first_row}"
    );

    // evaluate
    let metrics_path = dir.join("metrics.json");
    run_ok(cfx().args([
        "evaluate",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--results",
        results.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        metrics_path.to_str().unwrap(),
    ]));
    let metrics = read_json(&metrics_path);
    assert_eq!(metrics["dataset"], "CBF");
    assert_eq!(metrics["n"], 4);
    for key in [
        "val",
        "l1",
        "l2",
        "dtw_plausibility",
        "originals_dtw_plausibility",
        "iso_nominal_fraction",
    ] {
        assert!(
            metrics["mode"]["all"][key].is_number(),
            "missing mode.all.{key}"
        );
        assert!(
            metrics["mode"]["valid_only"][key].is_number(),
            "missing mode.valid_only.{key}"
        );
    }
    assert_eq!(metrics["config"]["seed"], 11);

    // plot-data
    let plots = dir.join("plots");
    run_ok(cfx().args([
        "plot-data",
        "--results",
        results.to_str().unwrap(),
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--out-dir",
        plots.to_str().unwrap(),
    ]));
    let plot = std::fs::read_to_string(plots.join("instance_0000_plot.csv")).unwrap();
    let mut lines = plot.lines();
    assert_eq!(lines.next().unwrap(), "series_role,t,ch,value");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), (3 + 2) * 16); // (k+2)·T·d

    // original role passes through the original CSV byte for byte
    let original_csv = std::fs::read_to_string(results.join("instance_0000_original.csv")).unwrap();
    let original_fields: Vec<&str> = original_csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    let plot_original: Vec<&str> = rows
        .iter()
        .filter(|r| r.starts_with("original,"))
        .map(|r| r.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(plot_original, original_fields);
}

#[test]
fn reported_metrics_match_independent_recomputation() {
    let dir = fresh_dir("cli-recompute");
    let (_, results) = explain_into(&dir, &[]);
    let metrics_path = dir.join("metrics.json");
    run_ok(cfx().args([
        "evaluate",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--results",
        results.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        metrics_path.to_str().unwrap(),
    ]));
    let metrics = read_json(&metrics_path);

    // recompute L1/L2 straight from the emitted CSVs
    let index = read_json(&results.join("index.json"));
    let stems: Vec<String> = index["instances"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| !r["skipped"].as_bool().unwrap())
        .map(|r| r["stem"].as_str().unwrap().to_string())
        .collect();
    let (mut l1_sum, mut l2_sum) = (0.0f64, 0.0f64);
    for stem in &stems {
        let original = csv_values(&results.join(format!("{stem}_original.csv")));
        let counterfactual = csv_values(&results.join(format!("{stem}_counterfactual.csv")));
        assert_eq!(original.len(), counterfactual.len());
        let diffs: Vec<f64> = original
            .iter()
            .zip(&counterfactual)
            .map(|(a, b)| a - b)
            .collect();
        l1_sum += diffs.iter().map(|d| d.abs()).sum::<f64>();
        l2_sum += diffs.iter().map(|d| d * d).sum::<f64>().sqrt();
    }
    let n = stems.len() as f64;
    let reported_l1 = metrics["mode"]["all"]["l1"].as_f64().unwrap();
    let reported_l2 = metrics["mode"]["all"]["l2"].as_f64().unwrap();
    assert!((reported_l1 - l1_sum / n).abs() < 1e-9, "l1 mismatch");
    assert!((reported_l2 - l2_sum / n).abs() < 1e-9, "l2 mismatch");
    assert!(reported_l2 <= reported_l1);
}

#[test]
fn fixed_target_skips_matching_predictions() {
    let dir = fresh_dir("cli-skip");
    let report = dir.join("report.json");
    let results = dir.join("results");
    let out = run_ok(cfx().args([
        "explain",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--target",
        "fixed:bell",
        "--limit",
        "18",
        "--k",
        "3",
        "--iters",
        "10",
        "--out",
        report.to_str().unwrap(),
        "--series-out",
        results.to_str().unwrap(),
    ]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("skipped"), "stderr was: {stderr}");

    let report = read_json(&report);
    let skipped = report["n_skipped"].as_u64().unwrap();
    assert!(
        skipped >= 1,
        "expected at least one bell-predicted instance"
    );
    assert_eq!(
        report["n_explained"].as_u64().unwrap() + skipped,
        report["n_considered"].as_u64().unwrap()
    );
    for record in report["instances"].as_array().unwrap() {
        if record["skipped"].as_bool().unwrap() {
            assert_eq!(record["source"], "bell");
            assert_eq!(record["target"], "bell");
            assert_eq!(record["stem"], "");
        } else {
            assert_eq!(record["target"], "bell");
            assert!(results
                .join(format!(
                    "{}_counterfactual.csv",
                    record["stem"].as_str().unwrap()
                ))
                .exists());
        }
    }
}

#[test]
fn unknown_fixed_label_exits_4() {
    let dir = fresh_dir("cli-badlabel");
    let (code, stderr) = run_expecting_failure(cfx().args([
        "explain",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--target",
        "fixed:sawtooth",
        "--limit",
        "1",
        "--out",
        dir.join("r.json").to_str().unwrap(),
        "--series-out",
        dir.join("results").to_str().unwrap(),
    ]));
    assert_eq!(code, 4);
    assert!(stderr.contains("sawtooth"), "stderr was: {stderr}");
}

#[test]
fn shape_mismatch_names_expected_and_found() {
    let dir = fresh_dir("cli-mismatch");
    let other = dir.join("other");
    run_ok(cfx().args([
        "generate-cbf",
        "--length",
        "32",
        "--per-class",
        "4",
        "--seed",
        "9",
        "--out",
        other.to_str().unwrap(),
    ]));
    let (code, stderr) = run_expecting_failure(cfx().args([
        "explain",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        other.to_str().unwrap(),
        "--out",
        dir.join("r.json").to_str().unwrap(),
        "--series-out",
        dir.join("results").to_str().unwrap(),
    ]));
    assert_eq!(code, 4);
    assert!(
        stderr.contains("T=16") && stderr.contains("T=32"),
        "stderr was: {stderr}"
    );
}

#[test]
fn evaluate_without_results_exits_3() {
    let dir = fresh_dir("cli-noresults");
    let (code, _) = run_expecting_failure(cfx().args([
        "evaluate",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--results",
        dir.join("absent").to_str().unwrap(),
        "--out",
        dir.join("m.json").to_str().unwrap(),
    ]));
    assert_eq!(code, 3);
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir_a = fresh_dir("cli-threads-1");
    let dir_b = fresh_dir("cli-threads-4");
    let run_with = |dir: &Path, threads: &str| {
        let report = dir.join("report.json");
        let results = dir.join("results");
        run_ok(cfx().env("CFX_THREADS", threads).args([
            "explain",
            "--model",
            fixture().model.to_str().unwrap(),
            "--data",
            fixture().data.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
            "--series-out",
            results.to_str().unwrap(),
            "--limit",
            "6",
            "--k",
            "3",
            "--iters",
            "20",
        ]));
        (report, results)
    };
    let (report_a, results_a) = run_with(&dir_a, "1");
    let (report_b, results_b) = run_with(&dir_b, "4");
    assert_eq!(read_bytes(&report_a), read_bytes(&report_b));
    assert_eq!(
        read_bytes(&results_a.join("index.json")),
        read_bytes(&results_b.join("index.json"))
    );
    for i in 0..6 {
        let name = format!("instance_{i:04}_counterfactual.csv");
        assert_eq!(
            read_bytes(&results_a.join(&name)),
            read_bytes(&results_b.join(&name)),
            "{name} differs between worker counts"
        );
    }
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = fresh_dir("cli-config-prec");
    let config = dir.join("run.ini");
    std::fs::write(&config, "[explain]\nk = 3\niters = 10\nlambda = 2.5\n").unwrap();
    let report = dir.join("report.json");
    run_ok(cfx().args([
        "explain",
        "--model",
        fixture().model.to_str().unwrap(),
        "--data",
        fixture().data.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--iters",
        "15",
        "--limit",
        "2",
        "--out",
        report.to_str().unwrap(),
        "--series-out",
        dir.join("results").to_str().unwrap(),
    ]));
    let report = read_json(&report);
    assert_eq!(report["config"]["explain"]["k"], 3); // from file
    assert_eq!(report["config"]["explain"]["iters"], 15); // flag wins
    assert_eq!(report["config"]["explain"]["lambda"], 2.5);
}
