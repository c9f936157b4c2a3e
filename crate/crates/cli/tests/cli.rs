use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use serde_json::Value;
use specgeo::io::{read_matrix, write_matrix};

fn specgeo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specgeo"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SPECGEO_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

/// 6×3 matrix with distinct column scales.
fn sample_matrix() -> DMatrix<f64> {
    DMatrix::from_fn(6, 3, |i, j| {
        ((i * 7 + j * 3) % 5) as f64 * (1.0 + j as f64) - 0.5 * i as f64
    })
}

#[test]
fn rankme_json_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let m = sample_matrix();
    write_matrix(&m, &dir.path().join("f.mat")).unwrap();
    let out = specgeo(&["rankme", "f.mat", "--json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let f = specgeo::spectral::FeatureMatrix::new(m).unwrap();
    let expected = specgeo::spectral::spectral_metrics(&f, None)
        .unwrap()
        .rankme;
    assert_eq!(v["rankme"].as_f64().unwrap(), expected);
    assert_eq!(v.as_object().unwrap().len(), 1);
}

#[test]
fn spectrum_and_alphareq_report_metric_keys() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix(&sample_matrix(), &dir.path().join("f.mat")).unwrap();
    let v = json(&specgeo(&["spectrum", "f.mat", "--json"], dir.path()));
    for key in [
        "rankme",
        "alpha_req",
        "fit_window",
        "fit_r2",
        "m",
        "d",
        "eigenvalues",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["m"], 6);
    let a = json(&specgeo(
        &["alphareq", "f.mat", "--window", "1,3", "--json"],
        dir.path(),
    ));
    assert_eq!(a["fit_window"], serde_json::json!([1, 3]));
    assert_eq!(a["alpha_req"], v["alpha_req"]);
}

#[test]
fn ablate_writes_projected_matrix() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix(&sample_matrix(), &dir.path().join("f.mat")).unwrap();
    let out = specgeo(
        &[
            "ablate",
            "f.mat",
            "--k",
            "1",
            "--mode",
            "retain_top",
            "--out",
            "g.mat",
            "--json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let r = v["retained_energy"].as_f64().unwrap();
    assert!(r > 0.0 && r <= 1.0);
    assert!((v["rankme_after"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(
        read_matrix(&dir.path().join("g.mat")).unwrap().shape(),
        (6, 3)
    );
}

#[test]
fn toy_run_creates_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fig4.cfg"), "steps = 300\n").unwrap();
    let out = specgeo(
        &["toy-run", "--config", "fig4.cfg", "--out-dir", "run"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("run/trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "step,loss,rankme,sigma_f_1,sigma_f_2,sigma_w_1,sigma_w_2,align_err,conserve_err,a_norm"
    );
    assert_eq!(csv.lines().count(), 302);
    let summary: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run/summary.json")).unwrap(),
    )
    .unwrap();
    for key in [
        "phases",
        "conservation",
        "sigma_rates",
        "primacy",
        "late_growth",
    ] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn passk_emits_one_value_per_k() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("runs.csv"),
        "problem_id,N,c\na,512,3\nb,512,0\nc,300,300\n",
    )
    .unwrap();
    let out = specgeo(
        &["passk", "--input", "runs.csv", "--k", "1,16,256", "--json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let map = v.as_object().unwrap();
    assert_eq!(map.len(), 3);
    let one = map["1"].as_f64().unwrap();
    assert!((one - (3.0 / 512.0 + 0.0 + 1.0) / 3.0).abs() < 1e-15);
    assert!(map
        .values()
        .all(|x| (0.0..=1.0).contains(&x.as_f64().unwrap())));
}

#[test]
fn dpo_check_and_memorize() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "r_w,r_l\n700,-700\n0,0\n").unwrap();
    let v = json(&specgeo(
        &["dpo-check", "--input", "d.csv", "--json"],
        dir.path(),
    ));
    assert_eq!(v["pairs"], 2);
    assert!(v["max_identity_gap"].as_f64().unwrap() <= 1e-10);

    let reference = "a,0,0.1\na,1,0.2\nb,0,0.5\nc,0,0.9\n";
    let model = "a,0,0.2\na,1,0.3\nb,0,0.6\nc,0,0.95\n";
    std::fs::write(dir.path().join("r.csv"), reference).unwrap();
    std::fs::write(dir.path().join("m.csv"), model).unwrap();
    let v = json(&specgeo(
        &["memorize", "--ref", "r.csv", "--model", "m.csv", "--json"],
        dir.path(),
    ));
    assert_eq!(v["spearman"].as_f64().unwrap(), 1.0);
    let v = json(&specgeo(
        &[
            "memorize",
            "--ref",
            "r.csv",
            "--model",
            "m.csv",
            "--mode",
            "per_token",
            "--json",
        ],
        dir.path(),
    ));
    assert_eq!(v["mode"], "per_token");
}

#[test]
fn ngram_index_file_answers_like_text_corpus() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), "0 1 0 1 2\n2 2 1\n").unwrap();
    let out = specgeo(&["ngram-build", "c.txt", "--out", "c.idx"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let from_text = json(&specgeo(
        &["ngram-query", "c.txt", "--context", "0 1", "--json"],
        dir.path(),
    ));
    let from_index = json(&specgeo(
        &["ngram-query", "c.idx", "--context", "0 1", "--json"],
        dir.path(),
    ));
    assert_eq!(from_text, from_index);
    assert_eq!(from_text["probs"], serde_json::json!([0.5, 0.0, 0.5]));
    assert_eq!(from_text["suffix_len_used"], 2);
    assert_eq!(from_text["context_count"], 2);
}

#[test]
fn sweep_records_failures_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    write_matrix(&sample_matrix(), &dir.path().join("a.mat")).unwrap();
    write_matrix(&(sample_matrix() * 2.0), &dir.path().join("c.mat")).unwrap();
    std::fs::write(dir.path().join("b.mat"), b"not a matrix").unwrap();
    let manifest = "[[entries]]\nlabel = \"a\"\npath = \"a.mat\"\n\n[[entries]]\nlabel = \"b\"\npath = \"b.mat\"\n\n[[entries]]\nlabel = \"c\"\npath = \"c.mat\"\n";
    std::fs::write(dir.path().join("run.toml"), manifest).unwrap();
    let out = specgeo(
        &["sweep", "run.toml", "--out-dir", "rep", "--json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["n_ok"], 2);
    assert_eq!(v["n_failed"], 1);
    assert_eq!(v["entries"][1]["error"]["code"], "bad_magic");
    assert!(dir.path().join("rep/report.json").exists());
    assert!(dir.path().join("rep/report.csv").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bogus"][..],
        &["rankme", "f.mat", "--frobnicate"],
        &["passk", "--input", "x.csv", "--k", "one"],
        &["ablate", "f.mat", "--k", "1", "--mode", "sideways"],
        &[],
    ] {
        let out = specgeo(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(specgeo(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn computation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        specgeo(&["rankme", "missing.mat"], dir.path())
            .status
            .code(),
        Some(1)
    );
    std::fs::write(dir.path().join("runs.csv"), "a,4,1\n").unwrap();
    assert_eq!(
        specgeo(&["passk", "--input", "runs.csv", "--k", "5"], dir.path())
            .status
            .code(),
        Some(1)
    );
    std::fs::write(dir.path().join("empty.toml"), "center = true\n").unwrap();
    assert_eq!(
        specgeo(&["sweep", "empty.toml"], dir.path()).status.code(),
        Some(1)
    );
}
