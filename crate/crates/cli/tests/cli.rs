//! End-to-end tests of the `mbot` binary: the documented examples, file
//! outputs, exit codes and byte-identical reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mbot"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("mbot_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    std::fs::write(&a, "0\n2\n").unwrap();
    std::fs::write(&b, "1\n5\n").unwrap();
    (a, b)
}

#[test]
fn eval_exact_examples() {
    let dir = tmp("eval");
    let (a, b) = write_pair(&dir);
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "eval", "--loss", "w", "--exact"])
        .arg(&a)
        .arg(&b)
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert!((v["value"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(v["loss"], "W");
    assert_eq!(v["n"], 2);

    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "eval", "--loss", "w", "--m", "1", "--exact"])
        .arg(&a)
        .arg(&b)
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert!((v["value"].as_f64().unwrap() - 2.5).abs() < 1e-12);

    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "eval", "--loss", "s-eps", "--eps", "0.1"])
        .arg(&a)
        .arg(&a)
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert!(v["value"].as_f64().unwrap().abs() <= 1e-8);

    // eval.json and the manifest land next to each other
    let eval_json: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap();
    assert!(eval_json["value"].is_number());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "eval");
    assert_eq!(manifest["seed"], 20177);
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|o| o == "eval.json"));
}

#[test]
fn eval_rejects_bad_inputs() {
    let dir = tmp("eval_bad");
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "1.0,2.0\nnot_a_number\n").unwrap();
    let ok = dir.join("ok.csv");
    std::fs::write(&ok, "1.0,2.0\n").unwrap();
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "eval"])
        .arg(&bad)
        .arg(&ok)
        .output()
        .unwrap();
    assert!(!out.status.success());
    // incompatible dimensions
    let one_d = dir.join("oned.csv");
    std::fs::write(&one_d, "1.0\n2.0\n").unwrap();
    let two_d = dir.join("twod.csv");
    std::fs::write(&two_d, "1.0,2.0\n3.0,4.0\n").unwrap();
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "eval"])
        .arg(&one_d)
        .arg(&two_d)
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn plan_closed_form_identity_and_binary() {
    let dir = tmp("plan_closed");
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "plan",
            "--closed-form-1d",
            "--n",
            "20",
            "--m",
            "1,5,10,15,20",
            "--binary",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    // the whole family lands as data files
    for m in [1, 5, 10, 15, 20] {
        assert!(dir.join(format!("plan_closed_n20_m{m}.csv")).exists());
        assert!(dir.join(format!("plan_closed_n20_m{m}.bin")).exists());
    }
    let csv = std::fs::read_to_string(dir.join("plan_closed_n20_m20.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "i,j,mass");
    assert_eq!(lines.len(), 21, "identity has 20 nonzeros");
    for (r, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0].parse::<usize>().unwrap(), r);
        assert_eq!(fields[1].parse::<usize>().unwrap(), r);
        assert!((fields[2].parse::<f64>().unwrap() - 0.05).abs() < 1e-12);
    }
    // binary layout round-trips
    let bytes = std::fs::read(dir.join("plan_closed_n20_m20.bin")).unwrap();
    let (n, entries, _) = mbot::plan::read_dense_binary(&mut bytes.as_slice()).unwrap();
    assert_eq!(n, 20);
    for i in 0..20 {
        for j in 0..20 {
            let expect = if i == j { 0.05 } else { 0.0 };
            assert!((entries[i * 20 + j] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn plan_enumerated_marginals_uniform() {
    let dir = tmp("plan_enum");
    let cloud = dir.join("cloud.csv");
    std::fs::write(&cloud, "0\n1\n3\n6\n").unwrap();
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "plan", "--enumerate", "--m", "2"])
        .arg(&cloud)
        .arg(&cloud)
        .output()
        .unwrap();
    let v = stdout_json(&out);
    let summary = &v.as_array().unwrap()[0];
    assert!(summary["max_row_dev"].as_f64().unwrap() < 1e-10);
    assert!(summary["max_col_dev"].as_f64().unwrap() < 1e-10);
    assert!((summary["total_mass"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn rate_marginal_slope_and_reproducibility() {
    let run = |dir: &Path, jobs: &str| {
        let out = bin()
            .args([
                "--out-dir",
                dir.to_str().unwrap(),
                "--seed",
                "7",
                "--jobs",
                jobs,
                "rate",
                "--experiment",
                "marginal",
                "--n",
                "300",
                "--m-list",
                "10",
                "--k-list",
                "10,100,1000",
                "--reps",
                "5",
            ])
            .output()
            .unwrap();
        stdout_json(&out)
    };
    let d1 = tmp("rate1");
    let d2 = tmp("rate2");
    let v1 = run(&d1, "1");
    let _ = run(&d2, "2");
    let slope = v1["slopes"][0]["slope"].as_f64().unwrap();
    assert!((slope + 0.5).abs() < 0.15, "slope {slope}");
    // byte-identical data outputs on re-run, even across worker counts
    for name in ["marginal.csv", "slopes.json"] {
        let b1 = std::fs::read(d1.join(name)).unwrap();
        let b2 = std::fs::read(d2.join(name)).unwrap();
        assert_eq!(b1, b2, "{name} differs between identical runs");
    }
}

#[test]
fn rate_deviation_small_grid() {
    let dir = tmp("rate_dev");
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "rate",
            "--experiment",
            "deviation",
            "--n-list",
            "20",
            "--m-list",
            "4",
            "--k-list",
            "10,50",
            "--reps",
            "10",
        ])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    let coverage = v["slopes"][0]["coverage"][0]["coverage"].as_f64().unwrap();
    assert!(coverage >= 0.9);
    let csv = std::fs::read_to_string(dir.join("deviation.csv")).unwrap();
    assert!(csv.starts_with("n,m,k,rep,seed,estimate,reference,abs_error,bound,within_bound"));
    assert_eq!(csv.lines().count(), 1 + 2 * 10);
}

#[test]
fn flow_zero_step_constant_and_outputs() {
    let dir = tmp("flow");
    let src = dir.join("src.csv");
    let tgt = dir.join("tgt.csv");
    let mut s = String::new();
    let mut t = String::new();
    for i in 0..20 {
        s.push_str(&format!("{},{}\n", i as f64 * 0.05, 0.3));
        t.push_str(&format!("{},{}\n", 1.0 + i as f64 * 0.05, 0.8));
    }
    std::fs::write(&src, &s).unwrap();
    std::fs::write(&tgt, &t).unwrap();
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "flow",
            "--m",
            "10",
            "--k",
            "2",
            "--steps",
            "4",
            "--step-size",
            "0",
            "--record-every",
            "2",
            "--eps",
            "0.2",
        ])
        .arg(&src)
        .arg(&tgt)
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["steps"], 4);
    // zero step size: the last snapshot equals the first
    let first = std::fs::read_to_string(dir.join("snapshot_000000.csv")).unwrap();
    let last = std::fs::read_to_string(dir.join("snapshot_000004.csv")).unwrap();
    assert_eq!(first, last);
    let trace = std::fs::read_to_string(dir.join("loss_trace.csv")).unwrap();
    assert!(trace.starts_with("step,loss"));
    assert_eq!(trace.lines().count(), 5);
}

#[test]
fn color_self_transfer_identity_and_deterministic() {
    let dir = tmp("color");
    // 6x4 image with distinct pixel values
    let img = dir.join("img.ppm");
    let mut bytes = b"P6\n6 4\n255\n".to_vec();
    for i in 0..24u32 {
        bytes.extend_from_slice(&[(i * 10) as u8, (255 - i * 9) as u8, (i * 7 + 3) as u8]);
    }
    std::fs::write(&img, &bytes).unwrap();
    let run = |out_dir: &Path| {
        let out = bin()
            .args([
                "--out-dir",
                out_dir.to_str().unwrap(),
                "color",
                "--m",
                "24",
                "--k",
                "1",
            ])
            .arg(&img)
            .arg(&img)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&dir);
    // m = n self transfer through the identity plan reproduces the image
    let mapped = std::fs::read(dir.join("img_to_img.ppm")).unwrap();
    assert_eq!(mapped, bytes);
    // byte-identical re-run
    let dir2 = tmp("color2");
    run(&dir2);
    assert_eq!(
        std::fs::read(dir.join("img_to_img.ppm")).unwrap(),
        std::fs::read(dir2.join("img_to_img.ppm")).unwrap()
    );
    // coverage statistics land in the manifest
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["stats"]["source_uncovered"], 0);
}

#[test]
fn bench_writes_timing_table() {
    let dir = tmp("bench");
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "bench",
            "--solvers",
            "mb-w",
            "--n-list",
            "200,400",
            "--reps",
            "2",
            "--m",
            "16",
            "--k",
            "8",
        ])
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v.as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(dir.join("timing.csv")).unwrap();
    assert!(csv.starts_with("solver,n,rep,seconds"));
    assert_eq!(csv.lines().count(), 1 + 4);
    // exact solver refuses absurd sizes with a nonzero exit
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "bench",
            "--solvers",
            "exact",
            "--n-list",
            "100000",
            "--reps",
            "1",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
