use std::path::Path;
use std::process::{Command, Output};

fn vlpd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlpd"))
        .current_dir(dir)
        .env("VLPD_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn vlpd")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vlpd(dir, args);
    assert!(
        out.status.success(),
        "vlpd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["synth", "5", "2", "data", "--height", "64", "--width", "96"],
    );
    assert!(dir.join("data/annotations.txt").exists());
    ok(dir, &["pseudolabel", "data", "labels"]);
    assert!(dir.join("labels/img_0000.vls").exists());

    std::fs::write(
        dir.join("job.toml"),
        "dataset = \"data\"\noutput = \"run\"\npseudo_labels = \"labels\"\n[run]\niterations = 3\n",
    )
    .unwrap();
    ok(dir, &["train", "job.toml"]);
    let log = std::fs::read_to_string(dir.join("run/loss_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.starts_with("iter,l_det,l_vls,l_psc,combined"));

    ok(
        dir,
        &[
            "eval",
            "run/checkpoint.vlpd",
            "data",
            "--out",
            "report.json",
            "--detections",
            "dets.txt",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["images"], 2);
    assert!(dir.join("dets.txt").exists());

    let stdout = ok(
        dir,
        &[
            "eval",
            "run/checkpoint.vlpd",
            "data",
            "--subsets",
            "reasonable",
        ],
    );
    let printed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let mut names: Vec<String> = printed["subsets"]
        .as_object()
        .unwrap()
        .keys()
        .cloned()
        .collect();
    names.extend(
        printed["undefined"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string()),
    );
    assert_eq!(names, ["Reasonable"]);

    let a = ok(
        dir,
        &[
            "detect",
            "run/checkpoint.vlpd",
            "data/images/img_0001.png",
            "--threshold",
            "0.2",
        ],
    );
    let b = ok(
        dir,
        &[
            "detect",
            "run/checkpoint.vlpd",
            "data/images/img_0001.png",
            "--threshold",
            "0.2",
        ],
    );
    assert_eq!(a, b);
    assert!(a
        .lines()
        .all(|l| l.starts_with("img_0001 ") && l.split_whitespace().count() == 6));

    ok(dir, &["plot", "report.json", "curve.png"]);
    assert!(std::fs::metadata(dir.join("curve.png")).unwrap().len() > 0);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["synth", "1", "1", "data", "--height", "64", "--width", "64"],
    );
    std::fs::write(
        dir.join("job.toml"),
        "dataset = \"data\"\noutput = \"run\"\n[run]\nbogus = 1\n",
    )
    .unwrap();
    let out = vlpd(dir, &["train", "job.toml"]);
    assert!(!out.status.success());

    let out = vlpd(dir, &["synth", "1", "1", "odd", "--height", "50"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiples of 32"));
}
