use std::path::Path;
use std::process::{Command, Output};

fn beamdrift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamdrift"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

const CONFIG: &str = r#"{
  "truth": {"pattern": "checkerboard", "width": 16, "height": 8},
  "eta_range": [1, 5],
  "ar": {"lambda_nominal": 20, "cv": 0.2, "a": 0.99},
  "n": 100,
  "seed": 3,
  "output_dir": "out"
}"#;

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ok.json"), CONFIG).unwrap();
    std::fs::write(d.join("bad.json"), CONFIG.replace("0.99", "1.5")).unwrap();
    std::fs::write(d.join("broken.json"), "{\n  \"truth\": ,\n}").unwrap();

    let out = beamdrift(d, &["simulate", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ar.a"));

    let out = beamdrift(d, &["simulate", "--config", "broken.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert_eq!(
        beamdrift(d, &["simulate", "--config", "absent.json"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        beamdrift(
            d,
            &[
                "estimate",
                "--config",
                "ok.json",
                "--measurement",
                "out/measurement.csv"
            ]
        )
        .status
        .code(),
        Some(3)
    );
    assert_eq!(
        beamdrift(d, &["simulate", "--config", "ok.json"])
            .status
            .code(),
        Some(0)
    );

    let out = beamdrift(
        d,
        &[
            "estimate",
            "--config",
            "ok.json",
            "--measurement",
            "out/measurement.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beamdrift table"));

    assert_eq!(
        beamdrift(d, &["sweep-dose", "--config", "ok.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(beamdrift(d, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_and_out_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), CONFIG).unwrap();
    let run = |seed: &str, out: &str| {
        assert!(beamdrift(
            d,
            &["simulate", "--config", "c.json", "--seed", seed, "--out", out]
        )
        .status
        .success());
        std::fs::read(d.join(out).join("measurement.csv")).unwrap()
    };
    let a = run("1", "a");
    assert_eq!(a, run("1", "b"));
    assert_ne!(a, run("2", "c"));
}
