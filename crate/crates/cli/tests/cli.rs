// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const FSL: &str = env!("CARGO_BIN_EXE_fsl");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn fsl(args: &[&str]) -> Output {
    Command::new(FSL)
        .args(args)
        .env("FSL_TIMEOUT_SECS", "2")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn mock(mode: &str) -> String {
    format!("cmd:{FSL} mock-adapter --mode {mode}")
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&fsl(&["--help"])), 0);
    assert_eq!(code(&fsl(&["no-such-command"])), 1);
}

#[test]
fn sweep_writes_one_file_per_concept() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let concepts = fixture("image_concepts.yaml");
    let res = fsl(&[
        "sweep",
        "--concepts",
        concepts.to_str().unwrap(),
        "--seed",
        "3",
        "--steps",
        "12",
        "--branch-step",
        "4",
        "--out",
        out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let written: Vec<_> = stdout(&res).lines().map(PathBuf::from).collect();
    assert_eq!(written.len(), 10);
    assert!(written
        .iter()
        .all(|p| p.ends_with("3/sweep.json") && p.exists()));

    let first = written[0].to_str().unwrap();
    let report = dir.path().join("eval.json");
    let res = fsl(&[
        "evaluate",
        "--sweep",
        first,
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(stdout(&res).starts_with("cr "));
}

#[test]
fn config_errors_exit_one() {
    let concepts = fixture("image_concepts.yaml");
    let c = concepts.to_str().unwrap();
    assert_eq!(
        code(&fsl(&[
            "sweep",
            "--concepts",
            c,
            "--scales",
            "1,nan",
            "--out",
            "/tmp/x"
        ])),
        1
    );
    assert_eq!(
        code(&fsl(&[
            "sweep",
            "--concepts",
            c,
            "--scales",
            "",
            "--out",
            "/tmp/x"
        ])),
        1
    );
    assert_eq!(
        code(&fsl(&[
            "sweep",
            "--concepts",
            c,
            "--name",
            "missing",
            "--out",
            "/tmp/x"
        ])),
        1
    );
    assert_eq!(
        code(&fsl(&[
            "sweep",
            "--concepts",
            "/nonexistent.yaml",
            "--out",
            "/tmp/x"
        ])),
        1
    );
    assert_eq!(
        code(&fsl(&[
            "calibrate",
            "--concepts",
            c,
            "--out",
            "/tmp/x.json"
        ])),
        1
    );
    assert_eq!(code(&fsl(&["protocol-check", "bogus-address"])), 1);
}

#[test]
fn bench_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let plan = dir.path().join("plan.yaml");
    std::fs::write(
        &plan,
        format!(
            "name: cli\nconcepts: {}\nsliders_per_concept: 2\nworkers: 2\nout: {}\n",
            fixture("audio_concepts.yaml").display(),
            out.display()
        ),
    )
    .unwrap();
    let res = fsl(&["bench", "--plan", plan.to_str().unwrap(), "--workers", "4"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(stdout(&res).contains("20 sliders completed, 0 failed"));

    let res = fsl(&["verify-report", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    assert!(stdout(&res).starts_with("ok: "));

    let summary = out.join("summary.json");
    let text = std::fs::read_to_string(&summary).unwrap();
    std::fs::write(&summary, text.replacen("\"os\": ", "\"os\": 1", 1)).unwrap();
    let res = fsl(&["verify-report", out.to_str().unwrap()]);
    assert_eq!(code(&res), 3);
    assert!(stdout(&res).contains("mismatch"));
}

#[test]
fn protocol_check_against_mock_modes() {
    let res = fsl(&["protocol-check", &mock("echo")]);
    assert_eq!(code(&res), 0, "{}", stdout(&res));
    assert_eq!(
        stdout(&res)
            .lines()
            .filter(|l| l.starts_with("PASS"))
            .count(),
        6
    );

    let res = fsl(&["protocol-check", &mock("byteswap")]);
    assert_eq!(code(&res), 3);
    assert!(stdout(&res).contains("FAIL"));

    let res = fsl(&["protocol-check", &mock("hang")]);
    assert_eq!(code(&res), 3);
}

#[test]
fn scorer_failure_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let concepts = fixture("image_concepts.yaml");
    let res = fsl(&[
        "sweep",
        "--concepts",
        concepts.to_str().unwrap(),
        "--name",
        "a-realistic-image-of-a-person-very-old-aged-wrinkly",
        "--steps",
        "6",
        "--branch-step",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let sweep = stdout(&res).trim().to_string();
    let aligner = mock("nan");
    let report = dir.path().join("eval.json");
    let res = fsl(&[
        "evaluate",
        "--sweep",
        &sweep,
        "--aligner",
        &aligner,
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!report.exists());
}
