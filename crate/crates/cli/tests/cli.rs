use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cloudfill::io::{self, FrameDirSpec, RawElement};
use cloudfill::simulation::synthetic_background;
use cloudfill::{Dims, ImageSequence, ObservationMask};

fn cloudfill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloudfill"))
        .args(args)
        .output()
        .expect("spawn cloudfill")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn clean_fixture(dir: &Path) -> (PathBuf, ImageSequence) {
    let seq = synthetic_background(Dims::new(16, 16, 1, 12).unwrap(), 2, 9).unwrap();
    let path = dir.join("clean.tcrm");
    io::save_raw(&path, &seq, RawElement::F64).unwrap();
    (path, seq)
}

/// Every file under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn evaluate_identical_inputs_prints_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (clean, _) = clean_fixture(tmp.path());
    let out = cloudfill(&[
        "evaluate",
        "--estimate",
        s(&clean),
        "--reference",
        s(&clean),
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("rre = 0.000000000e0\n"), "{stdout}");
}

#[test]
fn mc_leaves_fully_masked_frame_black() {
    let tmp = tempfile::tempdir().unwrap();
    let (clean, seq) = clean_fixture(tmp.path());
    let d = seq.dims();
    let mut mask = ObservationMask::for_dims(d, true);
    for j in 0..d.n {
        for i in 0..d.m {
            mask.set(i, j, 5, false);
        }
    }
    let mask_dir = tmp.path().join("mask");
    io::save_mask(&mask, &FrameDirSpec::new(&mask_dir)).unwrap();
    let raw = tmp.path().join("mc.tcrm");
    let out = cloudfill(&[
        "reconstruct",
        "--input",
        s(&clean),
        "--mask",
        s(&mask_dir),
        "--out",
        s(&tmp.path().join("mc")),
        "--raw",
        s(&raw),
        "--method",
        "mc",
        "--lambda1",
        "0.5",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rec = io::load_raw(&raw).unwrap();
    let norm = |seq: &ImageSequence, l: usize| {
        seq.as_slice()[d.pixels() * l..d.pixels() * (l + 1)]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let total = seq.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(
        norm(&rec, 5) <= 1e-3 * total / (d.t as f64).sqrt(),
        "{} vs {}",
        norm(&rec, 5),
        total
    );
    assert!(norm(&rec, 4) > 0.5 * norm(&seq, 4));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (clean, _) = clean_fixture(tmp.path());
    let sim = tmp.path().join("sim");
    let out = cloudfill(&[
        "simulate",
        "--input",
        s(&clean),
        "--out",
        s(&sim),
        "--coverage",
        "0.3",
        "--full-cover-frames",
        "3,8",
        "--seed",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cloudy = sim.join("cloudy.tcrm");
    let run = |dir: &Path| {
        let out = cloudfill(&[
            "pipeline",
            "--input",
            s(&cloudy),
            "--reference",
            s(&clean),
            "--truth-mask",
            s(&sim.join("mask")),
            "--out",
            s(dir),
            "--lambda1",
            "2",
            "--lambda2",
            "0.05",
            "--seed",
            "4",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&a), run(&b));
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.contains_key(Path::new("report.txt")));
    assert!(sa.contains_key(Path::new("reconstruction.tcrm")));
    assert_eq!(sa.keys().filter(|k| k.starts_with("frames")).count(), 12);
    assert_eq!(sa.keys().filter(|k| k.starts_with("mask")).count(), 12);
    assert_eq!(sa, sb);
    let report = String::from_utf8(sa[Path::new("report.txt")].clone()).unwrap();
    assert!(report.contains("detection_recall"));
    assert!(report.contains("rre = "));
}

#[test]
fn detect_writes_mask_frames_only_under_out() {
    let tmp = tempfile::tempdir().unwrap();
    let (clean, seq) = clean_fixture(tmp.path());
    let out_dir = tmp.path().join("det");
    let before: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let out = cloudfill(&[
        "detect",
        "--input",
        s(&clean),
        "--out",
        s(&out_dir),
        "--gamma",
        "0.6",
    ]);
    assert!(out.status.success());
    let mut after: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    after.retain(|p| !before.contains(p));
    assert_eq!(after, vec![out_dir.clone()]);
    let mask = io::load_mask(&out_dir, Some(seq.dims())).unwrap();
    // Background never exceeds 0.5, so nothing is flagged as cloud.
    assert_eq!(mask.count(), seq.dims().pixels() * seq.dims().t);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let (clean, _) = clean_fixture(tmp.path());
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "method = \"interp\"\ngamma = 0.9\nlambda1 = 4.0\n").unwrap();
    let out_dir = tmp.path().join("p");
    let out = cloudfill(&[
        "pipeline",
        "--input",
        s(&clean),
        "--out",
        s(&out_dir),
        "--config",
        s(&cfg),
        "--gamma",
        "0.7",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("method = interp\n"));
    assert!(report.contains("gamma = 0.7\n"));
    assert!(report.contains("lambda1 = 4e0\n"));
}

#[test]
fn defaults_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let (clean, _) = clean_fixture(tmp.path());
    let out_dir = tmp.path().join("p");
    let out = cloudfill(&[
        "pipeline",
        "--input",
        s(&clean),
        "--out",
        s(&out_dir),
        "--method",
        "interp",
    ]);
    assert!(out.status.success());
    let report = String::from_utf8(out.stdout).unwrap();
    for line in [
        "gamma = 0.6\n",
        "lambda1 = 2e1\n",
        "lambda2 = 5e-1\n",
        "rank = 20\n",
    ] {
        assert!(report.contains(line), "missing {line:?} in\n{report}");
    }
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (clean, _) = clean_fixture(tmp.path());
    let out_dir = tmp.path().join("o");

    let usage = cloudfill(&[
        "detect",
        "--input",
        s(&clean),
        "--out",
        s(&out_dir),
        "--bogus",
    ]);
    assert_eq!(usage.status.code(), Some(2));

    let bad_value = cloudfill(&[
        "detect",
        "--input",
        s(&clean),
        "--out",
        s(&out_dir),
        "--gamma",
        "3",
    ]);
    assert_eq!(bad_value.status.code(), Some(2));
    assert!(!bad_value.stderr.is_empty());

    let missing = cloudfill(&[
        "detect",
        "--input",
        s(&tmp.path().join("nope")),
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(missing.status.code(), Some(3));

    let mask_dir = tmp.path().join("mask");
    io::save_mask(
        &ObservationMask::new(16, 16, 12, true),
        &FrameDirSpec::new(&mask_dir),
    )
    .unwrap();
    let diverged = cloudfill(&[
        "reconstruct",
        "--input",
        s(&clean),
        "--mask",
        s(&mask_dir),
        "--out",
        s(&out_dir),
        "--algorithm",
        "alt",
        "--step",
        "1e6",
        "--rank",
        "3",
    ]);
    assert_eq!(
        diverged.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverged"));
}
