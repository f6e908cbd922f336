use std::fs;
use std::path::Path;
use std::process::Command;

use crate::ensure;

fn stsmamba(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_stsmamba"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Runs `args` writing to `a`, then reruns from the run manifest in `a`
/// writing to `b`, and compares `files` byte for byte.
fn twice(args: &[&str], a: &Path, b: &Path, files: &[&str]) -> Result<usize, String> {
    let mut first = args.to_vec();
    first.extend(["--out", s(a)]);
    stsmamba(&first)?;
    let manifest = a.join("run_manifest.txt");
    stsmamba(&[args[0], "--config", s(&manifest), "--out", s(b)])?;
    for f in files {
        let x = fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, || format!("{} differs between reruns", a.join(f).display()))?;
    }
    Ok(files.len())
}

const SCENE: &[&str] = &["--scene-height", "96", "--scene-width", "96", "--region-size", "16"];

pub fn run() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| tmp.path().join(name);
    let mut compared = 0;

    let mut gen = vec!["generate", "--per-class", "1", "--seed", "7"];
    gen.extend_from_slice(SCENE);
    compared += twice(
        &gen,
        &p("data-a"),
        &p("data-b"),
        &[
            "manifest.txt",
            "train.f32",
            "train.labels.i32",
            "val.f32",
            "val.labels.i32",
            "test.f32",
            "test.labels.i32",
        ],
    )?;

    let data = p("data-a");
    compared += twice(
        &[
            "train",
            "--data",
            s(&data),
            "--epochs",
            "2",
            "--batch-size",
            "4",
            "--checkpoint-every",
            "1",
            "--stem-features",
            "6",
            "--hidden-dim",
            "8",
            "--state-dim",
            "4",
        ],
        &p("run-a"),
        &p("run-b"),
        &["best.ckpt", "last.ckpt", "epoch-1.ckpt", "loss_curve.csv"],
    )?;

    let ckpt = p("run-a").join("last.ckpt");
    compared += twice(
        &["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--split", "val"],
        &p("eval-a"),
        &p("eval-b"),
        &["metrics.txt"],
    )?;

    let map = [
        "predict-map",
        "--checkpoint",
        s(&ckpt),
        "--seed",
        "7",
        "--scene-height",
        "64",
        "--scene-width",
        "64",
    ];
    compared += twice(&map, &p("map-a"), &p("map-b"), &["map.ppm", "metrics.txt"])?;

    Ok(format!("{compared} artifacts bit-identical across reruns of generate, train, eval and predict-map"))
}
