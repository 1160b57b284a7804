use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use porelab::dataset::{read_manifest, read_record};

fn porelab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_porelab"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = porelab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no `{key}` in {stdout}"))
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn structure_to_loss_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gen = ok(d, &["gen", "trig", "--size", "24", "--porosity", "0.8", "--seed", "3", "--out", "s.pfl"]);
    let phi: f64 = value(&gen, "porosity").parse().unwrap();
    assert!((phi - 0.8).abs() <= 1.0 / 576.0);
    assert!(read_record(&d.join("s.pfl")).unwrap().field.is_none());

    let sim = ok(d, &["simulate", "--input", "s.pfl", "--output", "f.pfl"]);
    assert_eq!(value(&sim, "converged"), "true");
    let cold: u64 = value(&sim, "iterations").parse().unwrap();

    let props = ok(d, &["props", "--structure", "s.pfl", "--field", "f.pfl"]);
    let mut lines = props.lines();
    assert_eq!(lines.next(), Some("phi,tau,k,mean_v,max_v"));
    let tau: f64 = lines.next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(tau >= 1.0);

    let json = ok(d, &["--format", "json", "props", "--structure", "s.pfl", "--field", "f.pfl"]);
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed["tortuosity"].as_f64().unwrap(), tau);

    let loss = ok(d, &["loss", "--structure", "s.pfl", "--pred", "f.pfl", "--ref", "f.pfl"]);
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("l_vel,l_obstacle,l_div,l_perio,l_tort,total"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!((row[0], row[1], row[3], row[4]), (0.0, 0.0, 0.0, 0.0));

    // a stored converged field needs at most two checks
    let warm = ok(d, &["simulate", "--input", "s.pfl", "--warm", "f.pfl"]);
    let warm_iters: u64 = value(&warm, "iterations").parse().unwrap();
    assert!(warm_iters <= 200 && warm_iters < cold, "{warm_iters} vs {cold}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&porelab(d, &["--help"])), 0);
    assert_eq!(code(&porelab(d, &["simulate"])), 1);
    assert_eq!(code(&porelab(d, &["gen", "trig", "--porosity", "1.5", "--out", "x.pfl"])), 1);
    assert_eq!(code(&porelab(d, &["simulate", "--input", "missing.pfl"])), 2);

    ok(d, &["gen", "shapes", "--size", "16", "--porosity", "0.8", "--seed", "1", "--out", "s.pfl"]);
    let mut bytes = fs::read(d.join("s.pfl")).unwrap();
    let last = bytes.len() - 5;
    bytes[last] ^= 0x10;
    fs::write(d.join("bad.pfl"), bytes).unwrap();
    assert_eq!(code(&porelab(d, &["simulate", "--input", "bad.pfl"])), 2);

    let out = porelab(d, &["simulate", "--input", "s.pfl", "--max-iters", "100", "--tol", "1e-14"]);
    assert_eq!(code(&out), 3);
    assert_eq!(value(&String::from_utf8(out.stdout).unwrap(), "converged"), "false");
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.cfg"), "# small runs\nsize = 16\nseed = 9\n").unwrap();
    ok(d, &["--config", "run.cfg", "gen", "trig", "--porosity", "0.8", "--out", "a.pfl"]);
    assert_eq!(read_record(&d.join("a.pfl")).unwrap().grid.size(), 16);
    ok(d, &["--config", "run.cfg", "gen", "trig", "--porosity", "0.8", "--size", "20", "--out", "b.pfl"]);
    assert_eq!(read_record(&d.join("b.pfl")).unwrap().grid.size(), 20);

    fs::write(d.join("bad.cfg"), "sise = 16\n").unwrap();
    let out = porelab(d, &["--config", "bad.cfg", "gen", "trig", "--porosity", "0.8", "--out", "c.pfl"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn dataset_commands_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for out in ["a", "b"] {
        ok(d, &["--jobs", "2", "dataset", "gen", "--count", "5", "--size", "16", "--seed", "4", "--out", out]);
    }
    for entry in fs::read_dir(d.join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(d.join("a").join(&name)).unwrap(), fs::read(d.join("b").join(&name)).unwrap());
    }
    let manifest = read_manifest(&d.join("a")).unwrap();
    assert_eq!(manifest.len(), 5);

    let split = ok(d, &["dataset", "split", "--dataset", "a", "--seed", "1"]);
    assert_eq!(split, ok(d, &["dataset", "split", "--dataset", "a", "--seed", "1"]));
    assert_eq!(split.lines().count(), 6);

    // augmentation keeps the manifest properties up to stored precision
    ok(d, &["augment", "--dataset", "a", "--seed", "2", "--out", "aug"]);
    let augmented = read_manifest(&d.join("aug")).unwrap();
    for (x, y) in manifest.iter().zip(&augmented) {
        assert_eq!(x.porosity, y.porosity);
        assert!((x.tortuosity - y.tortuosity).abs() <= 1e-12 * x.tortuosity);
        assert!((x.permeability - y.permeability).abs() <= 1e-12 * x.permeability);
    }
}

#[test]
fn warmstart_stats_and_band() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["dataset", "gen", "--count", "6", "--size", "16", "--seed", "4", "--out", "ds"]);

    let summary = ok(d, &["warmstart", "--dataset", "ds", "--warm-source", "files:ds", "--out", "ws.csv"]);
    assert_eq!(value(&summary, "fraction_faster"), "1");
    let report = fs::read_to_string(d.join("ws.csv")).unwrap();
    assert!(report.starts_with("id,cold_iters,warm_iters,reduction,porosity,converged\n"));
    assert_eq!(report.lines().count(), 7);

    let noisy = ok(d, &["warmstart", "--dataset", "ds", "--warm-source", "noise:0.1", "--seed", "3"]);
    assert_eq!(noisy, ok(d, &["warmstart", "--dataset", "ds", "--warm-source", "noise:0.1", "--seed", "3"]));
    let out = porelab(d, &["warmstart", "--dataset", "ds", "--warm-source", "guess:1"]);
    assert_eq!(code(&out), 1);

    let stats = ok(d, &["stats", "--input", "ws.csv", "--column", "cold_iters", "--paired", "warm_iters"]);
    let mut lines = stats.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let p = header.iter().position(|h| *h == "wilcoxon_p").unwrap();
    // six positive differences: exact p = 2 / 2^6
    assert_eq!(row[p].parse::<f64>().unwrap(), 0.03125);

    ok(
        d,
        &[
            "band", "pairs", "--ref", "ds/record_00000.pfl", "ds/record_00001.pfl", "--pred", "ds/record_00001.pfl",
            "ds/record_00000.pfl", "--out", "pairs.csv",
        ],
    );
    ok(d, &["band", "fit", "--pairs", "pairs.csv", "--bins", "5", "--min-per-bin", "10", "--out", "band.csv"]);
    let eval = ok(d, &["band", "eval", "--band", "band.csv", "--x", "0,0.000001"]);
    assert!(eval.lines().count() >= 3, "{eval}");
    let cov = ok(d, &["band", "coverage", "--band", "band.csv", "--pairs", "pairs.csv"]);
    let c: f64 = value(&cov, "coverage").parse().unwrap();
    assert!((0.5..=1.0).contains(&c), "{c}");
}

#[test]
fn repro_writes_dataset_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["repro", "--count", "5", "--size", "16", "--seed", "1", "--out", "run"]);
    assert_eq!(value(&out, "samples"), "5");
    assert!(d.join("run/dataset/manifest.csv").exists());
    assert!(d.join("run/warmstart.csv").exists());
}
