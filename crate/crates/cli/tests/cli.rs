use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use densefield::synthworld::BenchmarkScene;
use serde_json::Value;

fn densefield(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densefield"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_command_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let top = densefield(&["--help"], dir.path());
    ok(&top);
    let text = String::from_utf8_lossy(&top.stdout);
    for cmd in ["gen-scene", "train", "render", "eval-depth", "eval-occ", "eval-nvs"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
        let sub = densefield(&[cmd, "--help"], dir.path());
        ok(&sub);
        assert!(String::from_utf8_lossy(&sub.stdout).contains("--threads"));
    }
    let train = String::from_utf8_lossy(&densefield(&["train", "--help"], dir.path()).stdout).to_string();
    for unit in ["[steps]", "[per step]", "[count]", "[JSON"] {
        assert!(train.contains(unit), "train help lacks {unit}");
    }
    let render = String::from_utf8_lossy(&densefield(&["render", "--help"], dir.path()).stdout).to_string();
    assert!(render.contains("[m]"));
}

#[test]
fn gen_scene_is_deterministic_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&densefield(&["gen-scene", "--profile", "street", "--seed", "3", "--out", "a/s.json"], d));
    ok(&densefield(&["gen-scene", "--profile", "street", "--seed", "3", "--out", "b/s.json"], d));
    let a = fs::read(d.join("a/s.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b/s.json")).unwrap());
    BenchmarkScene::from_json(std::str::from_utf8(&a).unwrap()).unwrap();
    let m = json(&d.join("a/manifest.json"));
    assert_eq!(m["runs"]["gen-scene"]["seed"], 3);
    assert_eq!(m["runs"]["gen-scene"]["config"]["profile"], "street");

    let bad = densefield(&["gen-scene", "--profile", "moon", "--out", "c/s.json"], d);
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    for p in ["plane", "two_object_occlusion", "street", "random"] {
        assert!(err.contains(p), "{err}");
    }
    assert!(!d.join("c/s.json").exists());

    let usage = densefield(&["gen-scene", "--out", "c/s.json"], d);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn oracle_occupancy_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&densefield(&["gen-scene", "--profile", "two_object_occlusion", "--out", "occ.json"], d));
    ok(&densefield(&["eval-occ", "--predictor", "oracle", "--scene", "occ.json", "--out", "rep/occ.json"], d));
    let r = json(&d.join("rep/occ.json"));
    assert!(r["metrics"]["o_acc"].as_f64().unwrap() >= 0.95, "{r}");
    assert_eq!(r["counts"]["points"], 2720);
    assert!(r["counts"]["invisible"].as_u64().unwrap() > 0);
    assert_eq!(r["config"]["labels"], "carved");
    assert_eq!(r["config"]["bins"], 360);
    let m = json(&d.join("rep/manifest.json"));
    assert!(m["runs"]["eval-occ"]["wall_seconds"].as_f64().is_some());

    let missing = densefield(&["eval-occ", "--scene", "occ.json", "--out", "rep2/occ.json"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!d.join("rep2/occ.json").exists());
}

#[test]
fn missing_inputs_exit_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&densefield(&["gen-scene", "--profile", "plane", "--out", "p.json"], d));
    let r = densefield(&["render", "--checkpoint", "none.bin", "--scene", "p.json", "--out", "r"], d);
    assert_eq!(r.status.code(), Some(3));
    let r = densefield(&["eval-depth", "--checkpoint", "none.bin", "--scene", "p.json", "--out", "r/d.json"], d);
    assert_eq!(r.status.code(), Some(3));
    assert!(!d.join("r/d.json").exists());
    fs::write(d.join("broken.json"), "{").unwrap();
    let r = densefield(&["train", "--scene", "broken.json", "--out", "run"], d);
    assert_eq!(r.status.code(), Some(3));
    let r = densefield(&["train", "--scene", "p.json", "--out", "run", "--resume"], d);
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn train_resume_render_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&densefield(&["gen-scene", "--profile", "plane", "--seed", "2", "--out", "plane.json"], d));

    // Desk-profile smoke run.
    ok(&densefield(&["train", "--scene", "plane.json", "--out", "smoke", "--steps", "50"], d));
    let m = json(&d.join("smoke/manifest.json"));
    let secs = m["runs"]["train"]["timings"]["train_seconds"].as_f64().unwrap();
    assert!(secs < 60.0, "50 desk steps took {secs:.1}s");
    let log = fs::read_to_string(d.join("smoke/metrics.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, vec![9, 19, 29, 39, 49]);

    // Interrupted and resumed run equals an uninterrupted one, byte for byte.
    let small = ["--mode", "direct", "--batch-size", "1", "--log-every", "2"];
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--scene", "plane.json", "--out", out, "--steps", "6"];
        args.extend(small);
        args.extend(extra);
        ok(&densefield(&args, d));
    };
    run("straight", &[]);
    run("again", &[]);
    run("split", &["--until", "4"]);
    let partial = fs::read(d.join("split/checkpoint.bin")).unwrap();
    run("split", &["--resume"]);
    let ck = fs::read(d.join("straight/checkpoint.bin")).unwrap();
    assert_eq!(ck, fs::read(d.join("again/checkpoint.bin")).unwrap());
    assert_ne!(ck, partial);
    assert_eq!(ck, fs::read(d.join("split/checkpoint.bin")).unwrap());
    let log = |dir: &str| fs::read(d.join(dir).join("metrics.jsonl")).unwrap();
    assert_eq!(log("straight"), log("split"));
    assert_eq!(log("straight"), log("again"));
    let m = json(&d.join("split/manifest.json"));
    assert_eq!(m["runs"]["train"]["config"]["resumed_from_step"], 4);

    let ckpt = "straight/checkpoint.bin";
    ok(&densefield(&["render", "--checkpoint", ckpt, "--scene", "plane.json", "--out", "render", "--role", "lateral"], d));
    for f in ["depth.pfm", "depth.png", "view.png", "valid.png", "slice.png", "slice.pfm", "manifest.json"] {
        assert!(d.join("render").join(f).exists(), "{f} missing");
    }
    ok(&densefield(&["render", "--checkpoint", ckpt, "--scene", "plane.json", "--out", "render2", "--role", "lateral"], d));
    for f in ["depth.pfm", "view.png", "slice.pfm"] {
        assert_eq!(fs::read(d.join("render").join(f)).unwrap(), fs::read(d.join("render2").join(f)).unwrap());
    }

    for (cmd, file) in [("eval-depth", "depth.json"), ("eval-nvs", "nvs.json"), ("eval-occ", "occ.json")] {
        let out = format!("rep/{file}");
        ok(&densefield(&[cmd, "--checkpoint", ckpt, "--scene", "plane.json", "--out", &out], d));
        let first = fs::read(d.join(&out)).unwrap();
        ok(&densefield(&[cmd, "--checkpoint", ckpt, "--scene", "plane.json", "--out", &out], d));
        assert_eq!(first, fs::read(d.join(&out)).unwrap(), "{cmd} is not deterministic");
        let r = json(&d.join(&out));
        assert_eq!(r["command"], cmd);
        assert!(r["counts"].is_object() && r["config"]["train"].is_object());
    }
    let nvs = json(&d.join("rep/nvs.json"));
    let names: Vec<&str> = nvs["metrics"]["views"].as_array().unwrap().iter().map(|v| v["view"].as_str().unwrap()).collect();
    assert_eq!(names, ["input", "stereo", "previous", "lateral_0", "lateral_1"]);
    let m = json(&d.join("rep/manifest.json"));
    assert_eq!(m["runs"].as_object().unwrap().len(), 3);
}
