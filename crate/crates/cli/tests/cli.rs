use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
iterations = 4
phase1_rays = 16
phase1_surface = 16
phase2_rays = 16
phase2_surface = 16
hold_out_every = 3
val_pixels = 32
render.n_coarse = 4
render.n_fine = 4
render.chunk = 64
model.encoder.input_res = 16
model.encoder.base = 4
model.encoder.f_coarse = 3
model.encoder.f_fine = 3
model.encoder.depth = 1
model.field.width = 8
model.field.heads = 2
model.field.n_freq = 2
";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_turnaround"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    err.lines()
        .find(|l| l.starts_with("error: category="))
        .unwrap_or_else(|| panic!("no error line in {err}"))
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_on_a_tiny_character() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (data, run_dir, cfg) = (d.join("data"), d.join("run"), d.join("tiny.cfg"));
    std::fs::write(&cfg, TINY).unwrap();

    ok(&["gen-data", "--generator", "sphere", "--resolution", "16", "--views", "6", "--seed", "3", "--out", s(&data)]);
    assert!(data.join("intrinsics.json").exists() && data.join("mesh.obj").exists());

    let common = ["--config", s(&cfg), "--seed", "5"];
    let text = ok(&[&["train", "--data", s(&data), "--out", s(&run_dir)][..], &common].concat());
    assert!(text.contains("4 iterations"));
    let ckpt = run_dir.join("model.ckpt");
    assert!(ckpt.exists() && run_dir.join("metrics.csv").exists());
    let saved = std::fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(saved.contains("seed = 5\n") && saved.contains("model.field.width = 8\n"));

    let c = s(&ckpt);
    let png = d.join("view.png");
    ok(&[&["render", "--checkpoint", c, "--data", s(&data), "--view", "2", "--out", s(&png)][..], &common].concat());
    assert!(png.exists());
    let orbit = d.join("orbit.png");
    ok(&[&["render", "--checkpoint", c, "--data", s(&data), "--azimuth", "30", "--out", s(&orbit)][..], &common].concat());

    let obj = d.join("mesh.obj");
    ok(&[&["mesh", "--checkpoint", c, "--data", s(&data), "--resolution", "8", "--cameras", "2", "--iso", "0.01", "--out", s(&obj)][..], &common].concat());
    assert!(obj.exists());

    let ev = d.join("eval");
    let text = ok(&[&["eval", "--checkpoint", c, "--data", s(&data), "--views", "1,4", "--out", s(&ev)][..], &common].concat());
    assert!(text.starts_with("2 views"));
    assert_eq!(std::fs::read_to_string(ev.join("views.csv")).unwrap().lines().count(), 3);
    assert_eq!(std::fs::read_to_string(ev.join("bins.csv")).unwrap().lines().count(), 37);

    let att = d.join("attention.csv");
    ok(&[&["attn-sweep", "--checkpoint", c, "--data", s(&data), "--azimuth-step", "90", "--resolution", "8", "--out", s(&att)][..], &common].concat());
    // Five azimuths, two heads each, plus the header.
    assert_eq!(std::fs::read_to_string(&att).unwrap().lines().count(), 11);

    let tuned = d.join("tuned");
    ok(&[&["finetune", "--checkpoint", c, "--data", s(&data), "--out", s(&tuned), "--set", "iterations=2"][..], &common].concat());
    assert!(tuned.join("model.ckpt").exists());
}

#[test]
fn errors_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data", s(&dir.path().join("missing")), "--set", "iterations=1"]);
    assert!(error_line(&out).starts_with("error: category=io message="));

    let out = run(&["train", "--data", "x", "--set", "no_such_key=1"]);
    assert!(error_line(&out).starts_with("error: category=config "));

    let out = run(&["train", "--data", "x", "--set", "iterations"]);
    assert!(error_line(&out).starts_with("error: category=config "));

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "iterations: 3\n").unwrap();
    let out = run(&["train", "--data", "x", "--config", s(&cfg)]);
    assert!(error_line(&out).starts_with("error: category=format "));

    let out = run(&["gen-data", "--resolution", "0", "--out", s(&dir.path().join("d"))]);
    assert!(error_line(&out).starts_with("error: category=config "));
}
