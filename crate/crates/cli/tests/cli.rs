use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recdistill"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("presets")
        .join(format!("{name}.toml"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn recdistill")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn err(args: &[&str]) -> String {
    let out = run(args);
    assert!(!out.status.success(), "expected failure for {args:?}");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    let head = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    (
        head,
        lines
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect(),
    )
}

/// Copy of a preset with fewer iterations.
fn short_preset(dir: &Path, name: &str, iters: usize) -> PathBuf {
    let text = fs::read_to_string(preset(name)).unwrap();
    assert!(text.contains("iters = 4000"));
    let path = dir.join(format!("{name}.toml"));
    fs::write(
        &path,
        text.replace("iters = 4000", &format!("iters = {iters}")),
    )
    .unwrap();
    path
}

#[test]
fn every_distill_preset_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "appendixE_vsd",
        "appendixE_usd",
        "control_front",
        "control_back",
        "ablation_direct",
        "ablation_fixed",
    ] {
        let cfg = short_preset(dir.path(), name, 20);
        let out = dir.path().join(name);
        ok(&["distill", "--config", s(&cfg), "--out-dir", s(&out)]);
        for f in ["particles.csv", "ema.csv", "metrics.csv", "summary.csv"] {
            assert!(out.join(f).exists(), "{name}: {f}");
        }
        let (head, rows) = read_rows(&out.join("metrics.csv"));
        assert_eq!(
            head,
            [
                "iter",
                "t_low",
                "t_high",
                "split_0",
                "split_1",
                "entropy",
                "mean_grad_norm"
            ]
        );
        assert_eq!(rows.len(), 21);
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_preset(dir.path(), "appendixE_vsd", 10);
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(&["distill", "--config", s(&cfg), "--out-dir", s(&a)]);
    ok(&[
        "distill",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&b),
        "--seed",
        "0",
    ]);
    ok(&[
        "distill",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&c),
        "--seed",
        "9",
    ]);
    let p = |d: &Path| fs::read(d.join("particles.csv")).unwrap();
    assert_eq!(p(&a), p(&b));
    assert_ne!(p(&a), p(&c));
}

#[test]
fn balanced_rectification_leaves_density_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "rectify-demo",
        "--config",
        s(&preset("rectify_balanced")),
        "--out-dir",
        s(dir.path()),
    ]);
    let (head, rows) = read_rows(&dir.path().join("density.csv"));
    let col = |name: &str| head.iter().position(|h| h == name).unwrap();
    for (a, b) in [("p", "p_rect"), ("p_t300", "p_rect_t300")] {
        for row in &rows {
            assert_eq!(row[col(a)], row[col(b)]);
        }
    }
}

#[test]
fn biased_rectification_reaches_uniform_marginal() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "rectify-demo",
        "--config",
        s(&preset("rectify_biased")),
        "--out-dir",
        s(dir.path()),
    ]);
    let (_, rows) = read_rows(&dir.path().join("summary.csv"));
    let tv: f64 = rows.iter().find(|r| r[0] == "tv_rectified_target").unwrap()[1]
        .parse()
        .unwrap();
    assert!(tv < 1e-3);
    let (head, rows) = read_rows(&dir.path().join("marginal.csv"));
    assert_eq!(head, ["category", "prior", "rectified", "target"]);
    let prior0: f64 = rows[0][1].parse().unwrap();
    assert!((prior0 - 0.8).abs() < 1e-6);
}

#[test]
fn missing_category_is_a_precondition_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "[mixture]\nnum_categories = 2\ncomponents = [ { weight = 1.0, mean = [0.0], variance = 1.0, category = 0 } ]\n",
    )
    .unwrap();
    let msg = err(&[
        "rectify-demo",
        "--config",
        s(&cfg),
        "--out-dir",
        s(&dir.path().join("o")),
    ]);
    assert!(msg.contains("p(c) != 0"), "{msg}");
}

#[test]
fn unknown_and_malformed_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[distill]\nmethdo = \"vsd\"\n").unwrap();
    let msg = err(&["distill", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert!(msg.contains("methdo") && msg.contains("line 2"), "{msg}");
    fs::write(&cfg, "[distill]\nmethod = \"sgd\"\n").unwrap();
    let msg = err(&["distill", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert!(msg.contains("sgd"), "{msg}");
    fs::write(&cfg, "[unknown]\n").unwrap();
    err(&["distill", "--config", s(&cfg), "--out-dir", s(dir.path())]);
}

#[test]
fn divergence_is_propagated() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(preset("appendixE_vsd"))
        .unwrap()
        .replace("eta1 = 0.1", "eta1 = 1e9");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, text).unwrap();
    let msg = err(&["distill", "--config", s(&cfg), "--out-dir", s(dir.path())]);
    assert!(msg.contains("diverged") && msg.contains("vsd"), "{msg}");
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["glyphs", "--out-dir", s(dir.path()), "--per-category", "1"])
        .env("RECDISTILL_THREADS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("RECDISTILL_THREADS"));
}

#[test]
fn glyph_corpus_layout_and_classification() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&["glyphs", "--out-dir", s(&g), "--per-category", "3"]);
    for c in ["front", "back", "left", "right"] {
        let bytes = fs::read(g.join("templates").join(format!("{c}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5"));
        assert!(g.join("corpus").join(format!("{c}_0002.pgm")).exists());
    }
    let out = dir.path().join("c");
    ok(&[
        "classify",
        s(&g.join("templates")),
        s(&g.join("corpus")),
        "--out-dir",
        s(&out),
    ]);
    let (head, rows) = read_rows(&out.join("probabilities.csv"));
    assert_eq!(
        head,
        [
            "file",
            "p_front",
            "p_back",
            "p_left",
            "p_right",
            "predicted",
            "truth"
        ]
    );
    assert_eq!(rows.len(), 12);
    for row in &rows {
        let sum: f64 = row[1..5].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let (head, rows) = read_rows(&out.join("confusion.csv"));
    assert_eq!(head, ["truth", "front", "back", "left", "right"]);
    assert_eq!(rows.len(), 4);
    let (_, rows) = read_rows(&out.join("summary.csv"));
    for key in [
        "accuracy",
        "precision_front",
        "recall_left",
        "f1_right",
        "macro_f1",
    ] {
        assert!(rows.iter().any(|r| r[0] == key), "{key}");
    }
}

#[test]
fn ablation_flags_are_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    err(&[
        "classify",
        s(dir.path()),
        s(dir.path()),
        "--out-dir",
        s(dir.path()),
        "--orient-only",
        "--texture-only",
    ]);
}

#[test]
fn missing_template_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    ok(&["glyphs", "--out-dir", s(&g), "--per-category", "1"]);
    fs::remove_file(g.join("templates/left.pgm")).unwrap();
    let msg = err(&[
        "classify",
        s(&g.join("templates")),
        s(&g.join("corpus")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(msg.contains("left.pgm"), "{msg}");
}

#[test]
fn uniform_rows_have_entropy_ln_k() {
    let dir = tempfile::tempdir().unwrap();
    let probs = dir.path().join("p.csv");
    fs::write(
        &probs,
        "file,p_a,p_b,p_c,p_d\nx,0.25,0.25,0.25,0.25\ny,0.25,0.25,0.25,0.25\n",
    )
    .unwrap();
    let out = dir.path().join("m");
    ok(&["metrics", "--out-dir", s(&out), "--probs", s(&probs)]);
    let (head, rows) = read_rows(&out.join("metrics.csv"));
    assert_eq!(head, ["input", "kind", "entropy", "tv_uniform", "frechet"]);
    let e: f64 = rows[0][2].parse().unwrap();
    assert!((e - 4f64.ln()).abs() < 1e-12);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn malformed_rows_are_rejected_with_row_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let probs = dir.path().join("p.csv");
    fs::write(&probs, "file,p_a,p_b\nx,0.5,0.5\ny,0.9,0.5\n").unwrap();
    let msg = err(&["metrics", "--out-dir", s(dir.path()), "--probs", s(&probs)]);
    assert!(msg.contains("row 3"), "{msg}");
    fs::write(&probs, "file,p_a,p_b\nx,0.5,abc\n").unwrap();
    let msg = err(&["metrics", "--out-dir", s(dir.path()), "--probs", s(&probs)]);
    assert!(msg.contains("row 2"), "{msg}");
    let parts = dir.path().join("q.csv");
    fs::write(&parts, "iter,particle,x0\n0,0,1.0\n0,1\n").unwrap();
    let msg = err(&[
        "metrics",
        "--out-dir",
        s(dir.path()),
        "--particles",
        s(&parts),
        "--reference",
        s(&parts),
    ]);
    assert!(msg.contains("row 3"), "{msg}");
}

#[test]
fn identical_particle_files_have_zero_frechet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_preset(dir.path(), "appendixE_vsd", 10);
    let run_dir = dir.path().join("r");
    ok(&["distill", "--config", s(&cfg), "--out-dir", s(&run_dir)]);
    let particles = run_dir.join("particles.csv");
    let out = dir.path().join("m");
    ok(&[
        "metrics",
        "--out-dir",
        s(&out),
        "--config",
        s(&cfg),
        "--particles",
        s(&particles),
        "--reference",
        s(&particles),
    ]);
    let (_, rows) = read_rows(&out.join("metrics.csv"));
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), 0.0);
    let entropy: f64 = rows[0][2].parse().unwrap();
    assert!(entropy >= 0.0 && entropy <= 2f64.ln() + 1e-12);
}
