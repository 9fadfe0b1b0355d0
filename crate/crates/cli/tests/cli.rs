use std::path::Path;
use std::process::{Command, Output};

fn direp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_direp"))
        .args(args)
        .env_remove("DIREP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_blobs(out: &Path, algo: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--algo",
        algo,
        "--iters",
        "40",
        "--batch",
        "16",
        "--eval-every",
        "20",
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    direp(&args)
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = run_blobs(&a, "vaegan", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean target accuracy"));
    let o = run_blobs(&b, "dann", &["--cheating", "shift", "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let o = direp(&["compare", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("A vaegan/none") && text.contains("B dann/shift") && text.contains("z = "), "{text}");

    let o = direp(&["compare", "--json", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["accs_a"].as_array().unwrap().len(), 2);
}

#[test]
fn config_errors_exit_with_2() {
    for args in [
        &["run", "--iters", "0"][..],
        &["run", "--algo", "gan", "--ablation", "dsn_star"],
        &["run", "--dataset", "fm"],
        &["run", "--dataset", "cifar", "--data-dir", "/nowhere"],
        &["run", "--algo", "nope"],
        &["run", "--semi", "3"],
    ] {
        let o = direp(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("invalid configuration"), "{args:?}: {}", stderr(&o));
    }
    // clap's own usage errors use the same code
    assert_eq!(direp(&["run", "--iters", "many"]).status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# blobs smoke test\nalgo = dsn\niters = 0\nbatch = 16\nseeds = 1\n").unwrap();
    let o = direp(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = direp(&["run", "--config", cfg.to_str().unwrap(), "--iters", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("dsn on blobs"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_blobs(dir.path(), "gan", &["--lr", "1e30"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn verify_geometry_writes_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let o = direp(&["verify-geometry", "--instances", "10", "--n-theta", "100", "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("11 instances x 100 angles"));
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn dump_recon_from_a_run_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run_blobs(&out, "explicit", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = out.join("checkpoints").join("seed0.ckpt");
    let images = dir.path().join("img");
    let base = ["dump-recon", "--checkpoint", ckpt.to_str().unwrap(), "--out", images.to_str().unwrap()];

    // blobs are not images unless a shape is given
    let o = direp(&base);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let mut args = base.to_vec();
    args.extend(["--shape", "8x4", "--samples", "3"]);
    let o = direp(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(images.join("target").join("0002_flip.pgm").exists());
    assert!(stdout(&o).contains("source: 3 samples"));
}
