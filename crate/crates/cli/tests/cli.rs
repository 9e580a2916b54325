use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Instant;

use v3dg_core::bench::CSV_HEADER;
use v3dg_core::io::{read_bundle, write_bundle_unchecked};

fn v3dg() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_v3dg"));
    for (k, _) in std::env::vars() {
        if k.starts_with("V3DG_") {
            c.env_remove(k);
        }
    }
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// A small fixture shared by the tests: 2x2 instances of a 2048-Gaussian blob.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::Builder::new().prefix("v3dg-cli").tempdir().unwrap().keep();
        let o = run(v3dg().args(["fixture", dir.to_str().unwrap()]).args([
            "--gaussians",
            "2048",
            "--rows",
            "2",
            "--cols",
            "2",
            "--cluster-size",
            "128",
            "--iterations",
            "10",
        ]));
        assert!(o.status.success(), "{}", stderr(&o));
        dir
    })
}

const CAMERA: &str = "9,-12,7,0,0,0";

#[test]
fn fixture_bundle_passes_info() {
    let dir = fixture();
    let o = run(v3dg().arg("info").arg(dir.join("asset.v3dg")));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("all invariants hold"));
    assert!(out.contains("cluster size 128"));
    assert!(dir.join("scene.json").exists() && dir.join("asset.ply").exists());
}

#[test]
fn info_names_the_broken_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let mut b = read_bundle(&fixture().join("asset.v3dg")).unwrap();
    let i = b.clusters.iter().position(|c| c.layer == 1).unwrap();
    b.clusters[i].own.radius = b.clusters[i].parent.radius * 2.0;
    let bad = dir.path().join("bad.v3dg");
    write_bundle_unchecked(&b, &bad).unwrap();
    let o = run(v3dg().arg("info").arg(&bad));
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("corrupt bundle") && msg.contains("sphere"), "{msg}");

    let o = run(v3dg().arg("info").arg(dir.path().join("missing.v3dg")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.v3dg"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(v3dg().arg("frobnicate")).status.code(), Some(1));
    assert_eq!(run(v3dg().args(["render", "s.json"])).status.code(), Some(1));
    let scene = fixture().join("scene.json");
    let out = tempfile::tempdir().unwrap();
    let png = out.path().join("x.png");
    for bad in [["--tau", "-1"], ["--mode", "fast"], ["--camera", "1,2,3"], ["--width", "0"]] {
        let o = run(v3dg().arg("render").arg(&scene).arg(&png).args(bad));
        assert_eq!(o.status.code(), Some(1), "{bad:?}: {}", stderr(&o));
        assert!(!png.exists());
    }
    let o = run(v3dg().arg("build").arg("a.ply").arg("b.v3dg").args(["--group-size", "1"]));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(run(v3dg().arg("--help")).status.code(), Some(0));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.v3dg");
    let o = run(v3dg().args(["build", "/nonexistent/tree.ply"]).arg(&out));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/tree.ply"));
    assert!(!out.exists());
}

fn render(extra: &[&str]) -> (Vec<u8>, String) {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("f.png");
    let o = run(v3dg()
        .arg("render")
        .arg(fixture().join("scene.json"))
        .arg(&png)
        .args(["--camera", CAMERA, "--width", "160", "--height", "90"])
        .args(extra));
    assert!(o.status.success(), "{}", stderr(&o));
    (std::fs::read(&png).unwrap(), stderr(&o))
}

fn reported_count(line: &str) -> usize {
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn tau_zero_is_vanilla_and_huge_tau_is_the_top_layer() {
    let (zero, _) = render(&["--tau", "0"]);
    let (vanilla, line) = render(&["--mode", "vanilla"]);
    assert_eq!(zero, vanilla);
    assert_eq!(reported_count(&line), 4 * 2048);

    let b = read_bundle(&fixture().join("asset.v3dg")).unwrap();
    let top = b.layer_gaussian_count(b.top_layer());
    let (_, line) = render(&["--tau", "1e18"]);
    assert_eq!(reported_count(&line), 4 * top, "{line}");
}

#[test]
fn radius_clip_mode_runs() {
    let (_, line) = render(&["--mode", "radius-clip", "--clip", "2.0"]);
    assert!(line.starts_with("radius-clip:"), "{line}");
    assert!(reported_count(&line) <= 4 * 2048);
}

#[test]
fn bench_writes_the_exact_schema() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bench.csv");
    let o = run(v3dg()
        .arg("bench")
        .arg(fixture().join("scene.json"))
        .arg("--out")
        .arg(&csv_path)
        .args(["--width", "48", "--height", "27", "--taus", "512,8192", "--extent", "20"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    assert_eq!(lines.count(), 4 * 5 * 5 * 2);
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        assert_eq!(rec.len(), 11);
        let pct: f64 = rec[6].parse().unwrap();
        assert!((0.0..=100.0).contains(&pct));
    }
}

#[test]
fn flags_beat_environment_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let toml = dir.path().join("v3dg.toml");
    std::fs::write(&toml, "cluster-size = 512\niterations = 0\nseed = 9\n").unwrap();
    let ply = fixture().join("asset.ply");
    let info_of = |args: &[&str], env: &[(&str, &str)]| {
        let out = dir.path().join("b.v3dg");
        let mut c = v3dg();
        c.arg("--config").arg(&toml).arg("build").arg(&ply).arg(&out).args(args);
        for (k, v) in env {
            c.env(k, v);
        }
        let o = run(&mut c);
        assert!(o.status.success(), "{}", stderr(&o));
        let b = read_bundle(&out).unwrap();
        (b.params.cluster_size, b.params.iterations, b.params.seed)
    };
    assert_eq!(info_of(&[], &[]), (512, 0, 9));
    assert_eq!(info_of(&[], &[("V3DG_CLUSTER_SIZE", "256")]), (256, 0, 9));
    assert_eq!(info_of(&["--cluster-size", "1024"], &[("V3DG_CLUSTER_SIZE", "256")]), (1024, 0, 9));

    std::fs::write(&toml, "clustr-size = 1\n").unwrap();
    let o = run(v3dg().arg("--config").arg(&toml).arg("info").arg(fixture().join("asset.v3dg")));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_iterations_build_faster() {
    let dir = tempfile::tempdir().unwrap();
    let ply = fixture().join("asset.ply");
    let time = |it: &str| {
        let started = Instant::now();
        let o = run(v3dg()
            .arg("build")
            .arg(&ply)
            .arg(dir.path().join(format!("b{it}.v3dg")))
            .args(["--cluster-size", "512", "--iterations", it]));
        assert!(o.status.success());
        started.elapsed()
    };
    let (fast, slow) = (time("0"), time("640"));
    assert!(fast < slow, "{fast:?} vs {slow:?}");
}

#[test]
fn build_and_render_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ply = fixture().join("asset.ply");
    let build = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = run(v3dg()
            .env("V3DG_THREADS", threads)
            .arg("build")
            .arg(&ply)
            .arg(&out)
            .args(["--cluster-size", "256", "--iterations", "30", "--seed", "5"]));
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out).unwrap()
    };
    let a = build("a.v3dg", "2");
    assert_eq!(a, build("b.v3dg", "2"));
    assert_eq!(a, build("c.v3dg", "1"));
    assert_eq!(render(&["--tau", "1024"]).0, render(&["--tau", "1024"]).0);
}
