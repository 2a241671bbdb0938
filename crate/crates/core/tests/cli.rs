//! Exit-code contract, artifacts and determinism of the `affgroup` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affgroup::signal::io::{read_grid, write_csv};
use affgroup::{Grid2, GridGeometry, LiftedSignal};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

/// Small chart and spatial grid so every artifact builds in well under a second.
const SMALL: &[&str] = &[
    "--rho.count", "2", "--theta.count", "4", "--u.count", "2", "--w.count", "2",
    "--spatial.height", "4", "--spatial.width", "4",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_affgroup"));
    c.env("AFFGROUP_THREADS", "1");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

fn image(dir: &TempDir, name: &str, f: impl Fn(f64, f64) -> f64) -> PathBuf {
    let path = p(dir, name);
    write_csv(&Grid2::from_fn(GridGeometry::centered(16, 16, 1.0).unwrap(), f), &path).unwrap();
    path
}

fn blob(x: f64, y: f64) -> f64 {
    (-((x - 0.5) * (x - 0.5) + 0.5 * y * y) / 6.0).exp()
}

#[test]
fn gen_pair_with_identity_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.pgm"), p(&dir, "b.pgm"));
    let out = run(&["gen-pair", "--seed", "3", "--g", "0,0,1,0,0,1", "--output", s(&a), "--output2", s(&b)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let truth: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(truth["g"]["A"][0][0], 1.0);
}

#[test]
fn on_grid_translation_shifts_pixels() {
    let dir = TempDir::new().unwrap();
    let input = image(&dir, "in.csv", blob);
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    let out = run(&["gen-pair", "--input", s(&input), "--g", "2,-1,1,0,0,1", "--output", s(&a), "--output2", s(&b)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (f, g) = (read_grid(&a).unwrap(), read_grid(&b).unwrap());
    // g(x) = f(x + (2, -1)): two columns right, one row down.
    for r in 1..16 {
        for c in 0..14 {
            assert!((g.get(r, c) - f.get(r - 1, c + 2)).abs() < 1e-12);
        }
    }
}

#[test]
fn singular_g_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = run(&["gen-pair", "--g", "0,0,1,2,2,4", "--output", s(&p(&dir, "a.pgm")), "--output2", s(&p(&dir, "b.pgm"))]);
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn lift_gconv_project_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let input = image(&dir, "in.csv", blob);
    let mut hashes = Vec::new();
    for round in 0..2 {
        let lifted = p(&dir, &format!("f{round}.lift"));
        let conv = p(&dir, &format!("c{round}.lift"));
        let proj = p(&dir, &format!("p{round}.csv"));
        for args in [
            vec!["lift", "--input", s(&input), "--output", s(&lifted)],
            vec!["gconv", "--input", s(&lifted), "--output", s(&conv)],
            vec!["project", "--input", s(&conv), "--output", s(&proj)],
        ] {
            let mut args = args;
            args.extend_from_slice(SMALL);
            let out = run(&args);
            assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        }
        hashes.push([sha(&lifted), sha(&conv), sha(&proj)]);
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn lift_then_project_of_a_constant() {
    let dir = TempDir::new().unwrap();
    let geom = GridGeometry::centered(32, 32, 1.0).unwrap();
    let (one, zero) = (p(&dir, "one.csv"), p(&dir, "zero.csv"));
    write_csv(&Grid2::constant(geom, 2.0), &one).unwrap();
    write_csv(&Grid2::zeros(geom), &zero).unwrap();
    // Wide enough that the warped kernel stays resolved on the unit lattice at the
    // smallest |det A|; the remaining error is that of the spectral warp.
    let kernel_integral = affgroup::lifting::gaussian_kernel(1.5, 0.25, 3.0).unwrap().integral();
    for (src, name) in [(&one, "one"), (&zero, "zero")] {
        let lifted = p(&dir, &format!("{name}.lift"));
        let proj = p(&dir, &format!("{name}.csv"));
        let mut a = vec!["lift", "--input", s(src), "--output", s(&lifted), "--lift.sigma", "1.5", "--lift.spacing", "0.25"];
        a.extend_from_slice(SMALL);
        assert_eq!(run(&a).status.code(), Some(0));
        assert_eq!(run(&["project", "--input", s(&lifted), "--output", s(&proj)]).status.code(), Some(0));
        let l = LiftedSignal::load(&lifted).unwrap();
        let out = read_grid(&proj).unwrap();
        if name == "zero" {
            assert!(l.values().iter().all(|v| *v == 0.0));
            assert!(out.values().iter().all(|v| *v == 0.0));
        } else {
            // K f = 2 int k at every node, so the projection is that times the chart measure.
            let expected = 2.0 * kernel_integral * l.chart().total_measure();
            for v in out.values() {
                assert!((v - expected).abs() < 2e-3 * expected, "{v} vs {expected}");
            }
        }
    }
}

#[test]
fn gconv_rejects_a_foreign_chart() {
    let dir = TempDir::new().unwrap();
    let input = image(&dir, "in.csv", blob);
    let lifted = p(&dir, "f.lift");
    let mut a = vec!["lift", "--input", s(&input), "--output", s(&lifted)];
    a.extend_from_slice(SMALL);
    assert_eq!(run(&a).status.code(), Some(0));
    let conv = p(&dir, "c.lift");
    let mut a = vec!["gconv", "--input", s(&lifted), "--output", s(&conv), "--rho.count", "3"];
    a.extend_from_slice(&SMALL[2..]);
    assert_eq!(run(&a).status.code(), Some(5));
}

#[test]
fn input_errors() {
    let dir = TempDir::new().unwrap();
    let missing = p(&dir, "missing.csv");
    assert_eq!(run(&["lift", "--input", s(&missing), "--output", s(&p(&dir, "x"))]).status.code(), Some(2));
    let junk = p(&dir, "junk.lift");
    std::fs::write(&junk, "not a lifted signal").unwrap();
    assert_eq!(run(&["project", "--input", s(&junk), "--output", s(&p(&dir, "x.csv"))]).status.code(), Some(2));
    let bad = p(&dir, "bad.cfg");
    std::fs::write(&bad, "rho.count = 2\nbogus = 1\n").unwrap();
    assert_eq!(run(&["lift", "--config", s(&bad)]).status.code(), Some(6));
    assert_eq!(run(&["lift", "--rho.count", "0"]).status.code(), Some(6));
    assert_eq!(run(&["lift", "--no-such-flag", "1"]).status.code(), Some(6));
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let input = image(&dir, "in.csv", blob);
    let cfg = p(&dir, "run.cfg");
    let lifted = p(&dir, "f.lift");
    std::fs::write(&cfg, format!("input = {}\noutput = {}\nrho.count = 3\n", input.display(), lifted.display())).unwrap();
    let mut a = vec!["lift", "--config", s(&cfg)];
    a.extend_from_slice(SMALL);
    assert_eq!(run(&a).status.code(), Some(0));
    assert_eq!(LiftedSignal::load(&lifted).unwrap().chart().counts()[0], 2);
}

fn invariance(args: &[&str]) -> (Option<i32>, serde_json::Value) {
    let out = run(args);
    let report = serde_json::from_slice(&out.stdout).unwrap_or(serde_json::Value::Null);
    (out.status.code(), report)
}

#[test]
fn invariance_exit_contract() {
    let dir = TempDir::new().unwrap();
    let a = image(&dir, "a.csv", blob);
    let b = image(&dir, "b.csv", |x, y| blob(y, -x) + 0.3 * blob(x - 3.0, y + 2.0));
    let fast = ["--bank", "narrow-I", "--g", "0,0,1,0,0,1"];
    let mut args = vec!["invariance", "--input", s(&a), "--input2", s(&a)];
    args.extend_from_slice(&fast);
    let (code, report) = invariance(&args);
    assert_eq!(code, Some(0));
    assert_eq!(report["functional_gap"], 0.0);

    for (threshold, expected) in [("0", 3), ("1e12", 0)] {
        let mut args = vec!["invariance", "--input", s(&a), "--input2", s(&b), "--threshold", threshold];
        args.extend_from_slice(&fast);
        let (code, report) = invariance(&args);
        assert_eq!(code, Some(expected));
        assert!(report["functional_gap"].as_f64().unwrap() > 0.0);
        assert!(report["kernels"].as_array().unwrap().len() == 1);
    }

    let small = p(&dir, "small.csv");
    write_csv(&Grid2::zeros(GridGeometry::centered(8, 8, 1.0).unwrap()), &small).unwrap();
    let mut args = vec!["invariance", "--input", s(&a), "--input2", s(&small)];
    args.extend_from_slice(&fast);
    assert_eq!(invariance(&args).0, Some(2));
    assert_eq!(invariance(&["invariance", "--input", s(&a), "--input2", s(&p(&dir, "none.csv"))]).0, Some(2));
}

#[test]
fn convergence_studies() {
    for (study, final_bound) in [("haar", 1e-2), ("theorem4", 5e-2), ("delta", f64::INFINITY)] {
        let out = run(&["convergence", study]);
        // Exit 0 means the errors strictly decreased.
        assert_eq!(out.status.code(), Some(0), "{study}");
        let text = String::from_utf8(out.stdout).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("resolution,error"));
        let errors: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(errors.len(), 3);
        assert!(errors.windows(2).all(|w| w[1] < w[0]), "{study}: {errors:?}");
        assert!(*errors.last().unwrap() < final_bound, "{study}: {errors:?}");
    }
}

#[test]
fn generated_pair_is_recovered_by_alignment() {
    use affgroup::invariance::{oracle_align, SearchBox};
    let dir = TempDir::new().unwrap();
    let (a, b, t) = (p(&dir, "a.csv"), p(&dir, "b.csv"), p(&dir, "truth.json"));
    let out = run(&[
        "gen-pair", "--seed", "21", "--image.size", "48", "--image.spacing", "0.5",
        "--output", s(&a), "--output2", s(&b), "--truth", s(&t),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let truth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&t).unwrap()).unwrap();
    let params: Vec<f64> = truth["params"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let search = SearchBox::centered(1.0, 0.3, 0.3, 0.3).unwrap();
    let found = oracle_align(&read_grid(&a).unwrap(), &read_grid(&b).unwrap(), &search).unwrap();
    let truth: [f64; 6] = params.try_into().unwrap();
    assert!(search.within_cells(&truth, &found.params, 1.0), "{truth:?} vs {:?}", found.params);
}
