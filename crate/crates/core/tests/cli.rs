use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ias(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ias"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn ias")
}

fn small_run(dir: &Path, out: &str, seed: &str) -> Output {
    ias(
        &["run", "--preset", "example1-plain-gamma", "--seed", seed, "--out", out, "--override", "max_outer=8"],
        dir,
    )
}

#[test]
fn presets_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ias(&["presets"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 12);
    for family in ["example1", "example2", "example3"] {
        for variant in ["plain-gamma", "plain-invgamma", "local-hybrid", "global-hybrid"] {
            assert!(text.lines().any(|l| l == format!("{family}-{variant}")), "{family}-{variant}");
        }
    }
}

#[test]
fn same_seed_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = small_run(dir.path(), out, "7");
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace.csv", "convexity.csv", "reconstruction.csv", "theta.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let trace = fs::read_to_string(dir.path().join("a/trace.csv")).unwrap();
    assert!(trace.starts_with("# schema ias-trace/1\n"));
    let ts: Vec<usize> = trace.lines().skip(2).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ts, (0..ts.len()).collect::<Vec<_>>());
}

#[test]
fn different_seed_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_run(dir.path(), "a", "7").status.success());
    assert!(small_run(dir.path(), "b", "8").status.success());
    let a = fs::read(dir.path().join("a/reconstruction.csv")).unwrap();
    let b = fs::read(dir.path().join("b/reconstruction.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn malformed_config_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "preset = example1-plain-gamma\ntau = fast\n").unwrap();
    let out = ias(&["run", "--config", "bad.cfg", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2") && err.contains("tau"), "{err}");
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_key_and_preset_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = ias(&["show", "--preset", "example9-plain-gamma"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = ias(&["show", "--preset", "example1-plain-gamma", "--override", "warp=9"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warp"));
}

#[test]
fn show_output_is_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = ias(&["show", "--preset", "example2-local-hybrid", "--seed", "3"], dir.path());
    assert!(out.status.success());
    fs::write(dir.path().join("c.cfg"), &out.stdout).unwrap();
    let again = ias(&["show", "--config", "c.cfg"], dir.path());
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn compare_with_itself_has_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_run(dir.path(), "a", "7").status.success());
    let out = ias(&["compare", "a", "a"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4, "{line}");
        assert_eq!(cols[1], cols[2], "{line}");
        if let Ok(d) = cols[3].parse::<f64>() {
            assert_eq!(d, 0.0, "{line}");
        }
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn compare_missing_run_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = ias(&["compare", "nope", "nada"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
}

#[test]
fn generate_pins_data_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let g = ias(&["generate", "--preset", "example1-plain-gamma", "--out", "data"], dir.path());
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    for f in ["data.csv", "sigma.txt", "truth.csv", "config.txt"] {
        assert!(dir.path().join("data").join(f).is_file(), "{f}");
    }
    let b = fs::read_to_string(dir.path().join("data/data.csv")).unwrap();
    assert_eq!(b.lines().count(), 91);
}

#[test]
fn two_dimensional_run_writes_an_image() {
    let dir = tempfile::tempdir().unwrap();
    let out = ias(
        &[
            "run", "--preset", "example3-plain-gamma", "--out", "s",
            "--override", "grid_n=24", "--override", "obs_m=12", "--override", "stars=4",
            "--override", "max_outer=3",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = fs::read(dir.path().join("s/reconstruction.pgm")).unwrap();
    assert!(img.starts_with(b"P5\n"));
    let header_end = img.len() - 2 * 24 * 24;
    assert!(String::from_utf8_lossy(&img[..header_end]).contains("24 24\n65535\n"));
    let bits = fs::read_to_string(dir.path().join("s/convexity.csv")).unwrap();
    assert!(bits.starts_with("t,convex\n"));
    assert!((2..=4).contains(&bits.lines().count()));
}

#[test]
fn matrix_file_problem_recovers_a_sparse_vector() {
    let dir = tempfile::tempdir().unwrap();
    // 8 x 6 well-conditioned matrix, sparse truth, noiseless data
    let a: Vec<Vec<f64>> = (0..8)
        .map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.05 * ((i + 2 * j) % 5) as f64 }).collect())
        .collect();
    let truth = [0.0, 3.0, 0.0, 0.0, -2.0, 0.0];
    let b: Vec<f64> = a.iter().map(|row| row.iter().zip(&truth).map(|(x, y)| x * y).sum()).collect();
    let rows: Vec<String> = a.iter().map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")).collect();
    fs::write(dir.path().join("a.csv"), rows.join("\n")).unwrap();
    fs::write(dir.path().join("b.csv"), b.iter().map(|v| format!("{v:?}\n")).collect::<String>()).unwrap();
    fs::write(dir.path().join("t.csv"), truth.iter().map(|v| format!("{v:?}\n")).collect::<String>()).unwrap();
    fs::write(
        dir.path().join("m.cfg"),
        "problem = matrix-file\nmatrix = a.csv\ndata = b.csv\ntruth = t.csv\nsigma = 0.01\n\
         mode = plain\nmodel1.r = 1\nmodel1.eta = 0.001\nmodel1.vartheta = 0.01\nx_solve = exact\nmax_outer = 100\n",
    )
    .unwrap();
    let out = ias(&["run", "--config", "m.cfg", "--out", "r"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(dir.path().join("r/metrics.csv")).unwrap();
    assert!(metrics.lines().any(|l| l == "support,1 4"), "{metrics}");
}
